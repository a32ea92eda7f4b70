#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>

#include "tensor.hpp"
#include "tensor_ring.hpp"

namespace trsgd {

/// ||est - truth||_F / ||truth||_F
inline double rse(const DenseTensor& est, const DenseTensor& truth) {
    if (est.shape() != truth.shape())
        throw std::invalid_argument("rse: shapes differ");
    const double denom = frobenius_norm(truth);
    if (denom == 0.0)
        throw std::domain_error("rse: reference tensor is zero");
    double num = 0.0;
    for (index_t i = 0; i < est.size(); ++i) {
        const double d = est[i] - truth[i];
        num += d * d;
    }
    return std::sqrt(num) / denom;
}

inline double rse(const TRDecomposition& est, const DenseTensor& truth) {
    return rse(tr_reconstruct(est), truth);
}

/**
 * MSE as used for the image experiments: the unsquared Frobenius norm of the
 * error divided by the number of entries.
 */
inline double mse_unsquared(const DenseTensor& est, const DenseTensor& truth) {
    if (est.shape() != truth.shape())
        throw std::invalid_argument("mse: shapes differ");
    double num = 0.0;
    for (index_t i = 0; i < est.size(); ++i) {
        const double d = est[i] - truth[i];
        num += d * d;
    }
    return std::sqrt(num) / double(truth.size());
}

/** 10 log10(255^2 / MSE) in dB; +infinity when MSE is zero. */
inline double psnr_from_mse(double mse) {
    if (mse == 0.0)
        return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(255.0 * 255.0 / mse);
}

inline double psnr(const DenseTensor& est, const DenseTensor& truth) {
    return psnr_from_mse(mse_unsquared(est, truth));
}

inline double psnr(const TRDecomposition& est, const DenseTensor& truth) {
    return psnr(tr_reconstruct(est), truth);
}

} // namespace trsgd
