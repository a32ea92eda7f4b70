#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

namespace trsgd {

/**
 * Counter-based SplitMix64 stream. Streams are derived from a root seed and a
 * pair of keys (e.g. iteration and core), so a draw depends only on its keys
 * and not on the order in which other streams were consumed.
 *
 * Satisfies UniformRandomBitGenerator. Distributions are implemented here
 * instead of with <random> so that runs are bit-identical across standard
 * libraries.
 */
class RandomStream {
public:
    using result_type = std::uint64_t;

    explicit RandomStream(std::uint64_t seed = 0) : state_(mix(seed ^ 0x6a09e667f3bcc909ULL)) {}

    static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /** Independent stream for (seed, key1, key2). */
    static RandomStream derive(std::uint64_t seed, std::uint64_t key1, std::uint64_t key2 = 0) noexcept {
        RandomStream s;
        s.state_ = mix(mix(mix(seed ^ 0x6a09e667f3bcc909ULL) + key1 * kGamma) ^ (key2 + 0x3c6ef372fe94f82bULL));
        return s;
    }

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    result_type operator()() noexcept {
        state_ += kGamma;
        return mix(state_);
    }

    /** Uniform double in [0, 1) with 53 random bits. */
    double uniform() noexcept { return double((*this)() >> 11) * 0x1.0p-53; }

    /** Uniform integer in [0, n). */
    std::uint64_t below(std::uint64_t n) {
        if (n == 0)
            throw std::invalid_argument("RandomStream::below: empty range");
        // Lemire's multiply-shift with rejection.
        auto m = static_cast<unsigned __int128>((*this)()) * n;
        auto low = static_cast<std::uint64_t>(m);
        if (low < n) {
            const std::uint64_t threshold = (0 - n) % n;
            while (low < threshold) {
                m = static_cast<unsigned __int128>((*this)()) * n;
                low = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

    /** Standard normal via Box-Muller. */
    double normal() noexcept {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 0.0)
            u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

private:
    static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;
    std::uint64_t state_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/** Inverse-CDF sampler over a finite set of nonnegative weights. */
class CategoricalSampler {
public:
    explicit CategoricalSampler(std::span<const double> weights) : cdf_(weights.size()) {
        double acc = 0.0;
        for (std::size_t i = 0; i < weights.size(); ++i) {
            if (!(weights[i] >= 0.0) || !std::isfinite(weights[i]))
                throw std::invalid_argument("CategoricalSampler: weights must be finite and nonnegative");
            acc += weights[i];
            cdf_[i] = acc;
            if (weights[i] > 0.0)
                last_positive_ = i;
        }
        if (!(acc > 0.0))
            throw std::invalid_argument("CategoricalSampler: all weights are zero");
    }

    std::size_t operator()(RandomStream& rng) const {
        const double x = rng.uniform() * cdf_.back();
        const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), x);
        const auto i = std::size_t(it - cdf_.begin());
        return std::min(i, last_positive_);
    }

    [[nodiscard]] std::size_t size() const noexcept { return cdf_.size(); }

private:
    std::vector<double> cdf_;
    std::size_t last_positive_ = 0;
};

} // namespace trsgd
