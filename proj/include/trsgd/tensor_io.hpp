#pragma once

// Binary persistence for dense tensors and TR decompositions.
//
//   tensor:  "TRT1" | u64 N | N x u64 extents | prod(extents) x f64
//   cores:   "TRC1" | u64 N | N x (u64 R_n, u64 I_n, u64 R_{n+1}, R_n I_n R_{n+1} x f64)
//
// Integers and doubles are little-endian; doubles are IEEE-754 binary64 in
// multi-index order.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tensor.hpp"
#include "tensor_ring.hpp"

namespace trsgd {

struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

inline void put_u64(std::ostream& os, std::uint64_t v) {
    std::array<char, 8> b{};
    for (int i = 0; i < 8; ++i)
        b[i] = char((v >> (8 * i)) & 0xffu);
    os.write(b.data(), 8);
}

inline std::uint64_t get_u64(std::istream& is) {
    std::array<unsigned char, 8> b{};
    if (!is.read(reinterpret_cast<char*>(b.data()), 8))
        throw FormatError("unexpected end of file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
        v |= std::uint64_t(b[i]) << (8 * i);
    return v;
}

inline void put_doubles(std::ostream& os, const std::vector<double>& values) {
    for (double d : values)
        put_u64(os, std::bit_cast<std::uint64_t>(d));
}

inline std::vector<double> get_doubles(std::istream& is, std::uint64_t count) {
    std::vector<double> out;
    out.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i)
        out.push_back(std::bit_cast<double>(get_u64(is)));
    return out;
}

inline void expect_magic(std::istream& is, const char* magic) {
    char m[4];
    if (!is.read(m, 4) || std::memcmp(m, magic, 4) != 0)
        throw FormatError(std::string("bad magic, expected ") + magic);
}

// Guards against absurd headers before allocating.
constexpr std::uint64_t kMaxOrder = 64;
constexpr std::uint64_t kMaxEntries = std::uint64_t(1) << 34;

inline std::uint64_t checked_product(const std::vector<index_t>& dims) {
    std::uint64_t p = 1;
    for (auto d : dims) {
        if (d == 0 || p > kMaxEntries / d)
            throw FormatError("extents are zero or too large");
        p *= d;
    }
    return p;
}

} // namespace detail

inline void write_tensor(std::ostream& os, const DenseTensor& x) {
    os.write("TRT1", 4);
    detail::put_u64(os, x.order());
    for (auto d : x.shape().dims())
        detail::put_u64(os, d);
    detail::put_doubles(os, x.values());
    if (!os)
        throw std::runtime_error("write_tensor: stream error");
}

inline DenseTensor read_tensor(std::istream& is) {
    detail::expect_magic(is, "TRT1");
    const auto order = detail::get_u64(is);
    if (order < 2 || order > detail::kMaxOrder)
        throw FormatError("tensor order " + std::to_string(order) + " not supported");
    std::vector<index_t> dims;
    for (std::uint64_t k = 0; k < order; ++k)
        dims.push_back(index_t(detail::get_u64(is)));
    const auto count = detail::checked_product(dims);
    return DenseTensor(Shape(std::move(dims)), detail::get_doubles(is, count));
}

inline void write_cores(std::ostream& os, const TRDecomposition& dec) {
    os.write("TRC1", 4);
    detail::put_u64(os, dec.order());
    for (const auto& c : dec.cores()) {
        detail::put_u64(os, c.left_rank());
        detail::put_u64(os, c.mode_dim());
        detail::put_u64(os, c.right_rank());
        detail::put_doubles(os, c.values());
    }
    if (!os)
        throw std::runtime_error("write_cores: stream error");
}

inline TRDecomposition read_cores(std::istream& is) {
    detail::expect_magic(is, "TRC1");
    const auto order = detail::get_u64(is);
    if (order < 2 || order > detail::kMaxOrder)
        throw FormatError("decomposition order " + std::to_string(order) + " not supported");
    std::vector<TRCore> cores;
    for (std::uint64_t k = 0; k < order; ++k) {
        std::vector<index_t> d{index_t(detail::get_u64(is)), index_t(detail::get_u64(is)),
                               index_t(detail::get_u64(is))};
        const auto count = detail::checked_product(d);
        cores.emplace_back(d[0], d[1], d[2], detail::get_doubles(is, count));
    }
    return TRDecomposition(std::move(cores));
}

/** Writes to `path` through a temporary sibling and a rename. */
template <class Writer>
void write_file_atomic(const std::filesystem::path& path, Writer&& writer) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os)
            throw std::runtime_error("cannot open " + tmp.string() + " for writing");
        writer(os);
        os.flush();
        if (!os)
            throw std::runtime_error("error writing " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline void save_tensor(const std::filesystem::path& path, const DenseTensor& x) {
    write_file_atomic(path, [&](std::ostream& os) { write_tensor(os, x); });
}

inline DenseTensor load_tensor(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw std::runtime_error("cannot open tensor file " + path.string());
    return read_tensor(is);
}

inline void save_cores(const std::filesystem::path& path, const TRDecomposition& dec) {
    write_file_atomic(path, [&](std::ostream& os) { write_cores(os, dec); });
}

inline TRDecomposition load_cores(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw std::runtime_error("cannot open cores file " + path.string());
    return read_cores(is);
}

} // namespace trsgd
