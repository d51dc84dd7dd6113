#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsidx/series.hpp"

namespace tsidx {

/// Dataset files are little-endian float32 payloads, `n` consecutive
/// values per series with no delimiters, preceded by a 16-byte header:
/// 4-byte magic, version u32, series length u32, series count u32.  The
/// header makes files self-describing so a wrong `--n` fails loudly
/// instead of silently reslicing the data; `read_raw_dataset` ingests the
/// common headerless layout for externally produced files.
inline constexpr std::array<char, 4> kDatasetMagic{'T', 'S', 'I', 'X'};
inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr std::size_t kDatasetHeaderBytes = 16;

static_assert(std::endian::native == std::endian::little,
              "dataset I/O writes raw float32 buffers and assumes a little-endian host");

namespace detail {

inline void put_u32(std::ofstream& out, std::uint32_t v) {
    const char b[4] = {char(v & 0xFF), char((v >> 8) & 0xFF), char((v >> 16) & 0xFF),
                       char((v >> 24) & 0xFF)};
    out.write(b, 4);
}

inline std::uint32_t get_u32(std::ifstream& in, const std::string& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw std::runtime_error(path + ": truncated header");
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
           (std::uint32_t(b[3]) << 24);
}

inline std::vector<float> read_payload(std::ifstream& in, const std::string& path,
                                       std::size_t values) {
    std::vector<float> out(values);
    if (!in.read(reinterpret_cast<char*>(out.data()), std::streamsize(values * sizeof(float))))
        throw std::runtime_error(path + ": truncated payload");
    in.peek();
    if (!in.eof()) throw std::runtime_error(path + ": trailing bytes after the payload");
    return out;
}

}  // namespace detail

/// Writes `values` (count·n floats) under the 16-byte header.
inline void write_dataset(const std::string& path, std::uint32_t n,
                          std::span<const float> values) {
    if (n == 0 || values.size() % n != 0)
        throw std::invalid_argument("write_dataset: value count is not a multiple of n");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    out.write(kDatasetMagic.data(), kDatasetMagic.size());
    detail::put_u32(out, kDatasetVersion);
    detail::put_u32(out, n);
    detail::put_u32(out, std::uint32_t(values.size() / n));
    out.write(reinterpret_cast<const char*>(values.data()),
              std::streamsize(values.size() * sizeof(float)));
    if (!out) throw std::runtime_error(path + ": write failed");
}

/// Reads a headered dataset file; the header must match the format and the
/// payload its advertised size exactly.
inline SeriesStore read_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(path + ": cannot open");
    std::array<char, 4> magic{};
    if (!in.read(magic.data(), magic.size()) || magic != kDatasetMagic)
        throw std::runtime_error(path + ": not a dataset file (bad magic)");
    const std::uint32_t version = detail::get_u32(in, path);
    if (version != kDatasetVersion)
        throw std::runtime_error(path + ": unsupported version " + std::to_string(version));
    const std::uint32_t n = detail::get_u32(in, path);
    const std::uint32_t count = detail::get_u32(in, path);
    if (n == 0) throw std::runtime_error(path + ": header declares n = 0");
    return SeriesStore(n, detail::read_payload(in, path, std::size_t(n) * count));
}

/// Reads a headerless float32 file as `count = size / (4n)` series; the
/// file size must be an exact multiple of one series.
inline SeriesStore read_raw_dataset(const std::string& path, std::uint32_t n) {
    if (n == 0) throw std::invalid_argument("read_raw_dataset: n must be positive");
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw std::runtime_error(path + ": cannot open");
    const auto bytes = std::size_t(in.tellg());
    const std::size_t series_bytes = std::size_t(n) * sizeof(float);
    if (bytes == 0 || bytes % series_bytes != 0)
        throw std::runtime_error(path + ": size is not a multiple of one series (" +
                                 std::to_string(series_bytes) + " bytes)");
    in.seekg(0);
    return SeriesStore(n, detail::read_payload(in, path, bytes / sizeof(float)));
}

/// Deterministic standard-normal stream: one mt19937_64 engine plus the
/// basic Box-Muller transform, spelled out here because the distribution
/// classes in <random> are implementation-defined and would break the
/// fixed-seed reproducibility of generated files.
///
/// Each engine draw becomes a 53-bit uniform; u1 is shifted into (0, 1] so
/// the log is finite, and each transform yields two variates.
class GaussianSource {
  public:
    explicit GaussianSource(std::uint64_t seed) : rng_(seed) {}

    double next() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = double((rng_() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
        const double u2 = double(rng_() >> 11) * 0x1.0p-53;        // [0, 1)
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    std::uint64_t raw() { return rng_(); }

  private:
    std::mt19937_64 rng_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

namespace detail {

/// In-place z-normalization (mean 0, population stdev 1) of one series,
/// accumulated in double.  A flat series stays at zero rather than divide
/// by a vanishing spread.
inline void znormalize(std::span<float> series) {
    double sum = 0.0, sq = 0.0;
    for (float v : series) {
        sum += v;
        sq += double(v) * double(v);
    }
    const double inv = 1.0 / double(series.size());
    const double mean = sum * inv;
    const double var = std::max(0.0, sq * inv - mean * mean);
    const double stdev = std::sqrt(var);
    if (stdev < 1e-12) {
        for (float& v : series) v = 0.0f;
        return;
    }
    for (float& v : series) v = float((double(v) - mean) / stdev);
}

}  // namespace detail

/// `count` z-normalized random walks of length `n`: each series is the
/// cumulative sum of i.i.d. N(0,1) steps, normalized per series.  A single
/// generator stream serves all series, so the whole collection is a pure
/// function of the seed.
inline std::vector<float> make_random_walks(std::uint32_t count, std::uint32_t n,
                                            std::uint64_t seed) {
    if (count == 0 || n == 0)
        throw std::invalid_argument("make_random_walks: count and n must be positive");
    GaussianSource g(seed);
    std::vector<float> values(std::size_t(count) * n);
    for (std::uint32_t i = 0; i < count; ++i) {
        std::span<float> s(values.data() + std::size_t(i) * n, n);
        double walk = 0.0;
        for (std::uint32_t j = 0; j < n; ++j) {
            walk += g.next();
            s[j] = float(walk);
        }
        detail::znormalize(s);
    }
    return values;
}

/// `count` queries derived from `store`: each picks a source series
/// uniformly at random, perturbs every point with N(0, sigma^2) noise and
/// re-normalizes.  sigma = 0 keeps the copies bit-exact (their 1-NN
/// distance is zero), larger sigmas make the workload progressively harder.
inline std::vector<float> make_noisy_queries(const SeriesStore& store, std::uint32_t count,
                                             double sigma, std::uint64_t seed) {
    if (store.count() == 0)
        throw std::invalid_argument("make_noisy_queries: the dataset is empty");
    if (!(sigma >= 0.0 && sigma <= 1.0))
        throw std::invalid_argument("make_noisy_queries: sigma must be in [0, 1]");
    GaussianSource g(seed);
    const std::uint32_t n = store.n();
    std::vector<float> values(std::size_t(count) * n);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto src = store.series(std::uint32_t(g.raw() % store.count()));
        std::span<float> q(values.data() + std::size_t(i) * n, n);
        if (sigma == 0.0) {
            std::copy(src.begin(), src.end(), q.begin());
            continue;
        }
        for (std::uint32_t j = 0; j < n; ++j) q[j] = float(double(src[j]) + sigma * g.next());
        detail::znormalize(q);
    }
    return values;
}

}  // namespace tsidx
