#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <span>
#include <vector>

#include "protoclr/errors.hpp"

namespace protoclr {

using Vec = std::vector<double>;

// Dense row-major matrix. All internal arithmetic is double; file formats
// narrow to float32 at the I/O boundary.
class Mat {
public:
    Mat() = default;

    Mat(int rows, int cols, double fill = 0.0) : rows_(rows), cols_(cols) {
        require(rows >= 0, Errc::invalid_argument, "Mat rows must be >= 0");
        require(cols >= 1, Errc::invalid_argument, "Mat cols must be >= 1");
        data_.assign(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols), fill);
    }

    static Mat from_rows(std::initializer_list<std::initializer_list<double>> rows) {
        const int n = static_cast<int>(rows.size());
        const int d = n > 0 ? static_cast<int>(rows.begin()->size()) : 1;
        Mat m(n, d);
        int r = 0;
        for (const auto& row : rows) {
            require(static_cast<int>(row.size()) == d, Errc::dim_mismatch, "ragged row list");
            int c = 0;
            for (double v : row) m(r, c++) = v;
            ++r;
        }
        return m;
    }

    int rows() const noexcept { return rows_; }
    int cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }

    double& operator()(int r, int c) { return data_[idx(r, c)]; }
    double operator()(int r, int c) const { return data_[idx(r, c)]; }

    std::span<double> row(int r) { return {data_.data() + idx(r, 0), static_cast<std::size_t>(cols_)}; }
    std::span<const double> row(int r) const {
        return {data_.data() + idx(r, 0), static_cast<std::size_t>(cols_)};
    }

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }

    bool same_shape(const Mat& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    friend bool operator==(const Mat& a, const Mat& b) {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
    }

private:
    std::size_t idx(int r, int c) const {
        return static_cast<std::size_t>(r) * static_cast<std::size_t>(cols_) + static_cast<std::size_t>(c);
    }

    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> data_;
};

// Deterministic 64-bit generator (SplitMix64). Substreams are derived from
// the construction seed, never from the evolving state, so the same
// (seed, index) pair yields the same child sequence regardless of how much
// of the parent stream was consumed.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : seed_(seed), state_(seed) {}

    std::uint64_t seed() const noexcept { return seed_; }

    std::uint64_t next_u64() noexcept {
        state_ += 0x9E3779B97F4A7C15ull;
        return finalize(state_);
    }

    // Uniform in [0, 1), 53-bit mantissa.
    double next_unit() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in {0, ..., n-1}. Fixed-point multiply keeps the mapping
    // platform-independent.
    std::uint64_t next_below(std::uint64_t n) noexcept {
        return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    // Standard normal via Box-Muller; consumes two uniforms per draw.
    double next_normal() noexcept {
        const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; // (0, 1]
        const double u2 = next_unit();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double next_normal(double mean, double sigma) noexcept { return mean + sigma * next_normal(); }

    // child seed = mix(parent seed, stream index)
    RngStream substream(std::uint64_t index) const noexcept {
        return RngStream(finalize(seed_ + (index + 1) * 0x9E3779B97F4A7C15ull));
    }

    template <typename T>
    void shuffle(std::vector<T>& items) noexcept {
        for (std::size_t i = items.size(); i > 1; --i) {
            const std::uint64_t j = next_below(i);
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    static std::uint64_t finalize(std::uint64_t z) noexcept {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    std::uint64_t seed_;
    std::uint64_t state_;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
    require(a.size() == b.size(), Errc::dim_mismatch, "dot: dimension mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double squared_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return s;
}

inline double norm(std::span<const double> v) { return std::sqrt(squared_norm(v)); }

constexpr double kZeroNormTolerance = 1e-30;

inline Vec l2_normalize(const Vec& v) {
    const double n = norm(v);
    require(n > kZeroNormTolerance, Errc::zero_norm, "l2_normalize: vector norm below tolerance");
    Vec out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
    return out;
}

// Rows with zero norm raise ZeroNorm; callers that need per-row policies
// normalize row by row.
inline void l2_normalize_rows(Mat& m) {
    for (int r = 0; r < m.rows(); ++r) {
        auto row = m.row(r);
        const double n = norm(row);
        require(n > kZeroNormTolerance, Errc::zero_norm, "l2_normalize_rows: zero-norm row");
        for (double& x : row) x /= n;
    }
}

// log(sum exp(x)) with max shift; safe for |x| up to ~1e6.
inline double log_sum_exp(std::span<const double> xs) {
    require(!xs.empty(), Errc::empty_input, "log_sum_exp: empty input");
    double m = xs[0];
    for (double x : xs) m = std::max(m, x);
    double s = 0.0;
    for (double x : xs) s += std::exp(x - m);
    return m + std::log(s);
}

inline double log_sum_exp(const Vec& xs) { return log_sum_exp(std::span<const double>(xs)); }

// Similarity logit (a.b)/tau. Exponentiation is deferred to log_sum_exp or
// explicit softmax code so small temperatures cannot overflow here.
inline double scaled_similarity(const Vec& a, const Vec& b, double tau) {
    require(tau > 0.0, Errc::non_positive_temperature, "scaled_similarity: tau must be > 0");
    require(a.size() == b.size(), Errc::dim_mismatch, "scaled_similarity: dimension mismatch");
    return dot(a, b) / tau;
}

} // namespace protoclr
