#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "cpl/error.hpp"

namespace cpl {

// Dense, finite, non-empty vector of doubles.
class Vector {
public:
    Vector() = delete;

    explicit Vector(std::vector<double> values) : values_(std::move(values)) { validate(); }
    Vector(std::initializer_list<double> values) : values_(values) { validate(); }

    std::size_t dim() const noexcept { return values_.size(); }
    double operator[](std::size_t i) const noexcept { return values_[i]; }
    std::span<const double> span() const noexcept { return values_; }
    const std::vector<double>& values() const noexcept { return values_; }

    friend bool operator==(const Vector&, const Vector&) = default;

private:
    void validate() const {
        if (values_.empty()) throw DimensionError("vector must have dim > 0");
        for (double v : values_)
            if (!std::isfinite(v)) throw NumericError("vector component is not finite");
    }

    std::vector<double> values_;
};

inline double dot(std::span<const double> a, std::span<const double> b) noexcept {
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

inline double norm(std::span<const double> a) noexcept { return std::sqrt(dot(a, a)); }

inline std::vector<double> normalized(std::span<const double> a) {
    const double n = norm(a);
    if (n == 0.0) throw DegenerateVectorError("cannot normalize a zero vector");
    std::vector<double> out(a.begin(), a.end());
    for (double& v : out) v /= n;
    return out;
}

inline bool is_unit(std::span<const double> a, double tol = 1e-6) noexcept {
    return std::abs(norm(a) - 1.0) <= tol;
}

namespace detail {

inline void check_pair(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw DimensionError("dimension mismatch: " + std::to_string(a.size()) + " vs " +
                             std::to_string(b.size()));
    if (a.empty()) throw DimensionError("vectors must have dim > 0");
}

} // namespace detail

/// Normalized cosine distance 1 - (cossim + 1) / 2, in [0, 1]. Zero at collinearity.
inline double cosine_distance(std::span<const double> a, std::span<const double> b) {
    detail::check_pair(a, b);
    const double na = norm(a);
    const double nb = norm(b);
    if (na == 0.0 || nb == 0.0) throw DegenerateVectorError("cosine distance of a zero vector");
    const double cos = std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
    return std::clamp(1.0 - (cos + 1.0) / 2.0, 0.0, 1.0);
}

inline double cosine_distance(const Vector& a, const Vector& b) {
    return cosine_distance(a.span(), b.span());
}

struct DistanceGradient {
    double value;
    std::vector<double> d_a;
    std::vector<double> d_b;
};

// Value and gradient of cosine_distance with respect to both arguments.
// Valid for arbitrary (non-zero) norms; for unit inputs each gradient is
// orthogonal to its own argument.
inline DistanceGradient cosine_distance_grad(std::span<const double> a, std::span<const double> b) {
    detail::check_pair(a, b);
    const double na = norm(a);
    const double nb = norm(b);
    if (na == 0.0 || nb == 0.0) throw DegenerateVectorError("cosine distance of a zero vector");
    const double cos_raw = dot(a, b) / (na * nb);
    const double cos = std::clamp(cos_raw, -1.0, 1.0);

    DistanceGradient g{std::clamp(1.0 - (cos + 1.0) / 2.0, 0.0, 1.0),
                       std::vector<double>(a.size()), std::vector<double>(a.size())};
    // d(dist)/d(cos) = -1/2
    for (std::size_t i = 0; i < a.size(); ++i) {
        g.d_a[i] = -0.5 * (b[i] / (na * nb) - cos_raw * a[i] / (na * na));
        g.d_b[i] = -0.5 * (a[i] / (na * nb) - cos_raw * b[i] / (nb * nb));
    }
    return g;
}

// ---------------------------------------------------------------------------
// Exponential moving average with smoothing factor gamma, step s = 2/(gamma+1).
// ---------------------------------------------------------------------------
class EmaParams {
public:
    explicit EmaParams(double gamma) : gamma_(gamma) {
        if (!std::isfinite(gamma) || gamma <= 0.0)
            throw NumericError("EMA smoothing factor must be finite and > 0");
        const double s = step();
        if (!(s > 0.0 && s <= 1.0))
            throw NumericError("EMA step 2/(gamma+1) must lie in (0, 1]; got gamma=" +
                               std::to_string(gamma));
    }

    double gamma() const noexcept { return gamma_; }
    double step() const noexcept { return 2.0 / (gamma_ + 1.0); }

    friend bool operator==(const EmaParams&, const EmaParams&) = default;

private:
    double gamma_;
};

inline double ema_step(double current, double x, const EmaParams& params) {
    if (!std::isfinite(current) || !std::isfinite(x)) throw NumericError("ema_step: non-finite input");
    const double s = params.step();
    return current * (1.0 - s) + x * s;
}

// Closed form of folding ema_step over xs in order:
//   current*(1-s)^h + s * sum_j x_j*(1-s)^(h-j)
// Evaluated Horner-style from the newest observation backwards.
inline double ema_batch(double current, std::span<const double> xs, const EmaParams& params) {
    if (xs.empty()) throw EmptyBatchError("ema_batch: empty observation tuple");
    if (!std::isfinite(current)) throw NumericError("ema_batch: non-finite current value");
    const double s = params.step();
    const double keep = 1.0 - s;
    double weight = 1.0;  // (1-s)^(h-j)
    double acc = 0.0;
    for (std::size_t j = xs.size(); j-- > 0;) {
        if (!std::isfinite(xs[j])) throw NumericError("ema_batch: non-finite observation");
        acc += xs[j] * weight;
        weight *= keep;
    }
    return current * weight + s * acc;
}

/// Central-difference gradient (f(x + h e_i) - f(x - h e_i)) / 2h.
template <class F>
std::vector<double> finite_difference_gradient(F&& f, std::span<const double> at, double step) {
    if (!(step > 0.0)) throw NumericError("finite difference step must be > 0");
    std::vector<double> x(at.begin(), at.end());
    std::vector<double> grad(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + step;
        const double fp = f(std::span<const double>(x));
        x[i] = orig - step;
        const double fm = f(std::span<const double>(x));
        x[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw NumericError("finite difference: non-finite function value");
        grad[i] = (fp - fm) / (2.0 * step);
    }
    return grad;
}

} // namespace cpl
