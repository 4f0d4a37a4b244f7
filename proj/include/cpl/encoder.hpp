#pragma once

#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "cpl/error.hpp"
#include "cpl/math.hpp"
#include "cpl/random.hpp"
#include "cpl/serialize.hpp"

namespace cpl {

struct ModelDims {
    std::size_t feature = 256;
    std::size_t hidden = 128;
    std::size_t embed = 64;
    std::size_t head_hidden = 64;

    void validate() const {
        if (feature == 0 || hidden == 0 || embed == 0 || head_hidden == 0)
            throw ConfigError("model dimensions must be positive");
    }
    friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

namespace detail {

// y += W x  (W is rows x cols, row-major)
inline void gemv_add(std::span<const double> w, std::size_t rows, std::size_t cols,
                     std::span<const double> x, std::span<double> y) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = w.data() + r * cols;
        double acc = 0.0;
        for (std::size_t c = 0; c < cols; ++c) acc += row[c] * x[c];
        y[r] += acc;
    }
}

// x_grad += W^T y_grad
inline void gemv_t_add(std::span<const double> w, std::size_t rows, std::size_t cols,
                       std::span<const double> y_grad, std::span<double> x_grad) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = w.data() + r * cols;
        const double g = y_grad[r];
        if (g == 0.0) continue;
        for (std::size_t c = 0; c < cols; ++c) x_grad[c] += row[c] * g;
    }
}

// W_grad += y_grad x^T
inline void outer_add(std::span<const double> y_grad, std::span<const double> x,
                      std::span<double> w_grad) {
    const std::size_t cols = x.size();
    for (std::size_t r = 0; r < y_grad.size(); ++r) {
        const double g = y_grad[r];
        if (g == 0.0) continue;
        double* row = w_grad.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) row[c] += g * x[c];
    }
}

inline void fill_uniform(Rng& rng, std::span<double> w, std::size_t fan_in, std::size_t fan_out) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (double& v : w) v = rng.uniform(-a, a);
}

} // namespace detail

// Two dense layers, tanh in between, L2-normalized output:
//   e = normalize(W2 tanh(W1 x + b1) + b2)
// Parameters live in one flat buffer (W1, b1, W2, b2) so the optimizer can
// treat them uniformly. Any mutable access bumps version(), which invalidates
// forward caches.
class EncoderParams {
public:
    EncoderParams(std::size_t feature, std::size_t hidden, std::size_t embed)
        : feature_(feature), hidden_(hidden), embed_(embed),
          data_(hidden * feature + hidden + embed * hidden + embed, 0.0) {}

    std::size_t feature_dim() const noexcept { return feature_; }
    std::size_t hidden_dim() const noexcept { return hidden_; }
    std::size_t embed_dim() const noexcept { return embed_; }
    std::uint64_t version() const noexcept { return version_; }

    std::span<const double> data() const noexcept { return data_; }
    std::span<double> mutable_data() noexcept {
        ++version_;
        return data_;
    }

    std::span<const double> w1() const noexcept { return {data_.data(), hidden_ * feature_}; }
    std::span<const double> b1() const noexcept { return {data_.data() + off_b1(), hidden_}; }
    std::span<const double> w2() const noexcept { return {data_.data() + off_w2(), embed_ * hidden_}; }
    std::span<const double> b2() const noexcept { return {data_.data() + off_b2(), embed_}; }

    std::size_t off_b1() const noexcept { return hidden_ * feature_; }
    std::size_t off_w2() const noexcept { return off_b1() + hidden_; }
    std::size_t off_b2() const noexcept { return off_w2() + embed_ * hidden_; }

    friend bool operator==(const EncoderParams& a, const EncoderParams& b) {
        return a.feature_ == b.feature_ && a.hidden_ == b.hidden_ && a.embed_ == b.embed_ &&
               a.data_ == b.data_;
    }

private:
    std::size_t feature_, hidden_, embed_;
    std::vector<double> data_;
    std::uint64_t version_ = 0;
};

// Pair head over [o | s | |o-s| | o*s]: tanh hidden layer, then 2 logits
// (index 0 = non-equivalent, index 1 = equivalent).
class PairClassifierParams {
public:
    PairClassifierParams(std::size_t embed, std::size_t hidden)
        : embed_(embed), hidden_(hidden), data_(hidden * 4 * embed + hidden + 2 * hidden + 2, 0.0) {}

    std::size_t embed_dim() const noexcept { return embed_; }
    std::size_t input_dim() const noexcept { return 4 * embed_; }
    std::size_t hidden_dim() const noexcept { return hidden_; }
    std::uint64_t version() const noexcept { return version_; }

    std::span<const double> data() const noexcept { return data_; }
    std::span<double> mutable_data() noexcept {
        ++version_;
        return data_;
    }

    std::span<const double> w3() const noexcept { return {data_.data(), hidden_ * input_dim()}; }
    std::span<const double> b3() const noexcept { return {data_.data() + off_b3(), hidden_}; }
    std::span<const double> w4() const noexcept { return {data_.data() + off_w4(), 2 * hidden_}; }
    std::span<const double> b4() const noexcept { return {data_.data() + off_b4(), 2}; }

    std::size_t off_b3() const noexcept { return hidden_ * input_dim(); }
    std::size_t off_w4() const noexcept { return off_b3() + hidden_; }
    std::size_t off_b4() const noexcept { return off_w4() + 2 * hidden_; }

    friend bool operator==(const PairClassifierParams& a, const PairClassifierParams& b) {
        return a.embed_ == b.embed_ && a.hidden_ == b.hidden_ && a.data_ == b.data_;
    }

private:
    std::size_t embed_, hidden_;
    std::vector<double> data_;
    std::uint64_t version_ = 0;
};

struct Model {
    ModelDims dims;
    std::uint64_t seed = 0;
    EncoderParams encoder;
    PairClassifierParams head;

    friend bool operator==(const Model&, const Model&) = default;
};

// Reproducible uniform (Glorot) initialization; biases start at zero.
inline Model init_model(std::uint64_t seed, const ModelDims& dims = {}) {
    dims.validate();
    Model m{dims, seed, EncoderParams(dims.feature, dims.hidden, dims.embed),
            PairClassifierParams(dims.embed, dims.head_hidden)};
    Rng rng(mix_seed(seed, 0x656e63));
    {
        auto p = m.encoder.mutable_data();
        detail::fill_uniform(rng, p.subspan(0, dims.hidden * dims.feature), dims.feature, dims.hidden);
        detail::fill_uniform(rng, p.subspan(m.encoder.off_w2(), dims.embed * dims.hidden), dims.hidden,
                             dims.embed);
    }
    {
        auto p = m.head.mutable_data();
        const std::size_t in = m.head.input_dim();
        detail::fill_uniform(rng, p.subspan(0, dims.head_hidden * in), in, dims.head_hidden);
        detail::fill_uniform(rng, p.subspan(m.head.off_w4(), 2 * dims.head_hidden), dims.head_hidden, 2);
    }
    return m;
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

struct EncoderCache {
    std::uint64_t version;
    std::vector<double> input;
    std::vector<double> hidden;   // tanh activations
    std::vector<double> output;   // unit-norm embedding
    double pre_norm;              // ||W2 h + b2||
};

inline EncoderCache encode_cached(const EncoderParams& p, std::span<const double> features) {
    if (features.size() != p.feature_dim())
        throw DimensionError("encoder expects " + std::to_string(p.feature_dim()) +
                             " features, got " + std::to_string(features.size()));
    EncoderCache c{p.version(), {features.begin(), features.end()}, {}, {}, 0.0};
    c.hidden.assign(p.b1().begin(), p.b1().end());
    detail::gemv_add(p.w1(), p.hidden_dim(), p.feature_dim(), features, c.hidden);
    for (double& h : c.hidden) h = std::tanh(h);
    std::vector<double> z(p.b2().begin(), p.b2().end());
    detail::gemv_add(p.w2(), p.embed_dim(), p.hidden_dim(), c.hidden, z);
    c.pre_norm = norm(z);
    if (!std::isfinite(c.pre_norm)) throw NumericError("encoder produced a non-finite embedding");
    if (c.pre_norm == 0.0) throw DegenerateVectorError("encoder produced a zero embedding");
    for (double& v : z) v /= c.pre_norm;
    c.output = std::move(z);
    return c;
}

inline Vector encode(const EncoderParams& p, const Vector& features) {
    return Vector(encode_cached(p, features.span()).output);
}

// Vector-Jacobian product of y = x / ||x||:  (g - y (y.g)) / ||x||.
inline std::vector<double> normalize_backward(std::span<const double> y, double pre_norm,
                                              std::span<const double> grad_y) {
    const double yg = dot(y, grad_y);
    std::vector<double> gx(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) gx[i] = (grad_y[i] - y[i] * yg) / pre_norm;
    return gx;
}

// Accumulates parameter gradients into param_grad (same flat layout as
// p.data()) and returns the gradient with respect to the input features.
inline std::vector<double> encoder_backward(const EncoderParams& p, const EncoderCache& c,
                                            std::span<const double> grad_output,
                                            std::span<double> param_grad) {
    if (c.version != p.version()) throw StateError("encoder cache is stale");
    if (grad_output.size() != p.embed_dim() || param_grad.size() != p.data().size())
        throw DimensionError("encoder backward: gradient shape mismatch");

    const auto gz = normalize_backward(c.output, c.pre_norm, grad_output);
    auto w2g = param_grad.subspan(p.off_w2(), p.embed_dim() * p.hidden_dim());
    auto b2g = param_grad.subspan(p.off_b2(), p.embed_dim());
    detail::outer_add(gz, c.hidden, w2g);
    for (std::size_t i = 0; i < gz.size(); ++i) b2g[i] += gz[i];

    std::vector<double> ga(p.hidden_dim(), 0.0);
    detail::gemv_t_add(p.w2(), p.embed_dim(), p.hidden_dim(), gz, ga);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= 1.0 - c.hidden[i] * c.hidden[i];

    auto w1g = param_grad.subspan(0, p.hidden_dim() * p.feature_dim());
    auto b1g = param_grad.subspan(p.off_b1(), p.hidden_dim());
    detail::outer_add(ga, c.input, w1g);
    for (std::size_t i = 0; i < ga.size(); ++i) b1g[i] += ga[i];

    std::vector<double> gx(p.feature_dim(), 0.0);
    detail::gemv_t_add(p.w1(), p.hidden_dim(), p.feature_dim(), ga, gx);
    return gx;
}

inline std::vector<double> pair_features(std::span<const double> o, std::span<const double> s) {
    if (o.size() != s.size()) throw DimensionError("pair features: dimension mismatch");
    const std::size_t e = o.size();
    std::vector<double> f(4 * e);
    for (std::size_t i = 0; i < e; ++i) {
        f[i] = o[i];
        f[e + i] = s[i];
        f[2 * e + i] = std::abs(o[i] - s[i]);
        f[3 * e + i] = o[i] * s[i];
    }
    return f;
}

struct HeadCache {
    std::uint64_t version;
    std::vector<double> origin;
    std::vector<double> mutant;
    std::vector<double> features;
    std::vector<double> hidden;
    std::vector<double> logits;
};

inline HeadCache classify_pair_cached(const PairClassifierParams& p, std::span<const double> o,
                                      std::span<const double> s) {
    if (o.size() != p.embed_dim() || s.size() != p.embed_dim())
        throw DimensionError("pair classifier expects embeddings of dim " +
                             std::to_string(p.embed_dim()));
    HeadCache c{p.version(), {o.begin(), o.end()}, {s.begin(), s.end()}, pair_features(o, s), {}, {}};
    c.hidden.assign(p.b3().begin(), p.b3().end());
    detail::gemv_add(p.w3(), p.hidden_dim(), p.input_dim(), c.features, c.hidden);
    for (double& h : c.hidden) h = std::tanh(h);
    c.logits.assign(p.b4().begin(), p.b4().end());
    detail::gemv_add(p.w4(), 2, p.hidden_dim(), c.hidden, c.logits);
    if (!std::isfinite(c.logits[0]) || !std::isfinite(c.logits[1]))
        throw NumericError("pair classifier produced non-finite logits");
    return c;
}

inline std::vector<double> classify_pair(const PairClassifierParams& p, const Vector& o,
                                         const Vector& s) {
    return classify_pair_cached(p, o.span(), s.span()).logits;
}

struct PairGrad {
    std::vector<double> origin;
    std::vector<double> mutant;
};

inline PairGrad head_backward(const PairClassifierParams& p, const HeadCache& c,
                              std::span<const double> grad_logits, std::span<double> param_grad) {
    if (c.version != p.version()) throw StateError("classifier cache is stale");
    if (grad_logits.size() != 2 || param_grad.size() != p.data().size())
        throw DimensionError("classifier backward: gradient shape mismatch");

    auto w4g = param_grad.subspan(p.off_w4(), 2 * p.hidden_dim());
    auto b4g = param_grad.subspan(p.off_b4(), 2);
    detail::outer_add(grad_logits, c.hidden, w4g);
    b4g[0] += grad_logits[0];
    b4g[1] += grad_logits[1];

    std::vector<double> ga(p.hidden_dim(), 0.0);
    detail::gemv_t_add(p.w4(), 2, p.hidden_dim(), grad_logits, ga);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= 1.0 - c.hidden[i] * c.hidden[i];

    auto w3g = param_grad.subspan(0, p.hidden_dim() * p.input_dim());
    auto b3g = param_grad.subspan(p.off_b3(), p.hidden_dim());
    detail::outer_add(ga, c.features, w3g);
    for (std::size_t i = 0; i < ga.size(); ++i) b3g[i] += ga[i];

    std::vector<double> gf(p.input_dim(), 0.0);
    detail::gemv_t_add(p.w3(), p.hidden_dim(), p.input_dim(), ga, gf);

    const std::size_t e = p.embed_dim();
    PairGrad g{std::vector<double>(e), std::vector<double>(e)};
    for (std::size_t i = 0; i < e; ++i) {
        const double diff = c.origin[i] - c.mutant[i];
        const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
        g.origin[i] = gf[i] + sign * gf[2 * e + i] + c.mutant[i] * gf[3 * e + i];
        g.mutant[i] = gf[e + i] - sign * gf[2 * e + i] + c.origin[i] * gf[3 * e + i];
    }
    return g;
}

// ---------------------------------------------------------------------------
// Checkpoint segment
// ---------------------------------------------------------------------------

inline void write_model(std::ostream& out, const Model& m) {
    out << "model 1\n";
    out << "dims " << m.dims.feature << ' ' << m.dims.hidden << ' ' << m.dims.embed << ' '
        << m.dims.head_hidden << "\n";
    out << "seed " << m.seed << "\n";
    auto dump = [&](const char* tag, std::span<const double> d) {
        out << tag << ' ' << d.size();
        for (double v : d) out << ' ' << io::hex(v);
        out << '\n';
    };
    dump("encoder", m.encoder.data());
    dump("head", m.head.data());
}

inline Model read_model(std::istream& in) {
    std::string tag;
    int version = 0;
    if (!(in >> tag >> version) || tag != "model") throw DeserializeError("model segment: bad header");
    if (version != 1) throw VersionError("model segment: unsupported version " + std::to_string(version));
    ModelDims dims;
    if (!(in >> tag >> dims.feature >> dims.hidden >> dims.embed >> dims.head_hidden) || tag != "dims")
        throw DeserializeError("model segment: bad dims");
    std::uint64_t seed = 0;
    if (!(in >> tag >> seed) || tag != "seed") throw DeserializeError("model segment: bad seed");
    try {
        dims.validate();
    } catch (const ConfigError& e) {
        throw DeserializeError(std::string("model segment: ") + e.what());
    }
    Model m{dims, seed, EncoderParams(dims.feature, dims.hidden, dims.embed),
            PairClassifierParams(dims.embed, dims.head_hidden)};
    auto load = [&](const char* want, std::span<double> dst) {
        std::string t;
        std::size_t n = 0;
        if (!(in >> t >> n) || t != want || n != dst.size())
            throw DeserializeError(std::string("model segment: bad ") + want + " block");
        for (double& v : dst) {
            std::string s;
            if (!(in >> s)) throw DeserializeError("model segment: truncated");
            v = io::parse_double(s);
            if (!std::isfinite(v)) throw DeserializeError("model segment: non-finite parameter");
        }
    };
    load("encoder", m.encoder.mutable_data());
    load("head", m.head.mutable_data());
    return m;
}

} // namespace cpl
