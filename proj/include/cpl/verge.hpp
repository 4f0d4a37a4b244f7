#pragma once

#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "cpl/error.hpp"
#include "cpl/math.hpp"
#include "cpl/sample.hpp"
#include "cpl/serialize.hpp"

namespace cpl {

// Per-class EMA boundaries. plus tracks origin distances of equivalent
// mutants, minus those of non-equivalent ones. An empty optional means the
// verge has never been observed; it is never encoded as 0.
struct VergeState {
    std::optional<double> plus;
    std::optional<double> minus;

    friend bool operator==(const VergeState&, const VergeState&) = default;
};

// How the first observation of a verge is treated.
//   literal:       v <- d0, then the batch update runs over the whole tuple
//                  (d0 is counted twice).
//   exclude_first: v <- d0, then the batch update runs over the remainder.
enum class VergeInit { literal, exclude_first };

inline const char* to_string(VergeInit mode) {
    return mode == VergeInit::literal ? "literal" : "exclude_first";
}

inline VergeInit parse_verge_init(std::string_view s) {
    if (s == "literal") return VergeInit::literal;
    if (s == "exclude_first") return VergeInit::exclude_first;
    throw ConfigError("unknown verge init mode '" + std::string(s) + "'");
}

class VergeRegistry {
public:
    static constexpr double kRangeTolerance = 1e-9;

    explicit VergeRegistry(EmaParams params, VergeInit init = VergeInit::literal)
        : params_(params), init_(init) {}

    const EmaParams& params() const noexcept { return params_; }
    VergeInit init_mode() const noexcept { return init_; }
    std::size_t size() const noexcept { return states_.size(); }
    bool empty() const noexcept { return states_.empty(); }
    const std::map<ClassId, VergeState>& states() const noexcept { return states_; }

    // nullopt if the class was never observed.
    std::optional<VergeState> find(ClassId k) const {
        auto it = states_.find(k);
        if (it == states_.end()) return std::nullopt;
        return it->second;
    }

    // Sets a verge directly. Used to inject frozen values.
    void set(ClassId k, VergeState state) { states_[k] = state; }

    const VergeState& update_class(ClassId k, std::span<const double> pos,
                                   std::span<const double> neg) {
        auto p = checked(pos);
        auto n = checked(neg);
        VergeState& st = states_[k];
        apply(st.plus, p);
        apply(st.minus, n);
        return st;
    }

    // Groups the batch by class (in first-appearance order for the tuples,
    // which keeps the stable batch order within a class), computes
    // origin-mutant distances, and updates each touched class.
    std::set<ClassId> batch_update(std::span<const EmbeddedSample> batch) {
        if (batch.empty()) throw EmptyBatchError("verge batch update on an empty batch");
        std::vector<double> dist(batch.size());
        for (std::size_t i = 0; i < batch.size(); ++i)
            dist[i] = cosine_distance(batch[i].origin, batch[i].mutant);
        return batch_update(batch, dist);
    }

    // Same as above with distances already computed (dist[i] belongs to batch[i]).
    std::set<ClassId> batch_update(std::span<const EmbeddedSample> batch,
                                   std::span<const double> dist) {
        if (batch.empty()) throw EmptyBatchError("verge batch update on an empty batch");
        if (dist.size() != batch.size()) throw DimensionError("distance count != batch size");
        std::set<ClassId> classes;
        for (const auto& s : batch) classes.insert(s.class_id);
        for (ClassId c : classes) {
            std::vector<double> pos, neg;
            for (std::size_t i = 0; i < batch.size(); ++i) {
                if (batch[i].class_id != c) continue;
                (batch[i].label == 1 ? pos : neg).push_back(dist[i]);
            }
            update_class(c, pos, neg);
        }
        return classes;
    }

    // Line-oriented text, hex-float values:
    //   cpl-verges 1
    //   gamma <hex> init <mode>
    //   classes <n>
    //   <class_id> <plus|-> <minus|->     (n lines, ascending class id)
    std::string snapshot() const {
        std::ostringstream out;
        out << "cpl-verges 1\n";
        out << "gamma " << io::hex(params_.gamma()) << " init " << to_string(init_) << "\n";
        out << "classes " << states_.size() << "\n";
        for (const auto& [k, st] : states_) {
            out << k << ' ' << (st.plus ? io::hex(*st.plus) : "-") << ' '
                << (st.minus ? io::hex(*st.minus) : "-") << '\n';
        }
        return out.str();
    }

    static VergeRegistry restore(const std::string& bytes) {
        std::istringstream in(bytes);
        std::string tag, gamma_key, gamma_text, init_key, init_text, classes_key;
        int version = 0;
        std::size_t n = 0;
        if (!(in >> tag >> version) || tag != "cpl-verges")
            throw DeserializeError("verge snapshot: bad header");
        if (version != 1) throw DeserializeError("verge snapshot: unsupported version");
        if (!(in >> gamma_key >> gamma_text >> init_key >> init_text) || gamma_key != "gamma" ||
            init_key != "init")
            throw DeserializeError("verge snapshot: bad parameter line");
        if (!(in >> classes_key >> n) || classes_key != "classes")
            throw DeserializeError("verge snapshot: bad class count");

        VergeRegistry reg = [&] {
            try {
                return VergeRegistry(EmaParams(io::parse_double(gamma_text)),
                                     parse_verge_init(init_text));
            } catch (const DeserializeError&) {
                throw;
            } catch (const Error& e) {
                throw DeserializeError(std::string("verge snapshot: ") + e.what());
            }
        }();
        for (std::size_t i = 0; i < n; ++i) {
            std::string id, plus, minus;
            if (!(in >> id >> plus >> minus)) throw DeserializeError("verge snapshot: truncated");
            const ClassId k = io::parse_int(id);
            if (reg.states_.contains(k)) throw DeserializeError("verge snapshot: duplicate class");
            VergeState st;
            if (plus != "-") st.plus = read_verge(plus);
            if (minus != "-") st.minus = read_verge(minus);
            reg.states_[k] = st;
        }
        std::string extra;
        if (in >> extra) throw DeserializeError("verge snapshot: trailing data");
        return reg;
    }

    friend bool operator==(const VergeRegistry& a, const VergeRegistry& b) {
        return a.params_ == b.params_ && a.init_ == b.init_ && a.states_ == b.states_;
    }

private:
    static double read_verge(const std::string& text) {
        const double v = io::parse_double(text);
        if (!(v >= 0.0 && v <= 1.0)) throw DeserializeError("verge snapshot: value outside [0,1]");
        return v;
    }

    static std::vector<double> checked(std::span<const double> xs) {
        std::vector<double> out(xs.begin(), xs.end());
        for (double& x : out) {
            if (!std::isfinite(x) || x < -kRangeTolerance || x > 1.0 + kRangeTolerance)
                throw RangeError("verge distance outside [0,1]: " + std::to_string(x));
            x = std::clamp(x, 0.0, 1.0);
        }
        return out;
    }

    void apply(std::optional<double>& verge, std::span<const double> xs) const {
        if (xs.empty()) return;
        if (!verge) {
            verge = xs.front();
            if (init_ == VergeInit::exclude_first) xs = xs.subspan(1);
            if (xs.empty()) return;
        }
        // Convex combination of values in [0,1]; the clamp only absorbs rounding.
        verge = std::clamp(ema_batch(*verge, xs, params_), 0.0, 1.0);
    }

    EmaParams params_;
    VergeInit init_;
    std::map<ClassId, VergeState> states_;
};

} // namespace cpl
