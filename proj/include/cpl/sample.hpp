#pragma once

#include <cstdint>

#include "cpl/error.hpp"
#include "cpl/math.hpp"

namespace cpl {

using ClassId = std::int64_t;

// One minibatch element in embedding space: class k, origin embedding o_k,
// mutant embedding s, and label l (1 = equivalent to the origin).
struct EmbeddedSample {
    ClassId class_id;
    Vector origin;
    Vector mutant;
    int label;

    EmbeddedSample(ClassId k, Vector o, Vector s, int l)
        : class_id(k), origin(std::move(o)), mutant(std::move(s)), label(l) {
        if (label != 0 && label != 1) throw RangeError("label must be 0 or 1");
        if (origin.dim() != mutant.dim()) throw DimensionError("origin/mutant dimension mismatch");
    }
};

} // namespace cpl
