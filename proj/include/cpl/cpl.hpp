#pragma once

#include "cpl/error.hpp"
#include "cpl/math.hpp"
#include "cpl/random.hpp"
#include "cpl/sample.hpp"
#include "cpl/verge.hpp"
#include "cpl/losses.hpp"
#include "cpl/encoder.hpp"
#include "cpl/data.hpp"
#include "cpl/synthetic.hpp"
#include "cpl/trainer.hpp"
#include "cpl/evaluator.hpp"
