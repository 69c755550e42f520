#pragma once

#include "stepmppi/benchmark.hpp"
#include "stepmppi/checkpoint.hpp"
#include "stepmppi/config.hpp"
#include "stepmppi/cost.hpp"
#include "stepmppi/env.hpp"
#include "stepmppi/errors.hpp"
#include "stepmppi/eval.hpp"
#include "stepmppi/gradcheck.hpp"
#include "stepmppi/mppi.hpp"
#include "stepmppi/mppi_layer.hpp"
#include "stepmppi/numerics.hpp"
#include "stepmppi/parallel.hpp"
#include "stepmppi/policy.hpp"
#include "stepmppi/rng.hpp"
#include "stepmppi/track.hpp"
#include "stepmppi/traffic.hpp"
#include "stepmppi/training.hpp"
