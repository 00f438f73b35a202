#pragma once

// Umbrella header for the mixture projection filter library.

#include "mpf/continuous_filter.hpp"
#include "mpf/discrete_filter.hpp"
#include "mpf/dynamics.hpp"
#include "mpf/errors.hpp"
#include "mpf/experiment.hpp"
#include "mpf/families.hpp"
#include "mpf/gaussian.hpp"
#include "mpf/geometry.hpp"
#include "mpf/oracles/galerkin.hpp"
#include "mpf/oracles/grid.hpp"
#include "mpf/oracles/kalman.hpp"
#include "mpf/oracles/particle.hpp"
#include "mpf/quad.hpp"
#include "mpf/rng.hpp"
#include "mpf/scenario.hpp"
#include "mpf/trajectory.hpp"
