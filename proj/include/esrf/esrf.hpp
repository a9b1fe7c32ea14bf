#pragma once

// Umbrella header.

#include "esrf/checks.hpp"
#include "esrf/config.hpp"
#include "esrf/errors.hpp"
#include "esrf/filters.hpp"
#include "esrf/harness.hpp"
#include "esrf/kalman.hpp"
#include "esrf/limit.hpp"
#include "esrf/matrix_ops.hpp"
#include "esrf/model.hpp"
#include "esrf/observation.hpp"
#include "esrf/perturbations.hpp"
#include "esrf/random.hpp"
