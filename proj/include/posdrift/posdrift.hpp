#pragma once

// Umbrella header: drift-parameter estimation for second-order SDEs observed
// through positions only.

#include "posdrift/csv.hpp"
#include "posdrift/diagnostics.hpp"
#include "posdrift/errors.hpp"
#include "posdrift/estimators.hpp"
#include "posdrift/experiment.hpp"
#include "posdrift/model.hpp"
#include "posdrift/rng.hpp"
#include "posdrift/simulate.hpp"
#include "posdrift/velocity.hpp"
