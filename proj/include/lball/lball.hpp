// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "lball/types.hpp"
#include "lball/rng.hpp"
#include "lball/parallel.hpp"
#include "lball/fields.hpp"
#include "lball/operator_model.hpp"
#include "lball/models.hpp"
#include "lball/kernel_checks.hpp"
#include "lball/cubature.hpp"
#include "lball/quadrature.hpp"
#include "lball/geometry.hpp"
#include "lball/meanvalue.hpp"
#include "lball/potential.hpp"
#include "lball/asymptotic.hpp"
#include "lball/experiments.hpp"
