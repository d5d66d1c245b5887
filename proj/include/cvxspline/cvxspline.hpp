#pragma once

#include "cvxspline/error.hpp"
#include "cvxspline/splines.hpp"
#include "cvxspline/cone_qp.hpp"
#include "cvxspline/lipschitz_lab.hpp"
#include "cvxspline/estimators.hpp"
#include "cvxspline/simulation.hpp"
