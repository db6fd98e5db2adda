#pragma once

#include "rslq/adjoint.hpp"
#include "rslq/chain.hpp"
#include "rslq/config.hpp"
#include "rslq/control.hpp"
#include "rslq/errors.hpp"
#include "rslq/expression.hpp"
#include "rslq/grid.hpp"
#include "rslq/io.hpp"
#include "rslq/linalg.hpp"
#include "rslq/lsmc.hpp"
#include "rslq/problem.hpp"
#include "rslq/riccati.hpp"
#include "rslq/rng.hpp"
#include "rslq/simulate.hpp"
