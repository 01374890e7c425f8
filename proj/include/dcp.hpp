#pragma once

#include "dcp/config.hpp"
#include "dcp/conformal.hpp"
#include "dcp/data.hpp"
#include "dcp/digest.hpp"
#include "dcp/ensemble.hpp"
#include "dcp/error.hpp"
#include "dcp/eval.hpp"
#include "dcp/forest.hpp"
#include "dcp/net.hpp"
#include "dcp/plots.hpp"
#include "dcp/rng.hpp"
#include "dcp/runner.hpp"
