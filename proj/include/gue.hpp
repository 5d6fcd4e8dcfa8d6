#pragma once

#include "gue/baselines.hpp"
#include "gue/calibration.hpp"
#include "gue/config.hpp"
#include "gue/core.hpp"
#include "gue/evidence.hpp"
#include "gue/generators.hpp"
#include "gue/grid.hpp"
#include "gue/io.hpp"
#include "gue/losses.hpp"
#include "gue/random.hpp"
#include "gue/simharness.hpp"
#include "gue/stats.hpp"
