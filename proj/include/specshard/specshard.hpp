#pragma once

#include "specshard/config.hpp"
#include "specshard/designs.hpp"
#include "specshard/error.hpp"
#include "specshard/fedsim.hpp"
#include "specshard/matrix.hpp"
#include "specshard/metrics.hpp"
#include "specshard/plans.hpp"
#include "specshard/rng.hpp"
#include "specshard/shard.hpp"
#include "specshard/svd.hpp"
#include "specshard/version.hpp"
