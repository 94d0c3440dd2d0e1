#pragma once

#include "specshard/fedsim/task.hpp"
#include "specshard/fedsim/net.hpp"
#include "specshard/fedsim/sim.hpp"
