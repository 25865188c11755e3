#pragma once

// Umbrella header: the whole library in one include.

#include "periscope/calib.hpp"
#include "periscope/geometry.hpp"
#include "periscope/image.hpp"
#include "periscope/network.hpp"
#include "periscope/nn_ops.hpp"
#include "periscope/pipeline.hpp"
#include "periscope/rng.hpp"
#include "periscope/synthgen.hpp"
#include "periscope/tensor.hpp"
#include "periscope/training.hpp"
