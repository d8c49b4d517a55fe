#pragma once

// Umbrella header for the partially supervised multi-label toolkit.

#include "psmlc/adam.hpp"
#include "psmlc/augment.hpp"
#include "psmlc/checkpoint.hpp"
#include "psmlc/data.hpp"
#include "psmlc/error.hpp"
#include "psmlc/experiment.hpp"
#include "psmlc/labels.hpp"
#include "psmlc/loss.hpp"
#include "psmlc/metrics.hpp"
#include "psmlc/network.hpp"
#include "psmlc/rng.hpp"
#include "psmlc/tensor.hpp"
