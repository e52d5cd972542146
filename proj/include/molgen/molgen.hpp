#pragma once

// Umbrella header for the molgen toolkit.

#include "molgen/autodiff.hpp"
#include "molgen/checkpoint.hpp"
#include "molgen/chem.hpp"
#include "molgen/data.hpp"
#include "molgen/graphs.hpp"
#include "molgen/metrics.hpp"
#include "molgen/molgan.hpp"
#include "molgen/nflow.hpp"
#include "molgen/optim.hpp"
#include "molgen/rng.hpp"
#include "molgen/selfies.hpp"
