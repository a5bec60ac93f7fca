#pragma once

// Umbrella header for the multi-weather image restoration library.

#include "clearsky/autograd.hpp"
#include "clearsky/blocks.hpp"
#include "clearsky/checkpoint.hpp"
#include "clearsky/config.hpp"
#include "clearsky/degrade.hpp"
#include "clearsky/fft.hpp"
#include "clearsky/metrics.hpp"
#include "clearsky/network.hpp"
#include "clearsky/params.hpp"
#include "clearsky/rng.hpp"
#include "clearsky/runconfig.hpp"
#include "clearsky/tensor.hpp"
#include "clearsky/train.hpp"
