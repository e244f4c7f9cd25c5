#pragma once

// Umbrella header for the whole library.

#include <esprm/common.hpp>
#include <esprm/rng.hpp>
#include <esprm/nn.hpp>
#include <esprm/optim.hpp>
#include <esprm/data.hpp>
#include <esprm/surrogate.hpp>
#include <esprm/nuisance.hpp>
#include <esprm/scenario.hpp>
#include <esprm/gmm.hpp>
#include <esprm/game.hpp>
#include <esprm/bench.hpp>
