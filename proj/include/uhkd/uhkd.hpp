#pragma once

#include "uhkd/config.hpp"
#include "uhkd/data.hpp"
#include "uhkd/engine.hpp"
#include "uhkd/fam.hpp"
#include "uhkd/ftm.hpp"
#include "uhkd/losses.hpp"
#include "uhkd/models.hpp"
#include "uhkd/optim.hpp"
#include "uhkd/rng.hpp"
#include "uhkd/serialize.hpp"
#include "uhkd/spectral.hpp"
#include "uhkd/tensor.hpp"
