#pragma once

// Umbrella header for the whole library.

#include "lvit/checkpoint.hpp"
#include "lvit/config.hpp"
#include "lvit/data.hpp"
#include "lvit/errors.hpp"
#include "lvit/eval.hpp"
#include "lvit/io_util.hpp"
#include "lvit/model.hpp"
#include "lvit/rng.hpp"
#include "lvit/tape.hpp"
#include "lvit/tensor.hpp"
#include "lvit/train.hpp"
