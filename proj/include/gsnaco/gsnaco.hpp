#pragma once

// Umbrella header.

#include "gsnaco/tensor.hpp"
#include "gsnaco/ops.hpp"
#include "gsnaco/nn.hpp"
#include "gsnaco/classifier.hpp"
#include "gsnaco/gsm.hpp"
#include "gsnaco/lsta.hpp"
#include "gsnaco/egoaco.hpp"
#include "gsnaco/checkpoint.hpp"
#include "gsnaco/videodata.hpp"
#include "gsnaco/training.hpp"
#include "gsnaco/eval.hpp"
#include "gsnaco/config.hpp"
#include "gsnaco/gradcheck.hpp"
