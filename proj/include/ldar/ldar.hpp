// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "ldar/checkpoint.hpp"
#include "ldar/config.hpp"
#include "ldar/diffcore.hpp"
#include "ldar/environ.hpp"
#include "ldar/errors.hpp"
#include "ldar/evaluation.hpp"
#include "ldar/harness.hpp"
#include "ldar/oracle.hpp"
#include "ldar/policy.hpp"
#include "ldar/random.hpp"
#include "ldar/rollout.hpp"
#include "ldar/specials.hpp"
#include "ldar/strategies.hpp"
#include "ldar/tensor.hpp"
#include "ldar/trainer.hpp"
#include "ldar/training.hpp"
