// Copyright 2026 The prompt-forge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "prompt_forge/autograd.hpp"
#include "prompt_forge/backbone.hpp"
#include "prompt_forge/cluster.hpp"
#include "prompt_forge/config.hpp"
#include "prompt_forge/memory.hpp"
#include "prompt_forge/metrics.hpp"
#include "prompt_forge/numerics.hpp"
#include "prompt_forge/prompt.hpp"
#include "prompt_forge/tasks.hpp"
#include "prompt_forge/transfer.hpp"
#include "prompt_forge/vocab.hpp"
