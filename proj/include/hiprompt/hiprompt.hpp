// Copyright (C) 2026 The hiprompt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "backends.hpp"
#include "config.hpp"
#include "decompose.hpp"
#include "digest.hpp"
#include "errors.hpp"
#include "image.hpp"
#include "latent_grid.hpp"
#include "parallel.hpp"
#include "pipeline.hpp"
#include "prompts.hpp"
#include "remote.hpp"
#include "rng.hpp"
#include "schedule.hpp"
#include "selftest.hpp"
#include "server.hpp"
#include "tiling.hpp"
#include "wire.hpp"
