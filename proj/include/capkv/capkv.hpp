// Copyright (C) 2026 The capkv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "capkv/cache.hpp"
#include "capkv/channel.hpp"
#include "capkv/error.hpp"
#include "capkv/kvpk.hpp"
#include "capkv/linalg.hpp"
#include "capkv/policies.hpp"
#include "capkv/proxies.hpp"
#include "capkv/rng.hpp"
#include "capkv/harness/bench.hpp"
#include "capkv/harness/correlation.hpp"
#include "capkv/harness/oracles.hpp"
#include "capkv/harness/parallel.hpp"
#include "capkv/harness/streaming.hpp"
#include "capkv/harness/sweep.hpp"
#include "capkv/harness/tables.hpp"

#define CAPKV_VERSION "0.1.0"
