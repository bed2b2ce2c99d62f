// Copyright 2026 The lindpo Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "lindpo/autodiff.hpp"
#include "lindpo/config.hpp"
#include "lindpo/data_io.hpp"
#include "lindpo/dynamics.hpp"
#include "lindpo/errors.hpp"
#include "lindpo/nn.hpp"
#include "lindpo/objectives.hpp"
#include "lindpo/plot.hpp"
#include "lindpo/rng.hpp"
#include "lindpo/schedules.hpp"
#include "lindpo/training.hpp"
#include "lindpo/verify.hpp"
