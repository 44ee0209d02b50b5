// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "syncref/embstore.hpp"
#include "syncref/error.hpp"
#include "syncref/pipeline.hpp"
#include "syncref/scoring.hpp"
#include "syncref/selection.hpp"
#include "syncref/simkernel.hpp"
#include "syncref/synthbench.hpp"
