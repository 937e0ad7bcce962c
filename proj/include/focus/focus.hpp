#pragma once

#include "focus/data.hpp"
#include "focus/dataset.hpp"
#include "focus/error.hpp"
#include "focus/federation.hpp"
#include "focus/harness.hpp"
#include "focus/learner.hpp"
#include "focus/rng.hpp"
