#pragma once

#include "ttsa/error.hpp"
#include "ttsa/linalg.hpp"
#include "ttsa/rng.hpp"
#include "ttsa/schedule.hpp"
#include "ttsa/problem.hpp"
#include "ttsa/engine.hpp"
#include "ttsa/trajectory.hpp"
#include "ttsa/limits.hpp"
#include "ttsa/stats.hpp"
#include "ttsa/experiment.hpp"
