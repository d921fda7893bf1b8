#pragma once

#include "hetroute/achq.hpp"
#include "hetroute/config.hpp"
#include "hetroute/csv.hpp"
#include "hetroute/exact.hpp"
#include "hetroute/experiment.hpp"
#include "hetroute/parallel.hpp"
#include "hetroute/policy.hpp"
#include "hetroute/rng.hpp"
#include "hetroute/simulate.hpp"
#include "hetroute/state.hpp"
#include "hetroute/transition.hpp"
#include "hetroute/two_server.hpp"
#include "hetroute/version.hpp"
