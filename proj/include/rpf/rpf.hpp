#pragma once

#include "rpf/errors.hpp"
#include "rpf/phy_profile.hpp"
#include "rpf/analytic_model.hpp"
#include "rpf/pf_optimizer.hpp"
#include "rpf/slot_simulator.hpp"
#include "rpf/adaptive_controller.hpp"
#include "rpf/scenario.hpp"
#include "rpf/experiments.hpp"
