#pragma once

#include "almreg/error.hpp"
#include "almreg/linop.hpp"
#include "almreg/penalty.hpp"
#include "almreg/subproblem.hpp"
#include "almreg/stopping.hpp"
#include "almreg/alm.hpp"
#include "almreg/certify.hpp"
#include "almreg/harness.hpp"
#include "almreg/report.hpp"
#include "almreg/config.hpp"
