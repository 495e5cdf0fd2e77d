#pragma once

#include "couplemerton/errors.hpp"
#include "couplemerton/model.hpp"
#include "couplemerton/riccati.hpp"
#include "couplemerton/validate.hpp"
#include "couplemerton/allocation.hpp"
#include "couplemerton/policy.hpp"
#include "couplemerton/simulate.hpp"
#include "couplemerton/csv.hpp"
#include "couplemerton/mc_verify.hpp"
#include "couplemerton/config.hpp"
