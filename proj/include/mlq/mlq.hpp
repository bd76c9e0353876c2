#pragma once

#include "mlq/closed_forms.hpp"
#include "mlq/coeff_table.hpp"
#include "mlq/config.hpp"
#include "mlq/csv.hpp"
#include "mlq/errors.hpp"
#include "mlq/problem.hpp"
#include "mlq/riccati.hpp"
#include "mlq/simulate.hpp"
#include "mlq/switch_time.hpp"
#include "mlq/time_grid.hpp"
