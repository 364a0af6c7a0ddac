#pragma once

#include "gfc/error.hpp"
#include "gfc/rng.hpp"
#include "gfc/grid.hpp"
#include "gfc/parallel.hpp"
#include "gfc/stats.hpp"
#include "gfc/kernels.hpp"
#include "gfc/domain.hpp"
#include "gfc/sampler.hpp"
#include "gfc/topology.hpp"
#include "gfc/critical_points.hpp"
#include "gfc/stability.hpp"
#include "gfc/clt_lab.hpp"
#include "gfc/kac_rice.hpp"
#include "gfc/report.hpp"
