#pragma once

#include "psfh/baselines.hpp"
#include "psfh/config.hpp"
#include "psfh/experiments.hpp"
#include "psfh/grid.hpp"
#include "psfh/hodlr.hpp"
#include "psfh/impulse.hpp"
#include "psfh/moments.hpp"
#include "psfh/operators.hpp"
#include "psfh/packing.hpp"
#include "psfh/pipeline.hpp"
#include "psfh/psfkernel.hpp"
#include "psfh/solver.hpp"
#include "psfh/spdfix.hpp"
