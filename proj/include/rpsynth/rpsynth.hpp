#pragma once

#include "rpsynth/analysis.hpp"
#include "rpsynth/error.hpp"
#include "rpsynth/hinf.hpp"
#include "rpsynth/inner_approx.hpp"
#include "rpsynth/lft.hpp"
#include "rpsynth/minmin.hpp"
#include "rpsynth/parallel.hpp"
#include "rpsynth/problem.hpp"
#include "rpsynth/qp.hpp"
#include "rpsynth/report.hpp"
#include "rpsynth/spectral.hpp"
#include "rpsynth/state_space.hpp"
#include "rpsynth/structure.hpp"
#include "rpsynth/synthesis.hpp"
#include "rpsynth/worstcase.hpp"
