#pragma once

#include "hdiff/core.hpp"
#include "hdiff/rng.hpp"
#include "hdiff/bessel.hpp"
#include "hdiff/kernels.hpp"
#include "hdiff/point_cloud.hpp"
#include "hdiff/support.hpp"
#include "hdiff/mlp.hpp"
#include "hdiff/htransform.hpp"
#include "hdiff/sde.hpp"
#include "hdiff/score_model.hpp"
#include "hdiff/generator.hpp"
#include "hdiff/exact_backward.hpp"
#include "hdiff/applications.hpp"
#include "hdiff/stats.hpp"
#include "hdiff/validation.hpp"
