#pragma once

#include "ctscreen/augment.hpp"
#include "ctscreen/error.hpp"
#include "ctscreen/grid.hpp"
#include "ctscreen/metrics.hpp"
#include "ctscreen/nifti_io.hpp"
#include "ctscreen/nn/checkpoint.hpp"
#include "ctscreen/nn/layers.hpp"
#include "ctscreen/nn/model.hpp"
#include "ctscreen/patch_sampler.hpp"
#include "ctscreen/phantom.hpp"
#include "ctscreen/rebalance.hpp"
#include "ctscreen/segmentation.hpp"
#include "ctscreen/train.hpp"
