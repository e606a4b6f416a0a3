#pragma once

#include "rlpm/backward.hpp"
#include "rlpm/errors.hpp"
#include "rlpm/forward.hpp"
#include "rlpm/graph.hpp"
#include "rlpm/image_io.hpp"
#include "rlpm/layers.hpp"
#include "rlpm/model_io.hpp"
#include "rlpm/parallel.hpp"
#include "rlpm/prototype.hpp"
#include "rlpm/relprop.hpp"
#include "rlpm/render.hpp"
#include "rlpm/resnet.hpp"
#include "rlpm/saliency_eval.hpp"
#include "rlpm/tensor.hpp"
#include "rlpm/train.hpp"
#include "rlpm/wholeimage.hpp"
