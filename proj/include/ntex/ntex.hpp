#pragma once

#include "ntex/conv.hpp"
#include "ntex/eval.hpp"
#include "ntex/geometry.hpp"
#include "ntex/gradcheck.hpp"
#include "ntex/gradcheck_suite.hpp"
#include "ntex/image.hpp"
#include "ntex/model.hpp"
#include "ntex/neural_texture.hpp"
#include "ntex/norm.hpp"
#include "ntex/rasterizer.hpp"
#include "ntex/renderer_net.hpp"
#include "ntex/synthetic.hpp"
#include "ntex/tensor.hpp"
#include "ntex/training.hpp"
