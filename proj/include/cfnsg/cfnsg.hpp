#pragma once

// Umbrella header.

#include "cfnsg/cache.hpp"
#include "cfnsg/checkpoint.hpp"
#include "cfnsg/config.hpp"
#include "cfnsg/cost.hpp"
#include "cfnsg/fields.hpp"
#include "cfnsg/geometry.hpp"
#include "cfnsg/image.hpp"
#include "cfnsg/metrics.hpp"
#include "cfnsg/nn.hpp"
#include "cfnsg/redundancy.hpp"
#include "cfnsg/render.hpp"
#include "cfnsg/render_rays.hpp"
#include "cfnsg/reuse.hpp"
#include "cfnsg/scene.hpp"
#include "cfnsg/scene_io.hpp"
#include "cfnsg/synthetic.hpp"
#include "cfnsg/tape.hpp"
#include "cfnsg/train.hpp"
#include "cfnsg/volume.hpp"
