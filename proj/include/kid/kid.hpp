#pragma once
// Umbrella header.

#include "kid/tensor.hpp"
#include "kid/config.hpp"
#include "kid/layers.hpp"
#include "kid/image.hpp"
#include "kid/injection_attention.hpp"
#include "kid/localization.hpp"
#include "kid/regularizers.hpp"
#include "kid/backbone.hpp"
#include "kid/model.hpp"
#include "kid/synthesis.hpp"
#include "kid/metrics.hpp"
#include "kid/training.hpp"
#include "kid/plot.hpp"
#include "kid/evaluation.hpp"
