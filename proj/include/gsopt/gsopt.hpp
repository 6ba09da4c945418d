/// @file gsopt.hpp
/// @brief Umbrella header.

#pragma once

#include "gsopt/attributes.hpp"
#include "gsopt/config.hpp"
#include "gsopt/image.hpp"
#include "gsopt/loss.hpp"
#include "gsopt/metrics.hpp"
#include "gsopt/optimizer.hpp"
#include "gsopt/outputs.hpp"
#include "gsopt/pipeline.hpp"
#include "gsopt/presets.hpp"
#include "gsopt/primitives.hpp"
#include "gsopt/renderer.hpp"
#include "gsopt/rng.hpp"
#include "gsopt/scene.hpp"
