#pragma once

// Umbrella header for the hand-conditioned SDF reconstruction toolkit.

#include "handsdf/camera.hpp"
#include "handsdf/core.hpp"
#include "handsdf/data.hpp"
#include "handsdf/encoding.hpp"
#include "handsdf/field.hpp"
#include "handsdf/kinematics.hpp"
#include "handsdf/mesh.hpp"
#include "handsdf/metrics.hpp"
#include "handsdf/neural.hpp"
#include "handsdf/pipeline.hpp"
#include "handsdf/refine.hpp"
