#pragma once

#include "data_model.hpp"
#include "geometry.hpp"
#include "expert_layer.hpp"
#include "glm.hpp"
#include "learner.hpp"
#include "prediction.hpp"
#include "synthgen.hpp"
#include "eval.hpp"
#include "io.hpp"
