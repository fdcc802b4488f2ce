#pragma once

#include "memlab/models/mlp.hpp"
#include "memlab/models/pipeline.hpp"
#include "memlab/models/svr.hpp"
