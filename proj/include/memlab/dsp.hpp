#pragma once

#include "memlab/dsp/analysis.hpp"
#include "memlab/dsp/effects.hpp"
#include "memlab/dsp/spectral.hpp"
#include "memlab/dsp/wav.hpp"
