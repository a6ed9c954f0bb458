#pragma once

// Umbrella header for the filament super-resolution library.

#include "fsr/config.hpp"
#include "fsr/deconv.hpp"
#include "fsr/error.hpp"
#include "fsr/image.hpp"
#include "fsr/image_io.hpp"
#include "fsr/label.hpp"
#include "fsr/layers.hpp"
#include "fsr/metrics.hpp"
#include "fsr/network.hpp"
#include "fsr/optim.hpp"
#include "fsr/parallel.hpp"
#include "fsr/phantom.hpp"
#include "fsr/pipeline.hpp"
#include "fsr/preprocess.hpp"
#include "fsr/rng.hpp"
#include "fsr/stack.hpp"
#include "fsr/synth.hpp"
#include "fsr/tensor.hpp"
#include "fsr/train.hpp"
#include "fsr/wavelet.hpp"
