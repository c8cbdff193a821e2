#pragma once

#include "misr/adam.hpp"
#include "misr/attention.hpp"
#include "misr/batch.hpp"
#include "misr/checkpoint.hpp"
#include "misr/common.hpp"
#include "misr/config.hpp"
#include "misr/conv.hpp"
#include "misr/decoder.hpp"
#include "misr/encoder.hpp"
#include "misr/fft.hpp"
#include "misr/fusion.hpp"
#include "misr/metrics.hpp"
#include "misr/model.hpp"
#include "misr/norm.hpp"
#include "misr/npy_io.hpp"
#include "misr/ops.hpp"
#include "misr/parallel.hpp"
#include "misr/params.hpp"
#include "misr/png_io.hpp"
#include "misr/resize.hpp"
#include "misr/rng.hpp"
#include "misr/scene.hpp"
#include "misr/synth.hpp"
#include "misr/tensor.hpp"
#include "misr/trainer.hpp"
#include "misr/verify.hpp"
