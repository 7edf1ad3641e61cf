#pragma once

#include "salted/adam.hpp"
#include "salted/autodiff.hpp"
#include "salted/bytes.hpp"
#include "salted/config.hpp"
#include "salted/dataset.hpp"
#include "salted/error.hpp"
#include "salted/kernels.hpp"
#include "salted/layers.hpp"
#include "salted/mapping.hpp"
#include "salted/model_io.hpp"
#include "salted/network.hpp"
#include "salted/presets.hpp"
#include "salted/report.hpp"
#include "salted/rng.hpp"
#include "salted/runtime.hpp"
#include "salted/tensor.hpp"
#include "salted/trainer.hpp"
#include "salted/wire.hpp"
