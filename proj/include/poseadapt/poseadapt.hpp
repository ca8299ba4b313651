// Umbrella header: the whole library in one include.
#pragma once

#include "poseadapt/ablation.hpp"
#include "poseadapt/checkpoint.hpp"
#include "poseadapt/codec.hpp"
#include "poseadapt/common.hpp"
#include "poseadapt/config.hpp"
#include "poseadapt/dataset.hpp"
#include "poseadapt/discrepancy.hpp"
#include "poseadapt/engine.hpp"
#include "poseadapt/layers.hpp"
#include "poseadapt/metrics.hpp"
#include "poseadapt/model.hpp"
#include "poseadapt/optim.hpp"
#include "poseadapt/plots.hpp"
#include "poseadapt/png_io.hpp"
#include "poseadapt/rng.hpp"
#include "poseadapt/synth.hpp"
#include "poseadapt/tensor.hpp"
