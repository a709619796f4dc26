#pragma once

#include "embedlab/checkpoint.hpp"
#include "embedlab/config.hpp"
#include "embedlab/denoiser.hpp"
#include "embedlab/diffusion.hpp"
#include "embedlab/edit_ops.hpp"
#include "embedlab/errors.hpp"
#include "embedlab/linalg.hpp"
#include "embedlab/matrix.hpp"
#include "embedlab/model.hpp"
#include "embedlab/optimizer.hpp"
#include "embedlab/rng.hpp"
#include "embedlab/semantics.hpp"
#include "embedlab/text_encoder.hpp"
#include "embedlab/toyworld.hpp"
#include "embedlab/training.hpp"
