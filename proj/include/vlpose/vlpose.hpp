#pragma once

#include "vlpose/tensor.hpp"
#include "vlpose/autograd.hpp"
#include "vlpose/ops.hpp"
#include "vlpose/grad_check.hpp"
#include "vlpose/rng.hpp"
#include "vlpose/serialize.hpp"
#include "vlpose/params.hpp"
#include "vlpose/image.hpp"
#include "vlpose/text_embed.hpp"
#include "vlpose/attention.hpp"
#include "vlpose/vision_encoder.hpp"
#include "vlpose/relation_matcher.hpp"
#include "vlpose/pose_decoders.hpp"
#include "vlpose/keypoint_codec.hpp"
#include "vlpose/evaluation.hpp"
#include "vlpose/synth.hpp"
#include "vlpose/model.hpp"
#include "vlpose/training.hpp"
#include "vlpose/config.hpp"
#include "vlpose/cli.hpp"
