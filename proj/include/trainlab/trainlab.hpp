// Copyright 2026 The trainlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "trainlab/attention.hpp"
#include "trainlab/autograd.hpp"
#include "trainlab/bpe.hpp"
#include "trainlab/checkpoint.hpp"
#include "trainlab/context_parallel.hpp"
#include "trainlab/data.hpp"
#include "trainlab/errors.hpp"
#include "trainlab/experiment.hpp"
#include "trainlab/grad_check.hpp"
#include "trainlab/gradient_suite.hpp"
#include "trainlab/json_util.hpp"
#include "trainlab/masking.hpp"
#include "trainlab/model.hpp"
#include "trainlab/niah.hpp"
#include "trainlab/optim.hpp"
#include "trainlab/pipeline.hpp"
#include "trainlab/plot.hpp"
#include "trainlab/rope.hpp"
#include "trainlab/runtime.hpp"
#include "trainlab/spike.hpp"
#include "trainlab/telemetry.hpp"
#include "trainlab/tensor.hpp"
#include "trainlab/trainer.hpp"
