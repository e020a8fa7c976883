#pragma once

#include "baple/core.hpp"
#include "baple/artifact.hpp"
#include "baple/data.hpp"
#include "baple/nn.hpp"
#include "baple/model.hpp"
#include "baple/triggers.hpp"
#include "baple/poison.hpp"
#include "baple/attack.hpp"
#include "baple/finetune.hpp"
#include "baple/eval.hpp"
#include "baple/experiment.hpp"
#include "baple/runner.hpp"
