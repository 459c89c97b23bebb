#pragma once

#include "camf/commands.hpp"
#include "camf/corpus.hpp"
#include "camf/errors.hpp"
#include "camf/evaluation.hpp"
#include "camf/metrics.hpp"
#include "camf/models.hpp"
#include "camf/parameters.hpp"
#include "camf/random.hpp"
#include "camf/tape.hpp"
#include "camf/training.hpp"
