#pragma once

#include "smat/core/dual.hpp"
#include "smat/core/error.hpp"
#include "smat/core/hvp.hpp"
#include "smat/core/losses.hpp"
#include "smat/core/ops.hpp"
#include "smat/core/sparsemax.hpp"
#include "smat/core/tensor.hpp"
#include "smat/data/dataset.hpp"
#include "smat/data/synthetic.hpp"
#include "smat/eval/metrics.hpp"
#include "smat/explain/explainers.hpp"
#include "smat/model/config.hpp"
#include "smat/model/transformer.hpp"
#include "smat/train/config.hpp"
#include "smat/train/smat.hpp"
#include "smat/train/runner.hpp"
#include "smat/eval/trueskill.hpp"
#include "smat/data/checkpoint.hpp"
#include "smat/data/config_io.hpp"
#include "smat/data/export.hpp"
