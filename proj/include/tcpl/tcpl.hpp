#pragma once

#include "tcpl/error.hpp"
#include "tcpl/tensor.hpp"
#include "tcpl/autodiff.hpp"
#include "tcpl/optimizer.hpp"
#include "tcpl/corpus.hpp"
#include "tcpl/model.hpp"
#include "tcpl/sampling.hpp"
#include "tcpl/losses.hpp"
#include "tcpl/pseudo_label.hpp"
#include "tcpl/evaluation.hpp"
#include "tcpl/selftrain.hpp"
#include "tcpl/config.hpp"
#include "tcpl/experiment.hpp"
