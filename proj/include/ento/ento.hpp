#pragma once

#include "ento/autograd.hpp"
#include "ento/config.hpp"
#include "ento/container.hpp"
#include "ento/error.hpp"
#include "ento/evaluate.hpp"
#include "ento/grad_check.hpp"
#include "ento/gradcheck_suite.hpp"
#include "ento/kernel.hpp"
#include "ento/losses.hpp"
#include "ento/metrics.hpp"
#include "ento/model.hpp"
#include "ento/param_store.hpp"
#include "ento/pnm.hpp"
#include "ento/synthetic.hpp"
#include "ento/tensor.hpp"
#include "ento/trainer.hpp"
