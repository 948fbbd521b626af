#ifndef CYCLEQP_CYCLEQP_HPP
#define CYCLEQP_CYCLEQP_HPP

#include "cycleqp/autodiff.hpp"
#include "cycleqp/data.hpp"
#include "cycleqp/diagnostics.hpp"
#include "cycleqp/divergence.hpp"
#include "cycleqp/losses.hpp"
#include "cycleqp/models.hpp"
#include "cycleqp/tensor.hpp"
#include "cycleqp/trainer.hpp"

#endif
