#pragma once

#include "swm/autodiff/adam.hpp"
#include "swm/autodiff/gradcheck.hpp"
#include "swm/autodiff/graph.hpp"
#include "swm/autodiff/ops.hpp"
#include "swm/autodiff/tensor.hpp"
