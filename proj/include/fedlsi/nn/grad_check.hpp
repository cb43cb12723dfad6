#pragma once

#include <functional>
#include <vector>

#include "fedlsi/nn/tensor.hpp"

namespace fedlsi::nn {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t worst_param = 0;
    std::size_t worst_index = 0;
};

// Compares tape gradients of a scalar function against central finite
// differences, coordinate by coordinate. `fn` must rebuild the forward pass
// from the current parameter values each time it is called. Relative error is
// |analytic - numeric| / max(1, |analytic|, |numeric|).
GradCheckResult grad_check(const std::function<TensorPtr(Tape*)>& fn,
                           const std::vector<TensorPtr>& params, double h);

}  // namespace fedlsi::nn
