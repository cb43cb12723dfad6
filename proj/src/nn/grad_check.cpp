#include "fedlsi/nn/grad_check.hpp"

#include <cmath>
#include <stdexcept>

namespace fedlsi::nn {

GradCheckResult grad_check(const std::function<TensorPtr(Tape*)>& fn,
                           const std::vector<TensorPtr>& params, double h) {
    if (h <= 0.0) {
        throw std::invalid_argument("grad_check: h must be > 0");
    }
    for (const auto& p : params) {
        p->zero_grad();
    }
    Tape tape;
    auto loss = fn(&tape);
    if (loss->size() != 1) {
        throw std::invalid_argument("grad_check: fn must be scalar-valued");
    }
    if (!std::isfinite(loss->value())) {
        throw std::runtime_error("grad_check: non-finite function value");
    }
    tape.backward(loss);

    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const auto& p : params) {
        analytic.push_back(p->has_grad() ? p->grad() : std::vector<double>(p->size(), 0.0));
    }

    GradCheckResult result;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& vals = params[pi]->values();
        for (std::size_t j = 0; j < vals.size(); ++j) {
            const double orig = vals[j];
            vals[j] = orig + h;
            const double fplus = fn(nullptr)->value();
            vals[j] = orig - h;
            const double fminus = fn(nullptr)->value();
            vals[j] = orig;
            if (!std::isfinite(fplus) || !std::isfinite(fminus)) {
                throw std::runtime_error("grad_check: non-finite function value");
            }
            const double numeric = (fplus - fminus) / (2.0 * h);
            const double a = analytic[pi][j];
            const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
            const double rel = std::abs(a - numeric) / denom;
            if (rel > result.max_rel_error) {
                result.max_rel_error = rel;
                result.worst_param = pi;
                result.worst_index = j;
            }
        }
    }
    for (const auto& p : params) {
        p->zero_grad();
    }
    return result;
}

}  // namespace fedlsi::nn
