#include "fedlsi/nn/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace fedlsi::nn {

namespace {

void require_grads(const std::vector<TensorPtr>& params) {
    for (const auto& p : params) {
        if (!p->has_grad()) {
            throw std::logic_error("optimizer step: parameter has no gradient");
        }
    }
}

}  // namespace

Sgd::Sgd(std::vector<TensorPtr> params, SgdOptions opts)
    : params_(std::move(params)), opts_(opts) {
    if (opts_.lr <= 0.0) {
        throw std::invalid_argument("sgd: lr must be > 0");
    }
    if (opts_.momentum < 0.0 || opts_.momentum >= 1.0) {
        throw std::invalid_argument("sgd: momentum must be in [0, 1)");
    }
    velocity_.reserve(params_.size());
    for (const auto& p : params_) {
        velocity_.emplace_back(p->size(), 0.0);
    }
}

void Sgd::step() {
    require_grads(params_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& w = params_[i]->values();
        const auto& g = params_[i]->grad();
        auto& v = velocity_[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            v[j] = opts_.momentum * v[j] + g[j] + opts_.weight_decay * w[j];
            w[j] -= opts_.lr * v[j];
        }
    }
}

void Sgd::zero_grad() {
    for (const auto& p : params_) {
        p->zero_grad();
    }
}

Adam::Adam(std::vector<TensorPtr> params, AdamOptions opts)
    : params_(std::move(params)), opts_(opts) {
    if (opts_.lr <= 0.0) {
        throw std::invalid_argument("adam: lr must be > 0");
    }
    if (opts_.beta1 < 0.0 || opts_.beta1 >= 1.0 || opts_.beta2 < 0.0 || opts_.beta2 >= 1.0) {
        throw std::invalid_argument("adam: betas must be in [0, 1)");
    }
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
        m_.emplace_back(p->size(), 0.0);
        v_.emplace_back(p->size(), 0.0);
    }
}

void Adam::step() {
    require_grads(params_);
    ++t_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& w = params_[i]->values();
        const auto& g = params_[i]->grad();
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            m[j] = opts_.beta1 * m[j] + (1.0 - opts_.beta1) * g[j];
            v[j] = opts_.beta2 * v[j] + (1.0 - opts_.beta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            w[j] -= opts_.lr * mhat / (std::sqrt(vhat) + opts_.eps);
        }
    }
}

void Adam::zero_grad() {
    for (const auto& p : params_) {
        p->zero_grad();
    }
}

}  // namespace fedlsi::nn
