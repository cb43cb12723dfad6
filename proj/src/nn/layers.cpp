#include "fedlsi/nn/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace fedlsi::nn {

void WireReader::take(std::span<double> dst) {
    if (pos_ + dst.size() > in_.size()) {
        throw std::out_of_range("wire reader: not enough data");
    }
    std::copy_n(in_.data() + pos_, dst.size(), dst.data());
    pos_ += dst.size();
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng) : in_(in), out_(out) {
    if (in == 0 || out == 0) {
        throw std::invalid_argument("linear layer dimensions must be positive");
    }
    const double bound = std::sqrt(1.0 / static_cast<double>(in));
    std::vector<double> w(out * in);
    for (double& v : w) {
        v = rng.uniform(-bound, bound);
    }
    std::vector<double> b(out);
    for (double& v : b) {
        v = rng.uniform(-bound, bound);
    }
    weight = Tensor::make({out, in}, std::move(w), true);
    bias = Tensor::make({out}, std::move(b), true);
}

TensorPtr Linear::forward(Tape* tape, const TensorPtr& x) const {
    if (x->rank() != 2 || x->cols() != in_) {
        throw std::invalid_argument("linear forward: input width mismatch");
    }
    return add_rowvec(tape, matmul_nt(tape, x, weight), bias);
}

void Linear::to_wire(WireWriter& w) const {
    w.append(weight->values());
    w.append(bias->values());
}

void Linear::from_wire(WireReader& r) {
    r.take(weight->values());
    r.take(bias->values());
}

Linear Linear::clone() const {
    Linear c(in_, out_);
    c.weight = Tensor::make(weight->shape(), weight->values(), weight->requires_grad());
    c.bias = Tensor::make(bias->shape(), bias->values(), bias->requires_grad());
    return c;
}

BatchNorm1d::BatchNorm1d(std::size_t features, double momentum, double eps)
    : features_(features), momentum_(momentum), eps_(eps) {
    if (features == 0) {
        throw std::invalid_argument("batch norm feature count must be positive");
    }
    if (momentum <= 0.0 || momentum >= 1.0) {
        throw std::invalid_argument("batch norm momentum must be in (0, 1)");
    }
    if (eps <= 0.0) {
        throw std::invalid_argument("batch norm eps must be > 0");
    }
    gamma = Tensor::make({features}, std::vector<double>(features, 1.0), true);
    beta = Tensor::make({features}, std::vector<double>(features, 0.0), true);
    running_mean.assign(features, 0.0);
    running_var.assign(features, 1.0);
}

TensorPtr BatchNorm1d::forward(Tape* tape, const TensorPtr& x, Mode mode) {
    if (x->rank() != 2 || x->cols() != features_) {
        throw std::invalid_argument("batch norm forward: feature width mismatch");
    }
    const std::size_t b = x->rows();
    const std::size_t p = features_;

    if (mode == Mode::eval) {
        // y = gamma * (x - rm) / sqrt(rv + eps) + beta
        std::vector<double> xhat(b * p);
        std::vector<double> invstd(p);
        for (std::size_t c = 0; c < p; ++c) {
            invstd[c] = 1.0 / std::sqrt(running_var[c] + eps_);
        }
        std::vector<double> y(b * p);
        for (std::size_t r = 0; r < b; ++r) {
            for (std::size_t c = 0; c < p; ++c) {
                const double h = (x->values()[r * p + c] - running_mean[c]) * invstd[c];
                xhat[r * p + c] = h;
                y[r * p + c] = h * gamma->values()[c] + beta->values()[c];
            }
        }
        const bool xg = x->requires_grad();
        const bool gg = gamma->requires_grad();
        const bool bg = beta->requires_grad();
        auto out = Tensor::make(x->shape(), std::move(y), xg || gg || bg);
        if (out->requires_grad() && tape) {
            auto gamma_p = gamma;
            auto beta_p = beta;
            tape->record("batchnorm_eval", {x->id(), gamma->id(), beta->id()}, out->id(),
                         [x, gamma_p, beta_p, out, xhat = std::move(xhat),
                          invstd = std::move(invstd), b, p, xg, gg, bg]() {
                             if (!out->has_grad()) {
                                 return;
                             }
                             const auto& go = out->grad();
                             for (std::size_t r = 0; r < b; ++r) {
                                 for (std::size_t c = 0; c < p; ++c) {
                                     const double g = go[r * p + c];
                                     if (bg) {
                                         beta_p->grad()[c] += g;
                                     }
                                     if (gg) {
                                         gamma_p->grad()[c] += g * xhat[r * p + c];
                                     }
                                     if (xg) {
                                         x->grad()[r * p + c] +=
                                             g * gamma_p->values()[c] * invstd[c];
                                     }
                                 }
                             }
                         });
        }
        return out;
    }

    // Train mode: normalize with biased batch variance; running estimate uses
    // the unbiased variance, which needs batch >= 2.
    if (b < 2) {
        throw std::invalid_argument(
            "batch norm train mode requires batch size >= 2 (batch variance undefined)");
    }
    std::vector<double> mean(p, 0.0);
    std::vector<double> var(p, 0.0);
    for (std::size_t r = 0; r < b; ++r) {
        for (std::size_t c = 0; c < p; ++c) {
            mean[c] += x->values()[r * p + c];
        }
    }
    const double invb = 1.0 / static_cast<double>(b);
    for (double& v : mean) {
        v *= invb;
    }
    for (std::size_t r = 0; r < b; ++r) {
        for (std::size_t c = 0; c < p; ++c) {
            const double d = x->values()[r * p + c] - mean[c];
            var[c] += d * d;
        }
    }
    for (double& v : var) {
        v *= invb;
    }
    const double unbias = static_cast<double>(b) / static_cast<double>(b - 1);
    for (std::size_t c = 0; c < p; ++c) {
        running_mean[c] = (1.0 - momentum_) * running_mean[c] + momentum_ * mean[c];
        running_var[c] = (1.0 - momentum_) * running_var[c] + momentum_ * (var[c] * unbias);
    }
    require_finite(running_mean, "batch norm running mean");
    require_finite(running_var, "batch norm running variance");

    std::vector<double> invstd(p);
    for (std::size_t c = 0; c < p; ++c) {
        invstd[c] = 1.0 / std::sqrt(var[c] + eps_);
    }
    std::vector<double> xhat(b * p);
    std::vector<double> y(b * p);
    for (std::size_t r = 0; r < b; ++r) {
        for (std::size_t c = 0; c < p; ++c) {
            const double h = (x->values()[r * p + c] - mean[c]) * invstd[c];
            xhat[r * p + c] = h;
            y[r * p + c] = h * gamma->values()[c] + beta->values()[c];
        }
    }
    const bool xg = x->requires_grad();
    const bool gg = gamma->requires_grad();
    const bool bgr = beta->requires_grad();
    auto out = Tensor::make(x->shape(), std::move(y), xg || gg || bgr);
    if (out->requires_grad() && tape) {
        auto gamma_p = gamma;
        auto beta_p = beta;
        tape->record(
            "batchnorm_train", {x->id(), gamma->id(), beta->id()}, out->id(),
            [x, gamma_p, beta_p, out, xhat = std::move(xhat), invstd = std::move(invstd), b,
             p, xg, gg, bgr]() {
                if (!out->has_grad()) {
                    return;
                }
                const auto& go = out->grad();
                const double n = static_cast<double>(b);
                std::vector<double> sum_dy(p, 0.0);
                std::vector<double> sum_dy_xhat(p, 0.0);
                for (std::size_t r = 0; r < b; ++r) {
                    for (std::size_t c = 0; c < p; ++c) {
                        sum_dy[c] += go[r * p + c];
                        sum_dy_xhat[c] += go[r * p + c] * xhat[r * p + c];
                    }
                }
                if (bgr) {
                    beta_p->accumulate_grad(sum_dy);
                }
                if (gg) {
                    gamma_p->accumulate_grad(sum_dy_xhat);
                }
                if (xg) {
                    auto& gx = x->grad();
                    for (std::size_t r = 0; r < b; ++r) {
                        for (std::size_t c = 0; c < p; ++c) {
                            const double dy = go[r * p + c];
                            gx[r * p + c] += (gamma_p->values()[c] * invstd[c] / n) *
                                             (n * dy - sum_dy[c] -
                                              xhat[r * p + c] * sum_dy_xhat[c]);
                        }
                    }
                }
            });
    }
    return out;
}

void BatchNorm1d::to_wire(WireWriter& w) const {
    w.append(gamma->values());
    w.append(beta->values());
    w.append(running_mean);
    w.append(running_var);
}

void BatchNorm1d::from_wire(WireReader& r) {
    r.take(gamma->values());
    r.take(beta->values());
    r.take(running_mean);
    r.take(running_var);
}

BatchNorm1d BatchNorm1d::clone() const {
    BatchNorm1d c(features_, momentum_, eps_);
    c.gamma = Tensor::make(gamma->shape(), gamma->values(), gamma->requires_grad());
    c.beta = Tensor::make(beta->shape(), beta->values(), beta->requires_grad());
    c.running_mean = running_mean;
    c.running_var = running_var;
    return c;
}

LayerNorm::LayerNorm(std::size_t features, double eps) : features_(features), eps_(eps) {
    gamma = Tensor::make({features}, std::vector<double>(features, 1.0), true);
    beta = Tensor::make({features}, std::vector<double>(features, 0.0), true);
}

void LayerNorm::to_wire(WireWriter& w) const {
    w.append(gamma->values());
    w.append(beta->values());
}

void LayerNorm::from_wire(WireReader& r) {
    r.take(gamma->values());
    r.take(beta->values());
}

LayerNorm LayerNorm::clone() const {
    LayerNorm c(features_, eps_);
    c.gamma = Tensor::make(gamma->shape(), gamma->values(), gamma->requires_grad());
    c.beta = Tensor::make(beta->shape(), beta->values(), beta->requires_grad());
    return c;
}

MlpEncoder::MlpEncoder(const std::vector<std::size_t>& dims, Rng& rng) {
    if (dims.size() < 2) {
        throw std::invalid_argument("encoder needs at least input and output dimensions");
    }
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        layers_.emplace_back(dims[i], dims[i + 1], rng);
    }
}

TensorPtr MlpEncoder::forward(Tape* tape, const TensorPtr& x) const {
    require_finite(*x, "encoder input");
    TensorPtr h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        h = layers_[i].forward(tape, h);
        if (i + 1 < layers_.size()) {
            h = relu(tape, h);
        }
    }
    return h;
}

std::vector<TensorPtr> MlpEncoder::parameters() const {
    std::vector<TensorPtr> ps;
    for (const auto& l : layers_) {
        ps.push_back(l.weight);
        ps.push_back(l.bias);
    }
    return ps;
}

std::size_t MlpEncoder::wire_size() const {
    std::size_t n = 0;
    for (const auto& l : layers_) {
        n += l.wire_size();
    }
    return n;
}

void MlpEncoder::to_wire(std::vector<double>& out) const {
    WireWriter w(out);
    for (const auto& l : layers_) {
        l.to_wire(w);
    }
}

void MlpEncoder::from_wire(std::span<const double> in) {
    WireReader r(in);
    for (auto& l : layers_) {
        l.from_wire(r);
    }
    if (!r.exhausted()) {
        throw std::invalid_argument("encoder wire payload has trailing data");
    }
}

MlpEncoder MlpEncoder::clone() const {
    MlpEncoder c;
    for (const auto& l : layers_) {
        c.layers_.push_back(l.clone());
    }
    return c;
}

ClassifierHead::ClassifierHead(std::size_t latent_dim, std::size_t classes, Rng& rng)
    : bn(latent_dim), fc(latent_dim, classes, rng) {}

TensorPtr ClassifierHead::forward(Tape* tape, const TensorPtr& z, Mode mode) {
    require_finite(*z, "classifier input");
    return fc.forward(tape, bn.forward(tape, z, mode));
}

std::vector<TensorPtr> ClassifierHead::parameters() const {
    return {bn.gamma, bn.beta, fc.weight, fc.bias};
}

void ClassifierHead::to_wire(std::vector<double>& out) const {
    WireWriter w(out);
    bn.to_wire(w);
    fc.to_wire(w);
}

void ClassifierHead::from_wire(std::span<const double> in) {
    WireReader r(in);
    bn.from_wire(r);
    fc.from_wire(r);
    if (!r.exhausted()) {
        throw std::invalid_argument("head wire payload has trailing data");
    }
}

ClassifierHead ClassifierHead::clone() const {
    ClassifierHead c = *this;
    c.bn = bn.clone();
    c.fc = fc.clone();
    return c;
}

std::vector<double> flatten_params(const std::vector<TensorPtr>& params) {
    std::vector<double> flat;
    for (const auto& p : params) {
        flat.insert(flat.end(), p->values().begin(), p->values().end());
    }
    return flat;
}

void load_params(const std::vector<TensorPtr>& params, std::span<const double> flat) {
    std::size_t pos = 0;
    for (const auto& p : params) {
        if (pos + p->size() > flat.size()) {
            throw std::invalid_argument("load_params: flat vector too short");
        }
        std::copy_n(flat.data() + pos, p->size(), p->values().data());
        pos += p->size();
    }
    if (pos != flat.size()) {
        throw std::invalid_argument("load_params: flat vector too long");
    }
}

std::size_t param_count(const std::vector<TensorPtr>& params) {
    std::size_t n = 0;
    for (const auto& p : params) {
        n += p->size();
    }
    return n;
}

FreezeGuard::FreezeGuard(const std::vector<TensorPtr>& params) {
    saved_.reserve(params.size());
    for (const auto& p : params) {
        saved_.emplace_back(p, p->requires_grad());
        p->set_requires_grad(false);
    }
}

FreezeGuard::~FreezeGuard() {
    for (auto& [p, flag] : saved_) {
        p->set_requires_grad(flag);
    }
}

}  // namespace fedlsi::nn
