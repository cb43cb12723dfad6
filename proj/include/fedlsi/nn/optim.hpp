#pragma once

#include <vector>

#include "fedlsi/nn/tensor.hpp"

namespace fedlsi::nn {

struct SgdOptions {
    double lr = 0.001;
    double momentum = 0.9;
    double weight_decay = 5e-4;
};

// v <- momentum * v + grad + weight_decay * w;  w <- w - lr * v
class Sgd {
public:
    Sgd(std::vector<TensorPtr> params, SgdOptions opts);

    void step();
    void zero_grad();

    const SgdOptions& options() const { return opts_; }

private:
    std::vector<TensorPtr> params_;
    std::vector<std::vector<double>> velocity_;
    SgdOptions opts_;
};

struct AdamOptions {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    Adam(std::vector<TensorPtr> params, AdamOptions opts);

    void step();
    void zero_grad();

    long step_count() const { return t_; }

private:
    std::vector<TensorPtr> params_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    AdamOptions opts_;
    long t_ = 0;
};

}  // namespace fedlsi::nn
