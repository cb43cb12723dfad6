#include "fedlsi/nn/tensor.hpp"

#include <atomic>
#include <cmath>
#include <stdexcept>

namespace fedlsi::nn {

namespace {

std::atomic<std::uint64_t> g_next_id{1};

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
        if (d == 0) {
            throw std::invalid_argument("tensor dimensions must be positive");
        }
        n *= d;
    }
    return n;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values, bool requires_grad)
    : shape_(std::move(shape)),
      values_(std::move(values)),
      requires_grad_(requires_grad),
      id_(g_next_id.fetch_add(1, std::memory_order_relaxed)) {
    if (values_.size() != shape_product(shape_)) {
        throw std::invalid_argument("tensor value count does not match shape");
    }
    require_finite(values_, "tensor construction");
}

TensorPtr Tensor::make(std::vector<std::size_t> shape, std::vector<double> values,
                       bool requires_grad) {
    return std::make_shared<Tensor>(std::move(shape), std::move(values), requires_grad);
}

TensorPtr Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
    const std::size_t n = shape_product(shape);
    return std::make_shared<Tensor>(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

TensorPtr Tensor::scalar(double v, bool requires_grad) {
    return std::make_shared<Tensor>(std::vector<std::size_t>{}, std::vector<double>{v},
                                    requires_grad);
}

std::size_t Tensor::rows() const {
    if (rank() != 2) {
        throw std::logic_error("rows() on non-matrix tensor");
    }
    return shape_[0];
}

std::size_t Tensor::cols() const {
    if (rank() != 2) {
        throw std::logic_error("cols() on non-matrix tensor");
    }
    return shape_[1];
}

double Tensor::value() const {
    if (size() != 1) {
        throw std::logic_error("value() on non-scalar tensor");
    }
    return values_[0];
}

double& Tensor::at(std::size_t r, std::size_t c) {
    return values_[r * cols() + c];
}

double Tensor::at(std::size_t r, std::size_t c) const {
    return values_[r * cols() + c];
}

std::vector<double>& Tensor::grad() {
    if (grad_.empty()) {
        grad_.assign(values_.size(), 0.0);
    }
    return grad_;
}

const std::vector<double>& Tensor::grad() const {
    if (grad_.empty()) {
        throw std::logic_error("tensor has no gradient");
    }
    return grad_;
}

void Tensor::accumulate_grad(std::span<const double> g) {
    if (g.size() != values_.size()) {
        throw std::invalid_argument("gradient size mismatch");
    }
    auto& dst = grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
        dst[i] += g[i];
    }
}

void Tensor::zero_grad() {
    if (!grad_.empty()) {
        std::fill(grad_.begin(), grad_.end(), 0.0);
    }
}

void require_finite(const Tensor& t, const char* context) {
    require_finite(t.values(), context);
}

void require_finite(std::span<const double> v, const char* context) {
    for (double x : v) {
        if (!std::isfinite(x)) {
            throw std::invalid_argument(std::string("non-finite value in ") + context);
        }
    }
}

void Tape::record(const char* op, std::vector<std::uint64_t> inputs, std::uint64_t output,
                  std::function<void()> backward) {
    nodes_.push_back(TapeNode{op, std::move(inputs), output, std::move(backward)});
}

void Tape::backward(const TensorPtr& loss) {
    if (!loss) {
        throw std::invalid_argument("backward: null loss");
    }
    if (loss->size() != 1) {
        throw std::invalid_argument("backward: loss must be a scalar");
    }
    if (!loss->requires_grad()) {
        throw std::invalid_argument("backward: loss does not require gradients");
    }
    const double one = 1.0;
    loss->accumulate_grad(std::span<const double>(&one, 1));
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        it->backward();
    }
}

}  // namespace fedlsi::nn
