#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace fedlsi::nn {

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

// Dense row-major tensor of 64-bit floats (rank 0, 1 or 2 in practice).
// Gradients live next to the values and accumulate additively across backward
// passes until zero_grad() is called.
class Tensor {
public:
    Tensor(std::vector<std::size_t> shape, std::vector<double> values, bool requires_grad);

    static TensorPtr make(std::vector<std::size_t> shape, std::vector<double> values,
                          bool requires_grad = false);
    static TensorPtr zeros(std::vector<std::size_t> shape, bool requires_grad = false);
    static TensorPtr scalar(double v, bool requires_grad = false);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t size() const { return values_.size(); }
    std::size_t rank() const { return shape_.size(); }
    std::size_t rows() const;  // rank-2 only
    std::size_t cols() const;  // rank-2 only

    bool requires_grad() const { return requires_grad_; }
    void set_requires_grad(bool v) { requires_grad_ = v; }

    std::vector<double>& values() { return values_; }
    const std::vector<double>& values() const { return values_; }
    double value() const;  // scalar access

    double& at(std::size_t r, std::size_t c);
    double at(std::size_t r, std::size_t c) const;

    // Gradient buffer; allocated lazily (zeros) on first access.
    std::vector<double>& grad();
    const std::vector<double>& grad() const;
    bool has_grad() const { return !grad_.empty(); }
    void accumulate_grad(std::span<const double> g);
    void zero_grad();

    std::uint64_t id() const { return id_; }

private:
    std::vector<std::size_t> shape_;
    std::vector<double> values_;
    std::vector<double> grad_;
    bool requires_grad_ = false;
    std::uint64_t id_ = 0;
};

// Throws if any element is NaN or infinite. Used at op boundaries.
void require_finite(const Tensor& t, const char* context);
void require_finite(std::span<const double> v, const char* context);

struct TapeNode {
    const char* op;
    std::vector<std::uint64_t> inputs;
    std::uint64_t output;
    std::function<void()> backward;
};

// Reverse-mode tape. Ops append nodes in execution order, which is a valid
// topological order by construction; backward() walks the nodes once in
// reverse and invokes each node's pullback.
class Tape {
public:
    void record(const char* op, std::vector<std::uint64_t> inputs, std::uint64_t output,
                std::function<void()> backward);

    // Seeds d(loss)/d(loss) = 1 then sweeps the tape in reverse. The loss must
    // be a scalar produced on this tape (or a grad-carrying leaf when the tape
    // is empty).
    void backward(const TensorPtr& loss);

    std::size_t node_count() const { return nodes_.size(); }
    const std::vector<TapeNode>& nodes() const { return nodes_; }
    void clear() { nodes_.clear(); }

private:
    std::vector<TapeNode> nodes_;
};

}  // namespace fedlsi::nn
