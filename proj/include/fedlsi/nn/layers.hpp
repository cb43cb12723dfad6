#pragma once

#include <span>
#include <vector>

#include "fedlsi/nn/ops.hpp"
#include "fedlsi/nn/tensor.hpp"
#include "fedlsi/util.hpp"

namespace fedlsi::nn {

enum class Mode { train, eval };

// Cursor-style readers/writers for the documented flat parameter order:
// per dense layer weight row-major then bias; batch-norm gamma, beta,
// running_mean, running_var.
class WireWriter {
public:
    explicit WireWriter(std::vector<double>& out) : out_(out) {}
    void append(std::span<const double> v) { out_.insert(out_.end(), v.begin(), v.end()); }

private:
    std::vector<double>& out_;
};

class WireReader {
public:
    explicit WireReader(std::span<const double> in) : in_(in) {}
    void take(std::span<double> dst);
    bool exhausted() const { return pos_ == in_.size(); }

private:
    std::span<const double> in_;
    std::size_t pos_ = 0;
};

class Linear {
public:
    Linear(std::size_t in, std::size_t out, Rng& rng);

    TensorPtr forward(Tape* tape, const TensorPtr& x) const;

    std::size_t in_features() const { return in_; }
    std::size_t out_features() const { return out_; }

    std::vector<TensorPtr> parameters() const { return {weight, bias}; }
    std::size_t wire_size() const { return out_ * in_ + out_; }
    void to_wire(WireWriter& w) const;
    void from_wire(WireReader& r);
    Linear clone() const;

    TensorPtr weight;  // (out, in)
    TensorPtr bias;    // (out)

private:
    Linear(std::size_t in, std::size_t out) : in_(in), out_(out) {}
    std::size_t in_;
    std::size_t out_;
};

// 1-D batch normalization. Train mode normalizes with biased batch variance
// and folds the unbiased batch variance into the running estimate via
// r <- (1 - momentum) * r + momentum * batch_stat. Eval mode applies the
// running statistics as a fixed affine map. Train mode requires batch >= 2.
class BatchNorm1d {
public:
    BatchNorm1d(std::size_t features, double momentum = 0.1, double eps = 1e-5);

    TensorPtr forward(Tape* tape, const TensorPtr& x, Mode mode);

    std::size_t features() const { return features_; }
    double momentum() const { return momentum_; }
    double eps() const { return eps_; }

    std::vector<TensorPtr> parameters() const { return {gamma, beta}; }
    std::size_t wire_size() const { return 4 * features_; }
    void to_wire(WireWriter& w) const;
    void from_wire(WireReader& r);
    BatchNorm1d clone() const;

    TensorPtr gamma;  // (p)
    TensorPtr beta;   // (p)
    std::vector<double> running_mean;
    std::vector<double> running_var;

private:
    std::size_t features_;
    double momentum_;
    double eps_;
};

// Per-sample normalization with learnable affine (translator nets).
class LayerNorm {
public:
    explicit LayerNorm(std::size_t features, double eps = 1e-5);

    TensorPtr forward(Tape* tape, const TensorPtr& x) const {
        return layer_norm(tape, x, gamma, beta, eps_);
    }

    std::vector<TensorPtr> parameters() const { return {gamma, beta}; }
    std::size_t wire_size() const { return 2 * features_; }
    void to_wire(WireWriter& w) const;
    void from_wire(WireReader& r);
    LayerNorm clone() const;

    TensorPtr gamma;
    TensorPtr beta;

private:
    std::size_t features_;
    double eps_;
};

// Dense stack with ReLU between layers; stands in for the pretrained
// convolutional backbone at desk scale.
class MlpEncoder {
public:
    // dims = {input, hidden..., latent}; at least one layer
    MlpEncoder(const std::vector<std::size_t>& dims, Rng& rng);

    TensorPtr forward(Tape* tape, const TensorPtr& x) const;

    std::size_t in_dim() const { return layers_.front().in_features(); }
    std::size_t latent_dim() const { return layers_.back().out_features(); }

    std::vector<TensorPtr> parameters() const;
    std::size_t wire_size() const;
    void to_wire(std::vector<double>& out) const;
    void from_wire(std::span<const double> in);
    MlpEncoder clone() const;

    const std::vector<Linear>& layers() const { return layers_; }
    std::vector<Linear>& layers() { return layers_; }

private:
    MlpEncoder() = default;
    std::vector<Linear> layers_;
};

// Batch normalization over the latent features followed by one dense layer.
// This is the only model part shared server-side before the round loop.
class ClassifierHead {
public:
    ClassifierHead(std::size_t latent_dim, std::size_t classes, Rng& rng);

    TensorPtr forward(Tape* tape, const TensorPtr& z, Mode mode);

    std::size_t latent_dim() const { return bn.features(); }
    std::size_t classes() const { return fc.out_features(); }

    std::vector<TensorPtr> parameters() const;
    std::size_t wire_size() const { return bn.wire_size() + fc.wire_size(); }
    void to_wire(std::vector<double>& out) const;
    void from_wire(std::span<const double> in);
    ClassifierHead clone() const;

    BatchNorm1d bn;
    Linear fc;
};

// Flatten / restore trainable parameters (the aggregation coordinate space;
// running statistics are not part of it).
std::vector<double> flatten_params(const std::vector<TensorPtr>& params);
void load_params(const std::vector<TensorPtr>& params, std::span<const double> flat);
std::size_t param_count(const std::vector<TensorPtr>& params);

// Temporarily clears requires_grad on a parameter set; restores on scope exit.
class FreezeGuard {
public:
    explicit FreezeGuard(const std::vector<TensorPtr>& params);
    ~FreezeGuard();
    FreezeGuard(const FreezeGuard&) = delete;
    FreezeGuard& operator=(const FreezeGuard&) = delete;

private:
    std::vector<std::pair<TensorPtr, bool>> saved_;
};

}  // namespace fedlsi::nn
