#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedlsi/inversion/inversion.hpp"
#include "fedlsi/nn/layers.hpp"
#include "fedlsi/nn/tensor.hpp"

namespace fedlsi::translator {

struct GanConfig {
    double lambda_clsg = 1.0;
    double lambda_rec = 10.0;
    double lambda_clsd = 1.0;
    double gen_lr = 1e-4;
    double disc_lr = 1e-4;
    int steps = 1500;
    std::size_t batch = 32;
    std::size_t hidden = 64;
    double dropout = 0.5;
    double leaky_slope = 0.2;

    void validate() const;
};

// Three dense layers mapping (zhat ++ one-hot source ++ one-hot target) back
// into the latent space; leaky ReLU, layer norm and dropout between layers.
// Conditioning indices are client positions in [0, num_clients).
class GeneratorNet {
public:
    GeneratorNet(std::size_t latent_dim, std::size_t num_clients, std::size_t hidden, Rng& rng,
                 double leaky_slope = 0.2, double dropout = 0.5);

    // src/tgt hold one index per row (or a single shared index).
    nn::TensorPtr forward(nn::Tape* tape, const nn::TensorPtr& z, const std::vector<int>& src,
                          const std::vector<int>& tgt, nn::Mode mode,
                          Rng* dropout_rng = nullptr) const;

    std::size_t latent_dim() const { return latent_dim_; }
    std::size_t num_clients() const { return num_clients_; }

    std::vector<nn::TensorPtr> parameters() const;
    std::size_t wire_size() const;
    void to_wire(std::vector<double>& out) const;
    void from_wire(std::span<const double> in);
    GeneratorNet clone() const;

    nn::Linear l1, l2, l3;
    nn::LayerNorm ln1, ln2;

private:
    std::size_t latent_dim_;
    std::size_t num_clients_;
    double leaky_slope_;
    double dropout_;
};

// Shared trunk with two heads: a scalar real/fake score and client-index
// logits.
class DiscriminatorNet {
public:
    DiscriminatorNet(std::size_t latent_dim, std::size_t num_clients, std::size_t hidden,
                     Rng& rng, double leaky_slope = 0.2, double dropout = 0.5);

    nn::TensorPtr src_score(nn::Tape* tape, const nn::TensorPtr& z, nn::Mode mode,
                            Rng* dropout_rng = nullptr) const;   // (b, 1)
    nn::TensorPtr cls_logits(nn::Tape* tape, const nn::TensorPtr& z, nn::Mode mode,
                             Rng* dropout_rng = nullptr) const;  // (b, m)
    // One trunk pass feeding both heads.
    std::pair<nn::TensorPtr, nn::TensorPtr> forward_both(nn::Tape* tape, const nn::TensorPtr& z,
                                                         nn::Mode mode,
                                                         Rng* dropout_rng = nullptr) const;

    std::vector<nn::TensorPtr> parameters() const;

    nn::Linear l1, l2;
    nn::LayerNorm ln1, ln2;
    nn::Linear src_head, cls_head;

private:
    nn::TensorPtr trunk(nn::Tape* tape, const nn::TensorPtr& z, nn::Mode mode,
                        Rng* dropout_rng) const;
    std::size_t num_clients_;
    double leaky_slope_;
    double dropout_;
};

// Eval-mode translation of a batch with a single (source, target) pair.
nn::TensorPtr translate(const GeneratorNet& gen, const nn::TensorPtr& zhat, int src, int tgt,
                        nn::Mode mode = nn::Mode::eval, Rng* dropout_rng = nullptr);

// E log sigma(D_src(real)) + E log(1 - sigma(D_src(fake))); log arguments are
// clamped below at 1e-12. Maximized by the discriminator, minimized by the
// generator.
nn::TensorPtr loss_adv(nn::Tape* tape, const DiscriminatorNet& disc, const nn::TensorPtr& real,
                       const nn::TensorPtr& fake, nn::Mode mode = nn::Mode::train,
                       Rng* dropout_rng = nullptr);

// Cross entropy of D_cls on real bank vectors against their true client index.
nn::TensorPtr loss_clsd(nn::Tape* tape, const DiscriminatorNet& disc, const nn::TensorPtr& zhat,
                        const std::vector<int>& domains, nn::Mode mode = nn::Mode::train,
                        Rng* dropout_rng = nullptr);

// Cross entropy of D_cls(G(zhat, d, d')) against the target index d'. The
// discriminator is frozen inside this term; gradients reach only G.
nn::TensorPtr loss_clsg(nn::Tape* tape, const DiscriminatorNet& disc, const GeneratorNet& gen,
                        const nn::TensorPtr& zhat, const std::vector<int>& src,
                        const std::vector<int>& tgt, nn::Mode mode = nn::Mode::train,
                        Rng* dropout_rng = nullptr);

// Mean absolute difference between zhat and its round trip
// G(G(zhat, d, d'), d', d).
nn::TensorPtr loss_rec(nn::Tape* tape, const GeneratorNet& gen, const nn::TensorPtr& zhat,
                       const std::vector<int>& src, const std::vector<int>& tgt,
                       nn::Mode mode = nn::Mode::train, Rng* dropout_rng = nullptr);

// Stage 3: adversarial training over the pooled banks with same-class
// minibatches; returns the trained generator, the discriminator is dropped.
GeneratorNet train_translator(const std::vector<inversion::SynthBank>& banks,
                              const GanConfig& cfg, std::uint64_t seed,
                              std::vector<std::string>* warnings = nullptr);

}  // namespace fedlsi::translator
