#pragma once

#include <cstdint>
#include <vector>

#include "fedlsi/data/dataset.hpp"
#include "fedlsi/nn/layers.hpp"
#include "fedlsi/nn/tensor.hpp"

namespace fedlsi::inversion {

struct SynthConfig {
    double lambda_bn = 0.001;
    double lambda_norm = 0.0001;
    double lr = 0.0001;
    int steps = 2000;
    std::size_t batch = 32;
    std::size_t samples_per_client = 200;

    void validate() const;
    std::uint64_t hash() const;
};

// Per-client collection of synthesized latent vectors. Exists only between
// stage 2 and stage 3; purge() releases the contents and any later access
// throws.
class SynthBank {
public:
    SynthBank(int client_id, nn::TensorPtr latents, std::vector<int> labels, std::uint64_t seed,
              std::uint64_t config_hash);

    const nn::TensorPtr& latents() const;
    const std::vector<int>& labels() const;
    int client_id() const { return client_id_; }
    std::size_t size() const;
    std::size_t latent_dim() const;
    std::uint64_t seed() const { return seed_; }
    std::uint64_t config_hash() const { return config_hash_; }

    void purge();
    bool purged() const { return purged_; }

private:
    int client_id_;
    nn::TensorPtr latents_;  // (s, p)
    std::vector<int> labels_;
    std::uint64_t seed_;
    std::uint64_t config_hash_;
    bool purged_ = false;
};

// Labels drawn with replacement from the client's empirical class frequencies.
std::vector<int> sample_label_targets(const data::DomainDataset& dataset, std::size_t count,
                                      std::uint64_t seed);

// Cross entropy of head(zhat) against the sampled targets. The head must be
// frozen (no parameter requires gradients); its normalization runs in eval
// mode so the class signal stays decoupled from the statistic matching.
nn::TensorPtr loss_clsz(nn::Tape* tape, const nn::TensorPtr& zhat, const std::vector<int>& labels,
                        nn::ClassifierHead& head);

// Squared Euclidean distance of the batch mean and unbiased batch variance of
// zhat from the head's running statistics. Needs batch >= 2.
nn::TensorPtr loss_bn(nn::Tape* tape, const nn::TensorPtr& zhat, const nn::BatchNorm1d& bn);

// Mean over the batch of the squared Euclidean norm of zhat.
nn::TensorPtr loss_norm(nn::Tape* tape, const nn::TensorPtr& zhat);

// Optional per-term toggles used by the projection ablation exports.
struct SynthTermToggles {
    bool use_clsz = true;
    bool use_bn = true;
    bool use_norm = true;
};

// Stage 2: initialize samples_per_client vectors from the standard normal and
// run `steps` Adam iterations of clsz + lambda_bn * bn + lambda_norm * norm.
// The head is cloned internally, so the caller's head is untouched.
SynthBank synthesize(const nn::ClassifierHead& head, const data::DomainDataset& dataset,
                     const SynthConfig& cfg, std::uint64_t seed,
                     const SynthTermToggles& toggles = {});

// Debug dump, gated behind an explicit CLI flag (default off).
void dump_banks_csv(const std::vector<SynthBank>& banks, const std::string& path);

}  // namespace fedlsi::inversion
