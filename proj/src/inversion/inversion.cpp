#include "fedlsi/inversion/inversion.hpp"

#include <cmath>
#include <fstream>
#include <cstring>
#include <stdexcept>

#include "fedlsi/nn/ops.hpp"
#include "fedlsi/util.hpp"

namespace fedlsi::inversion {

using nn::Tape;
using nn::Tensor;
using nn::TensorPtr;

void SynthConfig::validate() const {
    if (lambda_bn < 0.0 || lambda_norm < 0.0) {
        throw std::invalid_argument("synth config: loss coefficients must be >= 0");
    }
    if (lr <= 0.0) {
        throw std::invalid_argument("synth config: lr must be > 0");
    }
    if (steps < 0) {
        throw std::invalid_argument("synth config: steps must be >= 0");
    }
    if (batch < 2) {
        throw std::invalid_argument("synth config: batch must be >= 2 (batch variance)");
    }
    if (samples_per_client < batch) {
        throw std::invalid_argument("synth config: samples_per_client must be >= batch");
    }
}

std::uint64_t SynthConfig::hash() const {
    // FNV-1a over the packed fields
    std::uint64_t h = 1469598103934665603ull;
    auto mixin = [&h](std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= (v >> (8 * i)) & 0xFF;
            h *= 1099511628211ull;
        }
    };
    auto mixd = [&](double v) {
        std::uint64_t bits;
        static_assert(sizeof(bits) == sizeof(v));
        std::memcpy(&bits, &v, sizeof(bits));
        mixin(bits);
    };
    mixd(lambda_bn);
    mixd(lambda_norm);
    mixd(lr);
    mixin(static_cast<std::uint64_t>(steps));
    mixin(batch);
    mixin(samples_per_client);
    return h;
}

SynthBank::SynthBank(int client_id, TensorPtr latents, std::vector<int> labels,
                     std::uint64_t seed, std::uint64_t config_hash)
    : client_id_(client_id),
      latents_(std::move(latents)),
      labels_(std::move(labels)),
      seed_(seed),
      config_hash_(config_hash) {
    if (!latents_ || latents_->rank() != 2) {
        throw std::invalid_argument("synth bank latents must be a (s, p) matrix");
    }
    if (labels_.size() != latents_->rows()) {
        throw std::invalid_argument("synth bank label count mismatch");
    }
    nn::require_finite(*latents_, "synth bank");
}

const TensorPtr& SynthBank::latents() const {
    if (purged_) {
        throw std::logic_error("synth bank was purged");
    }
    return latents_;
}

const std::vector<int>& SynthBank::labels() const {
    if (purged_) {
        throw std::logic_error("synth bank was purged");
    }
    return labels_;
}

std::size_t SynthBank::size() const {
    return latents()->rows();
}

std::size_t SynthBank::latent_dim() const {
    return latents()->cols();
}

void SynthBank::purge() {
    latents_.reset();
    labels_.clear();
    labels_.shrink_to_fit();
    purged_ = true;
}

std::vector<int> sample_label_targets(const data::DomainDataset& dataset, std::size_t count,
                                      std::uint64_t seed) {
    if (dataset.empty()) {
        throw std::invalid_argument("sample_label_targets: dataset is empty");
    }
    Rng rng(mix_seed(seed, seed_tag::synth, 0x1));
    std::vector<int> out(count);
    for (std::size_t i = 0; i < count; ++i) {
        out[i] = dataset.examples[rng.uniform_index(dataset.size())].label;
    }
    return out;
}

namespace {

void require_frozen(const nn::ClassifierHead& head) {
    for (const auto& p : head.parameters()) {
        if (p->requires_grad()) {
            throw std::logic_error("classifier head must be frozen during inversion");
        }
    }
}

}  // namespace

TensorPtr loss_clsz(Tape* tape, const TensorPtr& zhat, const std::vector<int>& labels,
                    nn::ClassifierHead& head) {
    require_frozen(head);
    auto logits = head.forward(tape, zhat, nn::Mode::eval);
    return nn::cross_entropy(tape, logits, labels);
}

TensorPtr loss_bn(Tape* tape, const TensorPtr& zhat, const nn::BatchNorm1d& bn) {
    const std::size_t b = zhat->rows();
    const std::size_t p = zhat->cols();
    if (b < 2) {
        throw std::invalid_argument("loss_bn: batch size must be >= 2");
    }
    if (p != bn.features()) {
        throw std::invalid_argument("loss_bn: feature width mismatch");
    }
    auto mu = nn::batch_mean(tape, zhat);
    auto centered = nn::sub_rowvec(tape, zhat, mu);
    auto var_biased = nn::batch_mean(tape, nn::square(tape, centered));
    auto var = nn::scale(tape, var_biased,
                         static_cast<double>(b) / static_cast<double>(b - 1));
    auto rm = Tensor::make({p}, bn.running_mean, false);
    auto rv = Tensor::make({p}, bn.running_var, false);
    auto mean_term = nn::sum_all(tape, nn::square(tape, nn::sub(tape, mu, rm)));
    auto var_term = nn::sum_all(tape, nn::square(tape, nn::sub(tape, var, rv)));
    return nn::add(tape, mean_term, var_term);
}

TensorPtr loss_norm(Tape* tape, const TensorPtr& zhat) {
    const double inv_b = 1.0 / static_cast<double>(zhat->rows());
    return nn::scale(tape, nn::sum_all(tape, nn::square(tape, zhat)), inv_b);
}

SynthBank synthesize(const nn::ClassifierHead& head, const data::DomainDataset& dataset,
                     const SynthConfig& cfg, std::uint64_t seed,
                     const SynthTermToggles& toggles) {
    cfg.validate();
    auto frozen = head.clone();
    for (const auto& p : frozen.parameters()) {
        p->set_requires_grad(false);
    }
    const std::size_t s = cfg.samples_per_client;
    const std::size_t p = frozen.latent_dim();

    auto targets = sample_label_targets(dataset, s, seed);

    Rng init_rng(mix_seed(seed, seed_tag::synth, 0x2));
    std::vector<double> init(s * p);
    for (double& v : init) {
        v = init_rng.normal();
    }
    auto latents = Tensor::make({s, p}, std::move(init), true);

    // Each synthesized vector owns its own Adam moments and step counter so a
    // vector only advances when it appears in a batch.
    std::vector<double> m(s * p, 0.0);
    std::vector<double> v(s * p, 0.0);
    std::vector<long> t(s, 0);

    Rng batch_rng(mix_seed(seed, seed_tag::synth, 0x3));
    std::vector<std::size_t> order(s);
    for (std::size_t i = 0; i < s; ++i) {
        order[i] = i;
    }
    std::size_t cursor = 0;
    batch_rng.shuffle(order);

    const double beta1 = 0.9;
    const double beta2 = 0.999;
    const double eps = 1e-8;

    for (int step = 0; step < cfg.steps; ++step) {
        std::vector<std::size_t> rows;
        rows.reserve(cfg.batch);
        while (rows.size() < cfg.batch) {
            if (cursor == s) {
                cursor = 0;
                batch_rng.shuffle(order);
            }
            rows.push_back(order[cursor++]);
        }
        std::vector<int> labels(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            labels[i] = targets[rows[i]];
        }

        Tape tape;
        auto zb = nn::gather_rows(&tape, latents, rows);
        TensorPtr loss;
        if (toggles.use_clsz) {
            loss = loss_clsz(&tape, zb, labels, frozen);
        }
        if (toggles.use_bn && cfg.lambda_bn > 0.0) {
            auto term = nn::scale(&tape, loss_bn(&tape, zb, frozen.bn), cfg.lambda_bn);
            loss = loss ? nn::add(&tape, loss, term) : term;
        }
        if (toggles.use_norm && cfg.lambda_norm > 0.0) {
            auto term = nn::scale(&tape, loss_norm(&tape, zb), cfg.lambda_norm);
            loss = loss ? nn::add(&tape, loss, term) : term;
        }
        if (!loss) {
            break;  // every term disabled; nothing to optimize
        }
        if (!std::isfinite(loss->value())) {
            throw std::runtime_error("inversion diverged (non-finite loss) at step " +
                                     std::to_string(step) + " for client " +
                                     std::to_string(dataset.domain_id));
        }
        tape.backward(loss);

        const auto& g = latents->grad();
        for (std::size_t row : rows) {
            ++t[row];
            const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t[row]));
            const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t[row]));
            for (std::size_t c = 0; c < p; ++c) {
                const std::size_t j = row * p + c;
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                const double mhat = m[j] / bc1;
                const double vhat = v[j] / bc2;
                latents->values()[j] -= cfg.lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
        latents->zero_grad();
    }

    latents->set_requires_grad(false);
    return SynthBank(dataset.domain_id, latents, std::move(targets), seed, cfg.hash());
}

void dump_banks_csv(const std::vector<SynthBank>& banks, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write bank dump: " + path);
    }
    std::size_t p = 0;
    for (const auto& b : banks) {
        if (!b.purged()) {
            p = b.latent_dim();
            break;
        }
    }
    out << "client,label";
    for (std::size_t j = 0; j < p; ++j) {
        out << ",z" << j;
    }
    out << "\n";
    for (const auto& b : banks) {
        for (std::size_t i = 0; i < b.size(); ++i) {
            out << b.client_id() << "," << b.labels()[i];
            for (std::size_t j = 0; j < p; ++j) {
                out << "," << format_shortest(b.latents()->at(i, j));
            }
            out << "\n";
        }
    }
}

}  // namespace fedlsi::inversion
