#include "fedlsi/translator/translator.hpp"

#include <cmath>
#include <iostream>
#include <stdexcept>

#include "fedlsi/nn/ops.hpp"
#include "fedlsi/nn/optim.hpp"

namespace fedlsi::translator {

using nn::Mode;
using nn::Tape;
using nn::Tensor;
using nn::TensorPtr;

void GanConfig::validate() const {
    if (lambda_clsg < 0.0 || lambda_rec < 0.0 || lambda_clsd < 0.0) {
        throw std::invalid_argument("gan config: loss coefficients must be >= 0");
    }
    if (gen_lr <= 0.0 || disc_lr <= 0.0) {
        throw std::invalid_argument("gan config: learning rates must be > 0");
    }
    if (steps < 0) {
        throw std::invalid_argument("gan config: steps must be >= 0");
    }
    if (batch == 0) {
        throw std::invalid_argument("gan config: batch must be >= 1");
    }
    if (hidden == 0) {
        throw std::invalid_argument("gan config: hidden width must be >= 1");
    }
    if (dropout < 0.0 || dropout >= 1.0) {
        throw std::invalid_argument("gan config: dropout must be in [0, 1)");
    }
}

namespace {

// One-hot (src ++ tgt) conditioning block as a constant tensor.
TensorPtr one_hot_pair(std::size_t rows, std::size_t m, const std::vector<int>& src,
                       const std::vector<int>& tgt) {
    auto pick = [&](const std::vector<int>& v, std::size_t r) {
        const int idx = v.size() == 1 ? v[0] : v.at(r);
        if (idx < 0 || static_cast<std::size_t>(idx) >= m) {
            throw std::out_of_range("client index out of range");
        }
        return static_cast<std::size_t>(idx);
    };
    std::vector<double> vals(rows * 2 * m, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        vals[r * 2 * m + pick(src, r)] = 1.0;
        vals[r * 2 * m + m + pick(tgt, r)] = 1.0;
    }
    return Tensor::make({rows, 2 * m}, std::move(vals), false);
}

}  // namespace

GeneratorNet::GeneratorNet(std::size_t latent_dim, std::size_t num_clients, std::size_t hidden,
                           Rng& rng, double leaky_slope, double dropout)
    : l1(latent_dim + 2 * num_clients, hidden, rng),
      l2(hidden, hidden, rng),
      l3(hidden, latent_dim, rng),
      ln1(hidden),
      ln2(hidden),
      latent_dim_(latent_dim),
      num_clients_(num_clients),
      leaky_slope_(leaky_slope),
      dropout_(dropout) {
    if (num_clients < 2) {
        throw std::invalid_argument("generator needs at least 2 clients");
    }
}

TensorPtr GeneratorNet::forward(Tape* tape, const TensorPtr& z, const std::vector<int>& src,
                                const std::vector<int>& tgt, Mode mode, Rng* dropout_rng) const {
    if (z->cols() != latent_dim_) {
        throw std::invalid_argument("generator forward: latent width mismatch");
    }
    const bool training = mode == Mode::train;
    if (training && dropout_ > 0.0 && dropout_rng == nullptr) {
        throw std::invalid_argument("generator train-mode forward needs a dropout rng");
    }
    auto cond = one_hot_pair(z->rows(), num_clients_, src, tgt);
    auto h = nn::concat_cols(tape, z, cond);
    h = nn::leaky_relu(tape, l1.forward(tape, h), leaky_slope_);
    h = ln1.forward(tape, h);
    if (training) {
        h = nn::dropout(tape, h, dropout_, *dropout_rng, true);
    }
    h = nn::leaky_relu(tape, l2.forward(tape, h), leaky_slope_);
    h = ln2.forward(tape, h);
    if (training) {
        h = nn::dropout(tape, h, dropout_, *dropout_rng, true);
    }
    return l3.forward(tape, h);
}

std::vector<TensorPtr> GeneratorNet::parameters() const {
    return {l1.weight, l1.bias, ln1.gamma, ln1.beta, l2.weight, l2.bias,
            ln2.gamma, ln2.beta, l3.weight, l3.bias};
}

std::size_t GeneratorNet::wire_size() const {
    return l1.wire_size() + ln1.wire_size() + l2.wire_size() + ln2.wire_size() + l3.wire_size();
}

void GeneratorNet::to_wire(std::vector<double>& out) const {
    nn::WireWriter w(out);
    l1.to_wire(w);
    ln1.to_wire(w);
    l2.to_wire(w);
    ln2.to_wire(w);
    l3.to_wire(w);
}

void GeneratorNet::from_wire(std::span<const double> in) {
    nn::WireReader r(in);
    l1.from_wire(r);
    ln1.from_wire(r);
    l2.from_wire(r);
    ln2.from_wire(r);
    l3.from_wire(r);
    if (!r.exhausted()) {
        throw std::invalid_argument("generator wire payload has trailing data");
    }
}

GeneratorNet GeneratorNet::clone() const {
    GeneratorNet c = *this;
    c.l1 = l1.clone();
    c.l2 = l2.clone();
    c.l3 = l3.clone();
    c.ln1 = ln1.clone();
    c.ln2 = ln2.clone();
    return c;
}

DiscriminatorNet::DiscriminatorNet(std::size_t latent_dim, std::size_t num_clients,
                                   std::size_t hidden, Rng& rng, double leaky_slope,
                                   double dropout)
    : l1(latent_dim, hidden, rng),
      l2(hidden, hidden, rng),
      ln1(hidden),
      ln2(hidden),
      src_head(hidden, 1, rng),
      cls_head(hidden, num_clients, rng),
      num_clients_(num_clients),
      leaky_slope_(leaky_slope),
      dropout_(dropout) {}

TensorPtr DiscriminatorNet::trunk(Tape* tape, const TensorPtr& z, Mode mode,
                                  Rng* dropout_rng) const {
    const bool training = mode == Mode::train;
    if (training && dropout_ > 0.0 && dropout_rng == nullptr) {
        throw std::invalid_argument("discriminator train-mode forward needs a dropout rng");
    }
    auto h = nn::leaky_relu(tape, l1.forward(tape, z), leaky_slope_);
    h = ln1.forward(tape, h);
    if (training) {
        h = nn::dropout(tape, h, dropout_, *dropout_rng, true);
    }
    h = nn::leaky_relu(tape, l2.forward(tape, h), leaky_slope_);
    h = ln2.forward(tape, h);
    if (training) {
        h = nn::dropout(tape, h, dropout_, *dropout_rng, true);
    }
    return h;
}

TensorPtr DiscriminatorNet::src_score(Tape* tape, const TensorPtr& z, Mode mode,
                                      Rng* dropout_rng) const {
    return src_head.forward(tape, trunk(tape, z, mode, dropout_rng));
}

TensorPtr DiscriminatorNet::cls_logits(Tape* tape, const TensorPtr& z, Mode mode,
                                       Rng* dropout_rng) const {
    return cls_head.forward(tape, trunk(tape, z, mode, dropout_rng));
}

std::pair<TensorPtr, TensorPtr> DiscriminatorNet::forward_both(Tape* tape, const TensorPtr& z,
                                                               Mode mode,
                                                               Rng* dropout_rng) const {
    auto h = trunk(tape, z, mode, dropout_rng);
    return {src_head.forward(tape, h), cls_head.forward(tape, h)};
}

std::vector<TensorPtr> DiscriminatorNet::parameters() const {
    return {l1.weight,       l1.bias,       ln1.gamma,       ln1.beta,
            l2.weight,       l2.bias,       ln2.gamma,       ln2.beta,
            src_head.weight, src_head.bias, cls_head.weight, cls_head.bias};
}

TensorPtr translate(const GeneratorNet& gen, const TensorPtr& zhat, int src, int tgt, Mode mode,
                    Rng* dropout_rng) {
    return gen.forward(nullptr, zhat, {src}, {tgt}, mode, dropout_rng);
}

namespace {

constexpr double kLogClamp = 1e-12;

// E log sigma(score_real) + E log(1 - sigma(score_fake)) from precomputed
// src-head scores.
TensorPtr adv_from_scores(Tape* tape, const TensorPtr& real_score, const TensorPtr& fake_score) {
    auto real_term =
        nn::mean_all(tape, nn::log_elem(tape, nn::clamp_min(tape, nn::sigmoid(tape, real_score),
                                                            kLogClamp)));
    auto one_minus = nn::scale(tape, nn::sub(tape, nn::sigmoid(tape, fake_score),
                                             Tensor::make(fake_score->shape(),
                                                          std::vector<double>(fake_score->size(),
                                                                              1.0),
                                                          false)),
                               -1.0);
    auto fake_term =
        nn::mean_all(tape, nn::log_elem(tape, nn::clamp_min(tape, one_minus, kLogClamp)));
    return nn::add(tape, real_term, fake_term);
}

}  // namespace

TensorPtr loss_adv(Tape* tape, const DiscriminatorNet& disc, const TensorPtr& real,
                   const TensorPtr& fake, Mode mode, Rng* dropout_rng) {
    if (real->rows() == 0 || fake->rows() == 0) {
        throw std::invalid_argument("loss_adv: batches must be nonempty");
    }
    auto real_score = disc.src_score(tape, real, mode, dropout_rng);
    auto fake_score = disc.src_score(tape, fake, mode, dropout_rng);
    return adv_from_scores(tape, real_score, fake_score);
}

TensorPtr loss_clsd(Tape* tape, const DiscriminatorNet& disc, const TensorPtr& zhat,
                    const std::vector<int>& domains, Mode mode, Rng* dropout_rng) {
    auto logits = disc.cls_logits(tape, zhat, mode, dropout_rng);
    return nn::cross_entropy(tape, logits, domains);
}

TensorPtr loss_clsg(Tape* tape, const DiscriminatorNet& disc, const GeneratorNet& gen,
                    const TensorPtr& zhat, const std::vector<int>& src,
                    const std::vector<int>& tgt, Mode mode, Rng* dropout_rng) {
    nn::FreezeGuard freeze(disc.parameters());
    auto fake = gen.forward(tape, zhat, src, tgt, mode, dropout_rng);
    auto logits = disc.cls_logits(tape, fake, mode, dropout_rng);
    std::vector<int> targets(fake->rows());
    for (std::size_t r = 0; r < targets.size(); ++r) {
        targets[r] = tgt.size() == 1 ? tgt[0] : tgt.at(r);
    }
    return nn::cross_entropy(tape, logits, targets);
}

TensorPtr loss_rec(Tape* tape, const GeneratorNet& gen, const TensorPtr& zhat,
                   const std::vector<int>& src, const std::vector<int>& tgt, Mode mode,
                   Rng* dropout_rng) {
    auto there = gen.forward(tape, zhat, src, tgt, mode, dropout_rng);
    auto back = gen.forward(tape, there, tgt, src, mode, dropout_rng);
    return nn::mean_abs_diff(tape, zhat, back);
}

GeneratorNet train_translator(const std::vector<inversion::SynthBank>& banks,
                              const GanConfig& cfg, std::uint64_t seed,
                              std::vector<std::string>* warnings) {
    cfg.validate();
    if (banks.size() < 2) {
        throw std::invalid_argument("train_translator: need at least 2 client banks");
    }
    const std::size_t m = banks.size();
    const std::size_t p = banks.front().latent_dim();
    for (const auto& b : banks) {
        if (b.size() == 0) {
            throw std::invalid_argument("train_translator: empty bank for client " +
                                        std::to_string(b.client_id()));
        }
        if (b.latent_dim() != p) {
            throw std::invalid_argument("train_translator: latent dimension mismatch");
        }
    }

    // Pool bank rows per class; the client index is the bank position.
    int classes = 0;
    for (const auto& b : banks) {
        for (int y : b.labels()) {
            classes = std::max(classes, y + 1);
        }
    }
    struct PoolEntry {
        std::size_t bank;
        std::size_t row;
    };
    std::vector<std::vector<PoolEntry>> pool(static_cast<std::size_t>(classes));
    for (std::size_t bi = 0; bi < m; ++bi) {
        for (std::size_t r = 0; r < banks[bi].size(); ++r) {
            pool[static_cast<std::size_t>(banks[bi].labels()[r])].push_back({bi, r});
        }
    }
    std::vector<int> usable_classes;
    for (int y = 0; y < classes; ++y) {
        std::vector<bool> present(m, false);
        for (const auto& e : pool[static_cast<std::size_t>(y)]) {
            present[e.bank] = true;
        }
        for (std::size_t bi = 0; bi < m; ++bi) {
            if (!present[bi]) {
                const std::string msg = "class " + std::to_string(y) +
                                        " absent from client bank " +
                                        std::to_string(banks[bi].client_id()) +
                                        "; (class, client) pair skipped";
                if (warnings) {
                    warnings->push_back(msg);
                } else {
                    std::cerr << "warning: " << msg << "\n";
                }
            }
        }
        if (!pool[static_cast<std::size_t>(y)].empty()) {
            usable_classes.push_back(y);
        }
    }
    if (usable_classes.empty()) {
        throw std::invalid_argument("train_translator: no class has any bank vectors");
    }

    Rng init_rng(mix_seed(seed, seed_tag::gan, 0x1));
    GeneratorNet gen(p, m, cfg.hidden, init_rng, cfg.leaky_slope, cfg.dropout);
    DiscriminatorNet disc(p, m, cfg.hidden, init_rng, cfg.leaky_slope, cfg.dropout);

    nn::Adam gen_opt(gen.parameters(), {.lr = cfg.gen_lr});
    nn::Adam disc_opt(disc.parameters(), {.lr = cfg.disc_lr});

    Rng draw_rng(mix_seed(seed, seed_tag::gan, 0x2));
    Rng dropout_rng(mix_seed(seed, seed_tag::gan, 0x3));

    for (int step = 0; step < cfg.steps; ++step) {
        // Same-class minibatch pooled across clients; targets drawn uniformly.
        const int y = usable_classes[draw_rng.uniform_index(usable_classes.size())];
        const auto& entries = pool[static_cast<std::size_t>(y)];
        std::vector<double> vals(cfg.batch * p);
        std::vector<int> src(cfg.batch);
        std::vector<int> tgt(cfg.batch);
        for (std::size_t i = 0; i < cfg.batch; ++i) {
            const auto& e = entries[draw_rng.uniform_index(entries.size())];
            const auto& z = banks[e.bank].latents();
            std::copy_n(z->values().data() + e.row * p, p, vals.data() + i * p);
            src[i] = static_cast<int>(e.bank);
            tgt[i] = static_cast<int>(draw_rng.uniform_index(m));
        }
        auto real = Tensor::make({cfg.batch, p}, std::move(vals), false);

        // Discriminator step: minimize -L_adv + lambda_clsd * L_clsd; one
        // trunk pass on the real batch feeds both heads.
        {
            nn::FreezeGuard freeze(gen.parameters());
            Tape tape;
            auto fake = gen.forward(&tape, real, src, tgt, Mode::train, &dropout_rng);
            auto [real_score, real_cls] =
                disc.forward_both(&tape, real, Mode::train, &dropout_rng);
            auto fake_score = disc.src_score(&tape, fake, Mode::train, &dropout_rng);
            auto adv = adv_from_scores(&tape, real_score, fake_score);
            auto clsd = nn::cross_entropy(&tape, real_cls, src);
            auto loss = nn::add(&tape, nn::scale(&tape, adv, -1.0),
                                nn::scale(&tape, clsd, cfg.lambda_clsd));
            if (!std::isfinite(loss->value())) {
                throw std::runtime_error("translator discriminator diverged at step " +
                                         std::to_string(step));
            }
            tape.backward(loss);
            disc_opt.step();
            disc_opt.zero_grad();
        }

        // Generator step: minimize L_adv + lambda_clsg * L_clsg +
        // lambda_rec * L_rec, sharing one generator forward across the terms.
        {
            nn::FreezeGuard freeze(disc.parameters());
            Tape tape;
            auto fake = gen.forward(&tape, real, src, tgt, Mode::train, &dropout_rng);
            auto real_score = disc.src_score(&tape, real, Mode::train, &dropout_rng);
            auto [fake_score, fake_cls] =
                disc.forward_both(&tape, fake, Mode::train, &dropout_rng);
            auto adv = adv_from_scores(&tape, real_score, fake_score);
            auto clsg = nn::cross_entropy(&tape, fake_cls, tgt);
            auto cycled = gen.forward(&tape, fake, tgt, src, Mode::train, &dropout_rng);
            auto rec = nn::mean_abs_diff(&tape, real, cycled);
            auto loss = nn::add(
                &tape,
                nn::add(&tape, adv, nn::scale(&tape, clsg, cfg.lambda_clsg)),
                nn::scale(&tape, rec, cfg.lambda_rec));
            if (!std::isfinite(loss->value())) {
                throw std::runtime_error("translator generator diverged at step " +
                                         std::to_string(step));
            }
            tape.backward(loss);
            gen_opt.step();
            gen_opt.zero_grad();
        }
    }
    return gen;
}

}  // namespace fedlsi::translator
