#include "fedlsi/federation/federation.hpp"

#include <cmath>
#include <stdexcept>

#include "fedlsi/data/batching.hpp"
#include "fedlsi/nn/ops.hpp"

namespace fedlsi::federation {

using nn::Mode;
using nn::Tape;
using nn::Tensor;
using nn::TensorPtr;

void RoundConfig::validate() const {
    if (rounds < 1) {
        throw std::invalid_argument("round config: rounds must be >= 1");
    }
    if (local_epochs < 1) {
        throw std::invalid_argument("round config: local epochs must be >= 1");
    }
    if (lambda_di < 0.0) {
        throw std::invalid_argument("round config: lambda_di must be >= 0");
    }
}

std::vector<TensorPtr> ClientState::parameters() const {
    auto ps = encoder.parameters();
    for (const auto& p : head.parameters()) {
        ps.push_back(p);
    }
    return ps;
}

namespace {

std::vector<double> train_loop(ClientState& client, const translator::GeneratorNet* gen,
                               std::size_t num_clients, double lambda_di, int epochs,
                               const TrainOptions& opt) {
    if (client.train_set.empty()) {
        throw std::invalid_argument("local training: client dataset is empty");
    }
    nn::Sgd sgd(client.parameters(),
                {.lr = opt.lr, .momentum = opt.momentum, .weight_decay = opt.weight_decay});
    data::MinibatchIter iter(client.train_set, opt.batch, client.batch_seed);
    const bool with_di = gen != nullptr && lambda_di > 0.0;

    std::vector<double> epoch_losses;
    epoch_losses.reserve(static_cast<std::size_t>(epochs));
    for (int e = 0; e < epochs; ++e) {
        double loss_sum = 0.0;
        std::size_t batch_count = 0;
        for (const auto& batch : iter.next_epoch()) {
            auto x = data::batch_features(client.train_set, batch.indices);
            auto labels = data::batch_labels(client.train_set, batch.indices);
            Tape tape;
            auto z = client.encoder.forward(&tape, x);
            auto logits = client.head.forward(&tape, z, Mode::train);
            auto loss = nn::cross_entropy(&tape, logits, labels);
            if (with_di) {
                auto di = loss_di(&tape, client.encoder, *gen, x, client.index,
                                  *client.di_rng, num_clients);
                loss = nn::add(&tape, loss, nn::scale(&tape, di, lambda_di));
            }
            if (!std::isfinite(loss->value())) {
                throw std::runtime_error("local training diverged (non-finite loss) on client " +
                                         std::to_string(client.id));
            }
            tape.backward(loss);
            sgd.step();
            sgd.zero_grad();
            loss_sum += loss->value();
            ++batch_count;
        }
        epoch_losses.push_back(loss_sum / static_cast<double>(batch_count));
    }
    return epoch_losses;
}

}  // namespace

std::vector<double> local_train_stage1(ClientState& client, int epochs, const TrainOptions& opt) {
    if (epochs == 0) {
        return {};
    }
    return train_loop(client, nullptr, 0, 0.0, epochs, opt);
}

TensorPtr loss_di(Tape* tape, const nn::MlpEncoder& encoder, const translator::GeneratorNet& gen,
                  const TensorPtr& x, int client_index, Rng& rng, std::size_t num_clients) {
    if (client_index < 0 || static_cast<std::size_t>(client_index) >= num_clients) {
        throw std::out_of_range("loss_di: invalid client index");
    }
    const std::size_t b = x->rows();
    auto z = encoder.forward(tape, x);
    std::vector<int> src(b, client_index);
    std::vector<int> tgt(b);
    for (std::size_t i = 0; i < b; ++i) {
        tgt[i] = static_cast<int>(rng.uniform_index(num_clients));
    }
    nn::FreezeGuard freeze(gen.parameters());
    auto translated = gen.forward(tape, z, src, tgt, Mode::eval);
    auto diff = nn::sub(tape, z, translated);
    return nn::scale(tape, nn::sum_all(tape, nn::square(tape, diff)),
                     1.0 / static_cast<double>(b));
}

std::vector<double> local_train_stage4(ClientState& client, const translator::GeneratorNet* gen,
                                       std::size_t num_clients, const RoundConfig& cfg,
                                       const TrainOptions& opt) {
    const bool with_di = cfg.use_di && cfg.lambda_di > 0.0 && gen != nullptr;
    return train_loop(client, with_di ? gen : nullptr, num_clients, cfg.lambda_di,
                      cfg.local_epochs, opt);
}

ImportanceVector compute_importance(ClientState& client) {
    if (client.train_set.empty()) {
        throw std::invalid_argument("compute_importance: client dataset is empty");
    }
    auto enc_params = client.encoder.parameters();
    auto head_params = client.head.parameters();
    ImportanceVector imp;
    imp.encoder.assign(nn::param_count(enc_params), 0.0);
    imp.head.assign(nn::param_count(head_params), 0.0);

    for (const auto& ex : client.train_set.examples) {
        auto x = Tensor::make({1, ex.features.size()}, ex.features, false);

        // d||g(x)||2 / d(phi), one sample at a time so the absolute values do
        // not cancel across the batch.
        {
            Tape tape;
            auto z = client.encoder.forward(&tape, x);
            auto norm = nn::l2_norm(&tape, z);
            tape.backward(norm);
            std::size_t pos = 0;
            for (const auto& p : enc_params) {
                const auto& g = p->grad();
                for (double gv : g) {
                    imp.encoder[pos++] += std::abs(gv);
                }
                p->zero_grad();
            }
            // detach the latent for the head pass
            auto z_const = Tensor::make(z->shape(), z->values(), false);
            Tape tape2;
            auto logits = client.head.forward(&tape2, z_const, Mode::eval);
            auto norm2 = nn::l2_norm(&tape2, logits);
            tape2.backward(norm2);
            pos = 0;
            for (const auto& p : head_params) {
                const auto& g = p->grad();
                for (double gv : g) {
                    imp.head[pos++] += std::abs(gv);
                }
                p->zero_grad();
            }
        }
    }
    const double inv = 1.0 / static_cast<double>(client.train_set.size());
    for (double& v : imp.encoder) {
        v *= inv;
    }
    for (double& v : imp.head) {
        v *= inv;
    }
    return imp;
}

namespace {

std::vector<std::vector<double>> normalize_columns(
    const std::vector<const std::vector<double>*>& cols) {
    const std::size_t m = cols.size();
    const std::size_t n = cols.front()->size();
    for (const auto* c : cols) {
        if (c->size() != n) {
            throw std::invalid_argument("normalize_importance: misaligned vectors");
        }
    }
    std::vector<std::vector<double>> out(m, std::vector<double>(n, 0.0));
    for (std::size_t j = 0; j < n; ++j) {
        double sum = 0.0;
        for (const auto* c : cols) {
            const double v = (*c)[j];
            if (v < 0.0 || !std::isfinite(v)) {
                throw std::invalid_argument("normalize_importance: weights must be finite, >= 0");
            }
            sum += v;
        }
        if (sum < 1e-12) {
            for (std::size_t d = 0; d < m; ++d) {
                out[d][j] = 1.0 / static_cast<double>(m);
            }
        } else {
            for (std::size_t d = 0; d < m; ++d) {
                out[d][j] = (*cols[d])[j] / sum;
            }
        }
    }
    return out;
}

}  // namespace

std::vector<ImportanceVector> normalize_importance(const std::vector<ImportanceVector>& raw) {
    if (raw.empty()) {
        throw std::invalid_argument("normalize_importance: no clients");
    }
    std::vector<const std::vector<double>*> enc_cols;
    std::vector<const std::vector<double>*> head_cols;
    for (const auto& r : raw) {
        enc_cols.push_back(&r.encoder);
        head_cols.push_back(&r.head);
    }
    auto enc_norm = normalize_columns(enc_cols);
    auto head_norm = normalize_columns(head_cols);
    std::vector<ImportanceVector> out(raw.size());
    for (std::size_t d = 0; d < raw.size(); ++d) {
        out[d].encoder = std::move(enc_norm[d]);
        out[d].head = std::move(head_norm[d]);
    }
    return out;
}

GlobalModel aggregate(const std::vector<const GlobalModel*>& client_models,
                      const std::vector<ImportanceVector>* normalized) {
    if (client_models.empty()) {
        throw std::invalid_argument("aggregate: no client models");
    }
    const std::size_t m = client_models.size();
    if (normalized && normalized->size() != m) {
        throw std::invalid_argument("aggregate: importance list size mismatch");
    }

    GlobalModel global = client_models.front()->clone();
    auto enc_flat = nn::flatten_params(global.encoder.parameters());
    auto head_flat = nn::flatten_params(global.head.parameters());

    std::vector<std::vector<double>> enc_client(m);
    std::vector<std::vector<double>> head_client(m);
    for (std::size_t d = 0; d < m; ++d) {
        enc_client[d] = nn::flatten_params(client_models[d]->encoder.parameters());
        head_client[d] = nn::flatten_params(client_models[d]->head.parameters());
        if (enc_client[d].size() != enc_flat.size() || head_client[d].size() != head_flat.size()) {
            throw std::invalid_argument("aggregate: client model shapes are not aligned");
        }
        if (normalized) {
            if ((*normalized)[d].encoder.size() != enc_flat.size() ||
                (*normalized)[d].head.size() != head_flat.size()) {
                throw std::invalid_argument("aggregate: importance vectors are not aligned");
            }
        }
    }

    const double uniform = 1.0 / static_cast<double>(m);
    for (std::size_t j = 0; j < enc_flat.size(); ++j) {
        double acc = 0.0;
        for (std::size_t d = 0; d < m; ++d) {
            const double w = normalized ? (*normalized)[d].encoder[j] : uniform;
            acc += w * enc_client[d][j];
        }
        enc_flat[j] = acc;
    }
    for (std::size_t j = 0; j < head_flat.size(); ++j) {
        double acc = 0.0;
        for (std::size_t d = 0; d < m; ++d) {
            const double w = normalized ? (*normalized)[d].head[j] : uniform;
            acc += w * head_client[d][j];
        }
        head_flat[j] = acc;
    }
    nn::load_params(global.encoder.parameters(), enc_flat);
    nn::load_params(global.head.parameters(), head_flat);

    // Running statistics are not parameters of the aggregation rule; they are
    // averaged uniformly.
    const std::size_t p = global.head.bn.features();
    for (std::size_t c = 0; c < p; ++c) {
        double rm = 0.0;
        double rv = 0.0;
        for (std::size_t d = 0; d < m; ++d) {
            rm += client_models[d]->head.bn.running_mean[c];
            rv += client_models[d]->head.bn.running_var[c];
        }
        global.head.bn.running_mean[c] = rm * uniform;
        global.head.bn.running_var[c] = rv * uniform;
    }
    return global;
}

void broadcast(const GlobalModel& global, std::vector<ClientState>& clients) {
    auto enc_flat = nn::flatten_params(global.encoder.parameters());
    auto head_flat = nn::flatten_params(global.head.parameters());
    for (auto& client : clients) {
        nn::load_params(client.encoder.parameters(), enc_flat);
        nn::load_params(client.head.parameters(), head_flat);
        client.head.bn.running_mean = global.head.bn.running_mean;
        client.head.bn.running_var = global.head.bn.running_var;
    }
}

EvalResult evaluate(const nn::MlpEncoder& encoder, nn::ClassifierHead& head,
                    const data::DomainDataset& dataset) {
    if (dataset.empty()) {
        throw std::invalid_argument("evaluate: dataset is empty");
    }
    constexpr std::size_t kEvalBatch = 256;
    std::size_t correct = 0;
    double loss_sum = 0.0;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < dataset.size(); start += kEvalBatch) {
        const std::size_t end = std::min(start + kEvalBatch, dataset.size());
        idx.resize(end - start);
        for (std::size_t i = start; i < end; ++i) {
            idx[i - start] = i;
        }
        auto x = data::batch_features(dataset, idx);
        auto labels = data::batch_labels(dataset, idx);
        auto z = encoder.forward(nullptr, x);
        auto logits = head.forward(nullptr, z, Mode::eval);
        auto loss = nn::cross_entropy(nullptr, logits, labels);
        loss_sum += loss->value() * static_cast<double>(idx.size());
        const std::size_t c = logits->cols();
        for (std::size_t r = 0; r < idx.size(); ++r) {
            std::size_t argmax = 0;
            for (std::size_t j = 1; j < c; ++j) {
                if (logits->at(r, j) > logits->at(r, argmax)) {
                    argmax = j;
                }
            }
            if (static_cast<int>(argmax) == labels[r]) {
                ++correct;
            }
        }
    }
    EvalResult res;
    res.accuracy = static_cast<double>(correct) / static_cast<double>(dataset.size());
    res.mean_loss = loss_sum / static_cast<double>(dataset.size());
    return res;
}

}  // namespace fedlsi::federation
