#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fedlsi/data/split.hpp"
#include "fedlsi/nn/layers.hpp"
#include "fedlsi/nn/optim.hpp"
#include "fedlsi/translator/translator.hpp"
#include "fedlsi/util.hpp"

namespace fedlsi::federation {

enum class Method { lsi, fedavg };

struct RoundConfig {
    int rounds = 20;
    int local_epochs = 10;
    double lambda_di = 1.0;
    Method method = Method::lsi;
    bool use_di = true;
    bool use_importance = true;

    void validate() const;
};

struct TrainOptions {
    double lr = 0.001;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::size_t batch = 32;
};

// One federated participant: its model replica, local data and private RNG
// streams. Independent streams per concern keep runs bit-reproducible across
// feature toggles and thread counts.
struct ClientState {
    int id = 0;             // domain id
    int index = 0;          // position in the federation (one-hot conditioning)
    nn::MlpEncoder encoder;
    nn::ClassifierHead head;
    data::DomainDataset train_set;
    data::DomainDataset val_set;
    std::uint64_t batch_seed = 0;
    std::unique_ptr<Rng> di_rng;

    ClientState(nn::MlpEncoder enc, nn::ClassifierHead hd)
        : encoder(std::move(enc)), head(std::move(hd)) {}

    std::vector<nn::TensorPtr> parameters() const;
};

struct GlobalModel {
    nn::MlpEncoder encoder;
    nn::ClassifierHead head;

    GlobalModel(nn::MlpEncoder enc, nn::ClassifierHead hd)
        : encoder(std::move(enc)), head(std::move(hd)) {}
    GlobalModel clone() const { return GlobalModel(encoder.clone(), head.clone()); }
};

// Per-parameter sensitivity: mean over local samples of the absolute
// derivative of the model output norm, one aligned entry per trainable scalar
// of the encoder and (separately) the head.
struct ImportanceVector {
    std::vector<double> encoder;
    std::vector<double> head;
};

// Stage 1: SGD on the classification loss. Returns the mean training loss per
// epoch.
std::vector<double> local_train_stage1(ClientState& client, int epochs, const TrainOptions& opt);

// Mean squared Euclidean distance between g(x) and G(g(x), d, d') with d'
// drawn uniformly per sample. G is frozen; gradients reach the encoder
// through both occurrences of g(x).
nn::TensorPtr loss_di(nn::Tape* tape, const nn::MlpEncoder& encoder,
                      const translator::GeneratorNet& gen, const nn::TensorPtr& x,
                      int client_index, Rng& rng, std::size_t num_clients);

// Stage 4: cls + lambda_di * di. With use_di off (or lambda_di == 0, or no
// translator) this is exactly the stage-1 loop, bit for bit.
std::vector<double> local_train_stage4(ClientState& client, const translator::GeneratorNet* gen,
                                       std::size_t num_clients, const RoundConfig& cfg,
                                       const TrainOptions& opt);

ImportanceVector compute_importance(ClientState& client);

// Per coordinate: w_d / sum_d w_d, falling back to uniform 1/m when the
// column sum is below 1e-12.
std::vector<ImportanceVector> normalize_importance(const std::vector<ImportanceVector>& raw);

// Importance mode: per-coordinate convex combination with normalized weights;
// uniform mode (null weights): plain mean. Head running statistics are always
// averaged uniformly.
GlobalModel aggregate(const std::vector<const GlobalModel*>& client_models,
                      const std::vector<ImportanceVector>* normalized);

// Overwrites every client's parameters and running statistics with the global
// model's.
void broadcast(const GlobalModel& global, std::vector<ClientState>& clients);

struct EvalResult {
    double accuracy = 0.0;
    double mean_loss = 0.0;
};

EvalResult evaluate(const nn::MlpEncoder& encoder, nn::ClassifierHead& head,
                    const data::DomainDataset& dataset);

}  // namespace fedlsi::federation
