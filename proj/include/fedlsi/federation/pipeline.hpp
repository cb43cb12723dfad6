#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedlsi/federation/federation.hpp"
#include "fedlsi/inversion/inversion.hpp"
#include "fedlsi/report/metrics.hpp"
#include "fedlsi/translator/translator.hpp"
#include "fedlsi/transport/channel.hpp"
#include "fedlsi/transport/ledger.hpp"

namespace fedlsi::federation {

struct ModelDims {
    std::size_t hidden = 32;
    std::size_t latent = 16;
};

struct PipelineConfig {
    RoundConfig round;
    TrainOptions train;
    inversion::SynthConfig synth;
    translator::GanConfig gan;
    ModelDims model;
    transport::TransportKind transport = transport::TransportKind::memory;
    int threads = 1;
};

struct ExperimentReport {
    std::vector<report::MetricsRow> rows;
    transport::CommsLedger ledger;
    int best_round = 0;
    double best_val_accuracy = 0.0;
    double test_accuracy_at_best = 0.0;
    std::uint64_t encoder_params = 0;
    std::uint64_t head_params = 0;  // wire count, running stats included
    std::uint64_t generator_params = 0;
    bool banks_purged = true;
    std::string bank_lifetime = "stages 2-3";
    std::vector<std::string> warnings;
};

// Full five-stage run: stage 1 local training, head-only upload, stage 2
// inversion, stage 3 translator training (banks purged after), generator
// delivery, then `rounds` iterations of stage 4 local training and stage 5
// aggregation/broadcast. All parameter exchange goes through transport links
// and is recorded in the ledger. Stages 2-3 run whenever the method is lsi;
// the ablation toggles gate only the di loss term and the aggregation mode.
ExperimentReport run_pipeline(const data::FederationSplit& split, const PipelineConfig& cfg,
                              std::uint64_t seed, const std::string& method_label);

// Baseline: the same round loop with the classification loss only and uniform
// aggregation; stages 2-3 are skipped entirely.
ExperimentReport run_fedavg(const data::FederationSplit& split, const PipelineConfig& cfg,
                            std::uint64_t seed);

}  // namespace fedlsi::federation
