#include "fedlsi/federation/pipeline.hpp"

#include <future>
#include <stdexcept>

namespace fedlsi::federation {

using transport::CommsLedger;
using transport::Direction;
using transport::Frame;
using transport::FrameType;
using transport::ParamBlob;
using transport::PartId;

namespace {

void parallel_for_clients(int threads, std::size_t m, const std::function<void(std::size_t)>& f) {
    if (threads <= 1 || m <= 1) {
        for (std::size_t i = 0; i < m; ++i) {
            f(i);
        }
        return;
    }
    std::vector<std::future<void>> futures;
    futures.reserve(m);
    for (std::size_t i = 0; i < m; ++i) {
        futures.push_back(std::async(std::launch::async, f, i));
    }
    for (auto& fut : futures) {
        fut.get();
    }
}

data::DomainDataset pool_examples(const std::vector<const data::DomainDataset*>& parts,
                                  int domain_id) {
    data::DomainDataset out;
    out.domain_id = domain_id;
    for (const auto* p : parts) {
        out.examples.insert(out.examples.end(), p->examples.begin(), p->examples.end());
    }
    return out;
}

// Server-side receive with the privacy posture enforced: before round 1 only
// classifier heads may cross the wire client-to-server.
ParamBlob receive_upload(transport::Endpoint& server_end, std::uint32_t expected_round) {
    auto frame = server_end.recv();
    if (!frame) {
        throw std::runtime_error("upload channel closed unexpectedly");
    }
    if (frame->type != FrameType::param_upload) {
        throw std::runtime_error("expected a param-upload frame");
    }
    auto blob = transport::blob_from_frame(*frame);
    if (blob.round != expected_round) {
        throw std::runtime_error("upload arrived for the wrong round");
    }
    if (expected_round == 0 && blob.part != PartId::head) {
        throw std::runtime_error("pre-round upload may only carry the classifier head");
    }
    return blob;
}

struct Selection {
    int best_round = 0;
    double best_val = -1.0;
    double test_at_best = 0.0;
};

}  // namespace

ExperimentReport run_pipeline(const data::FederationSplit& split, const PipelineConfig& cfg,
                              std::uint64_t seed, const std::string& method_label) {
    cfg.round.validate();
    cfg.synth.validate();
    cfg.gan.validate();
    const std::size_t m = split.clients.size();
    if (m < 2) {
        throw std::invalid_argument("pipeline: need at least 2 clients");
    }
    const std::size_t k = split.feature_dim;
    const std::size_t c = static_cast<std::size_t>(split.num_classes);
    const bool is_lsi = cfg.round.method == Method::lsi;

    ExperimentReport rep;
    const std::uint64_t run_seed = seed;

    // All clients start from the same initialization (the shared-pretrained
    // convention); no wire cost is charged for it.
    Rng init_rng(mix_seed(run_seed, seed_tag::model_init));
    nn::MlpEncoder init_encoder({k, cfg.model.hidden, cfg.model.latent}, init_rng);
    nn::ClassifierHead init_head(cfg.model.latent, c, init_rng);
    rep.encoder_params = init_encoder.wire_size();
    rep.head_params = init_head.wire_size();

    std::vector<ClientState> clients;
    clients.reserve(m);
    for (std::size_t i = 0; i < m; ++i) {
        ClientState st(init_encoder.clone(), init_head.clone());
        st.id = split.clients[i].domain_id;
        st.index = static_cast<int>(i);
        st.train_set = split.clients[i].train;
        st.val_set = split.clients[i].val;
        st.batch_seed =
            mix_seed(mix_seed(run_seed, seed_tag::client, static_cast<std::uint64_t>(st.id)),
                     seed_tag::batch);
        st.di_rng = std::make_unique<Rng>(
            mix_seed(mix_seed(run_seed, seed_tag::client, static_cast<std::uint64_t>(st.id)),
                     seed_tag::di_targets));
        clients.push_back(std::move(st));
    }

    std::vector<transport::Link> links;
    links.reserve(m);
    for (std::size_t i = 0; i < m; ++i) {
        links.push_back(transport::make_link(cfg.transport));
    }

    // ---- Stage 1: isolated local training ----
    parallel_for_clients(cfg.threads, m, [&](std::size_t i) {
        local_train_stage1(clients[i], cfg.round.local_epochs, cfg.train);
    });

    // ---- Stages 2 + 3 (lsi only): head upload, inversion, translator ----
    std::vector<std::unique_ptr<translator::GeneratorNet>> client_gens(m);
    if (is_lsi) {
        std::vector<nn::ClassifierHead> server_heads;
        server_heads.reserve(m);
        for (std::size_t i = 0; i < m; ++i) {
            std::vector<double> wire;
            clients[i].head.to_wire(wire);
            auto blob = transport::encode_params(PartId::head, clients[i].id, 0, wire);
            links[i].client->send(transport::frame_from_blob(FrameType::param_upload, blob));
            auto received = receive_upload(*links[i].server, 0);
            rep.ledger.record_transfer(0, Direction::client_to_server, clients[i].id, received);
            auto replica = init_head.clone();
            replica.from_wire(transport::decode_params(received));
            server_heads.push_back(std::move(replica));
        }

        std::vector<std::unique_ptr<inversion::SynthBank>> banks(m);
        parallel_for_clients(cfg.threads, m, [&](std::size_t i) {
            banks[i] = std::make_unique<inversion::SynthBank>(inversion::synthesize(
                server_heads[i], clients[i].train_set, cfg.synth,
                mix_seed(run_seed, seed_tag::synth, static_cast<std::uint64_t>(clients[i].id))));
        });

        std::vector<inversion::SynthBank> bank_list;
        bank_list.reserve(m);
        for (auto& b : banks) {
            bank_list.push_back(std::move(*b));
        }
        auto generator = translator::train_translator(bank_list, cfg.gan,
                                                      mix_seed(run_seed, seed_tag::gan),
                                                      &rep.warnings);
        for (auto& b : bank_list) {
            b.purge();
        }
        rep.banks_purged = true;

        std::vector<double> gen_wire;
        generator.to_wire(gen_wire);
        rep.generator_params = gen_wire.size();
        auto gen_blob =
            transport::encode_params(PartId::generator, transport::kServerId, 0, gen_wire);
        auto gen_frame = transport::frame_from_blob(FrameType::generator_delivery, gen_blob);
        for (std::size_t i = 0; i < m; ++i) {
            links[i].server->send(gen_frame);
            auto frame = links[i].client->recv();
            if (!frame || frame->type != FrameType::generator_delivery) {
                throw std::runtime_error("generator delivery failed");
            }
            auto blob = transport::blob_from_frame(*frame);
            rep.ledger.record_transfer(0, Direction::server_to_client, clients[i].id, blob);
            client_gens[i] = std::make_unique<translator::GeneratorNet>(generator.clone());
            client_gens[i]->from_wire(transport::decode_params(blob));
        }
    }

    // ---- Evaluation datasets ----
    std::vector<const data::DomainDataset*> val_parts;
    std::vector<const data::DomainDataset*> train_parts;
    for (const auto& cl : split.clients) {
        val_parts.push_back(&cl.val);
        train_parts.push_back(&cl.train);
    }
    const auto pooled_val = pool_examples(val_parts, -1);
    const auto pooled_train = pool_examples(train_parts, -1);
    std::vector<data::DomainDataset> local_full;
    local_full.reserve(m);
    for (const auto& cl : split.clients) {
        local_full.push_back(pool_examples({&cl.train, &cl.val}, cl.domain_id));
    }

    // ---- Rounds: stage 4 training + stage 5 aggregation ----
    Selection sel;
    std::vector<GlobalModel> replicas;
    replicas.reserve(m);
    for (std::size_t i = 0; i < m; ++i) {
        replicas.emplace_back(init_encoder.clone(), init_head.clone());
    }
    GlobalModel eval_model(init_encoder.clone(), init_head.clone());

    for (int round = 1; round <= cfg.round.rounds; ++round) {
        std::vector<ImportanceVector> raw_importance(m);
        parallel_for_clients(cfg.threads, m, [&](std::size_t i) {
            local_train_stage4(clients[i], client_gens[i].get(), m, cfg.round, cfg.train);
            if (cfg.round.use_importance) {
                raw_importance[i] = compute_importance(clients[i]);
            }
        });

        // Upload: full model (encoder + head) per client, in client order.
        for (std::size_t i = 0; i < m; ++i) {
            std::vector<double> enc_wire;
            clients[i].encoder.to_wire(enc_wire);
            auto enc_blob = transport::encode_params(PartId::encoder, clients[i].id,
                                                     static_cast<std::uint32_t>(round), enc_wire);
            links[i].client->send(transport::frame_from_blob(FrameType::param_upload, enc_blob));
            std::vector<double> head_wire;
            clients[i].head.to_wire(head_wire);
            auto head_blob = transport::encode_params(PartId::head, clients[i].id,
                                                      static_cast<std::uint32_t>(round), head_wire);
            links[i].client->send(transport::frame_from_blob(FrameType::param_upload, head_blob));

            for (int part = 0; part < 2; ++part) {
                auto blob = receive_upload(*links[i].server, static_cast<std::uint32_t>(round));
                rep.ledger.record_transfer(static_cast<std::uint32_t>(round),
                                           Direction::client_to_server, clients[i].id, blob);
                if (blob.part == PartId::encoder) {
                    replicas[i].encoder.from_wire(transport::decode_params(blob));
                } else {
                    replicas[i].head.from_wire(transport::decode_params(blob));
                }
            }
        }

        std::vector<const GlobalModel*> replica_ptrs;
        for (const auto& r : replicas) {
            replica_ptrs.push_back(&r);
        }
        GlobalModel global = [&] {
            if (cfg.round.use_importance) {
                auto normalized = normalize_importance(raw_importance);
                return aggregate(replica_ptrs, &normalized);
            }
            return aggregate(replica_ptrs, nullptr);
        }();

        // Broadcast: the same global blobs to every client.
        std::vector<double> genc_wire;
        global.encoder.to_wire(genc_wire);
        auto genc_blob = transport::encode_params(PartId::encoder, transport::kServerId,
                                                  static_cast<std::uint32_t>(round), genc_wire);
        std::vector<double> ghead_wire;
        global.head.to_wire(ghead_wire);
        auto ghead_blob = transport::encode_params(PartId::head, transport::kServerId,
                                                   static_cast<std::uint32_t>(round), ghead_wire);
        for (std::size_t i = 0; i < m; ++i) {
            links[i].server->send(transport::frame_from_blob(FrameType::param_broadcast, genc_blob));
            links[i].server->send(transport::frame_from_blob(FrameType::param_broadcast, ghead_blob));
            for (int part = 0; part < 2; ++part) {
                auto frame = links[i].client->recv();
                if (!frame || frame->type != FrameType::param_broadcast) {
                    throw std::runtime_error("broadcast delivery failed");
                }
                auto blob = transport::blob_from_frame(*frame);
                rep.ledger.record_transfer(static_cast<std::uint32_t>(round),
                                           Direction::server_to_client, clients[i].id, blob);
                if (blob.part == PartId::encoder) {
                    clients[i].encoder.from_wire(transport::decode_params(blob));
                } else {
                    clients[i].head.from_wire(transport::decode_params(blob));
                }
            }
        }

        // Evaluate exactly what the clients now hold (32-bit rounded global).
        eval_model.encoder.from_wire(transport::decode_params(genc_blob));
        eval_model.head.from_wire(transport::decode_params(ghead_blob));

        auto push_row = [&](const std::string& split_name, const EvalResult& r) {
            report::MetricsRow row;
            row.method = method_label;
            row.seed = seed;
            row.unseen = split.unseen.domain_id;
            row.round = round;
            row.split = split_name;
            row.accuracy = r.accuracy;
            row.loss = r.mean_loss;
            rep.rows.push_back(std::move(row));
        };

        const auto unseen_res = evaluate(eval_model.encoder, eval_model.head, split.unseen);
        push_row("unseen", unseen_res);
        const auto train_res = evaluate(eval_model.encoder, eval_model.head, pooled_train);
        push_row("train", train_res);
        double val_acc = -1.0;
        if (!pooled_val.empty()) {
            const auto val_res = evaluate(eval_model.encoder, eval_model.head, pooled_val);
            push_row("val", val_res);
            val_acc = val_res.accuracy;
        }
        for (std::size_t i = 0; i < m; ++i) {
            const auto local_res = evaluate(eval_model.encoder, eval_model.head, local_full[i]);
            push_row("local-client-" + std::to_string(clients[i].id), local_res);
        }

        // Best-validation selection, ties broken by the earlier round. With an
        // empty validation set selection falls back to the latest round.
        if (val_acc >= 0.0) {
            if (val_acc > sel.best_val) {
                sel.best_val = val_acc;
                sel.best_round = round;
                sel.test_at_best = unseen_res.accuracy;
            }
        } else {
            sel.best_val = 0.0;
            sel.best_round = round;
            sel.test_at_best = unseen_res.accuracy;
        }
    }

    for (auto& link : links) {
        link.client->close();
        link.server->close();
    }

    rep.best_round = sel.best_round;
    rep.best_val_accuracy = sel.best_val;
    rep.test_accuracy_at_best = sel.test_at_best;
    return rep;
}

ExperimentReport run_fedavg(const data::FederationSplit& split, const PipelineConfig& cfg,
                            std::uint64_t seed) {
    PipelineConfig fedavg_cfg = cfg;
    fedavg_cfg.round.method = Method::fedavg;
    fedavg_cfg.round.use_di = false;
    fedavg_cfg.round.use_importance = false;
    return run_pipeline(split, fedavg_cfg, seed, "fedavg");
}

}  // namespace fedlsi::federation
