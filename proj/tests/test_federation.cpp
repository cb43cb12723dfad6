#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fedlsi/data/split.hpp"
#include "fedlsi/federation/pipeline.hpp"
#include "fedlsi/nn/grad_check.hpp"
#include "fedlsi/nn/ops.hpp"
#include "fedlsi/report/metrics.hpp"

using namespace fedlsi;
using namespace fedlsi::federation;
using nn::Tape;
using nn::Tensor;

namespace {

data::SyntheticSpec four_domain_spec(double sigma = 0.3, int samples = 120) {
    data::SyntheticSpec spec;
    spec.classes = 2;
    spec.domains = {{.angle_deg = 0.0},
                    {.angle_deg = 30.0},
                    {.angle_deg = 60.0},
                    {.angle_deg = 90.0}};
    spec.noise_sigma = sigma;
    spec.samples_per_domain = samples;
    spec.ambient_dim = 8;
    return spec;
}

ClientState make_client(const data::DomainDataset& ds, std::size_t hidden, std::size_t latent,
                        std::uint64_t seed) {
    Rng rng(mix_seed(seed, seed_tag::model_init));
    nn::MlpEncoder enc({ds.feature_dim(), hidden, latent}, rng);
    nn::ClassifierHead head(latent, static_cast<std::size_t>(ds.class_count()), rng);
    ClientState client(std::move(enc), std::move(head));
    client.id = ds.domain_id;
    client.index = 0;
    client.train_set = ds;
    client.batch_seed = mix_seed(seed, seed_tag::batch);
    client.di_rng = std::make_unique<Rng>(mix_seed(seed, seed_tag::di_targets));
    return client;
}

PipelineConfig tiny_pipeline_config() {
    PipelineConfig cfg;
    cfg.round.rounds = 2;
    cfg.round.local_epochs = 2;
    cfg.model.hidden = 8;
    cfg.model.latent = 4;
    cfg.synth.steps = 60;
    cfg.synth.samples_per_client = 24;
    cfg.synth.batch = 12;
    cfg.gan.steps = 40;
    cfg.gan.hidden = 8;
    cfg.gan.batch = 8;
    return cfg;
}

}  // namespace

TEST_CASE("stage-1 training fits a separable client") {
    auto datasets = data::generate_rotated_blobs(four_domain_spec(0.25), 3);
    auto client = make_client(datasets[0], 16, 8, 5);
    local_train_stage1(client, 50, {});
    const auto res = evaluate(client.encoder, client.head, client.train_set);
    CHECK(res.accuracy >= 0.99);
}

TEST_CASE("zero epochs leave parameters unchanged") {
    auto datasets = data::generate_rotated_blobs(four_domain_spec(), 3);
    auto client = make_client(datasets[0], 8, 4, 5);
    auto before = nn::flatten_params(client.parameters());
    local_train_stage1(client, 0, {});
    CHECK(nn::flatten_params(client.parameters()) == before);
}

TEST_CASE("loss_di squared-distance arithmetic against a zeroed translator") {
    Rng rng(7);
    nn::MlpEncoder enc({2, 2}, rng);
    enc.layers()[0].weight->values() = {1, 0, 0, 0};
    enc.layers()[0].bias->values() = {0, 0};
    translator::GeneratorNet gen(2, 2, 4, rng, 0.2, 0.0);
    for (const auto& p : gen.parameters()) {
        for (double& v : p->values()) {
            v = 0.0;
        }
    }
    // g(x) = [1, 0], G(.) = [0, 0] -> squared distance 1
    auto x = Tensor::make({1, 2}, {1.0, 0.0});
    Rng drng(1);
    auto loss = loss_di(nullptr, enc, gen, x, 0, drng, 2);
    CHECK(loss->value() == doctest::Approx(1.0));

    Rng drng2(1);
    CHECK_THROWS(loss_di(nullptr, enc, gen, x, 5, drng2, 2));
}

TEST_CASE("loss_di sends no gradient into the frozen translator") {
    Rng rng(8);
    nn::MlpEncoder enc({3, 4, 3}, rng);
    translator::GeneratorNet gen(3, 2, 6, rng, 0.2, 0.0);
    auto x = Tensor::make({4, 3},
                          {0.5, -0.2, 0.7, 1.0, 0.3, -0.6, -0.4, 0.8, 0.1, 0.2, -0.9, 0.5});
    Tape tape;
    Rng drng(3);
    auto loss = loss_di(&tape, enc, gen, x, 1, drng, 2);
    tape.backward(loss);
    for (const auto& p : gen.parameters()) {
        CHECK_FALSE(p->has_grad());
    }
    bool enc_grad = false;
    for (const auto& p : enc.parameters()) {
        if (p->has_grad()) {
            enc_grad = true;
        }
    }
    CHECK(enc_grad);
}

TEST_CASE("loss_di encoder gradients match finite differences") {
    Rng rng(9);
    nn::MlpEncoder enc({2, 3, 2}, rng);
    translator::GeneratorNet gen(2, 2, 4, rng, 0.2, 0.0);
    auto x = Tensor::make({3, 2}, {0.4, -0.3, 0.9, 0.2, -0.5, 0.6});
    auto fn = [&](Tape* tape) {
        Rng drng(11);  // fresh identical targets per evaluation
        return loss_di(tape, enc, gen, x, 0, drng, 2);
    };
    CHECK(nn::grad_check(fn, enc.parameters(), 1e-5).max_rel_error < 1e-4);
}

TEST_CASE("importance closed form for a one-dimensional linear encoder") {
    data::DomainDataset ds;
    ds.domain_id = 0;
    const std::vector<double> xs{0.5, -1.5, 2.0, -0.25};
    for (double v : xs) {
        ds.examples.push_back({{v}, 0, 0});
    }
    Rng rng(10);
    nn::MlpEncoder enc({1, 1}, rng);
    enc.layers()[0].weight->values() = {0.8};
    enc.layers()[0].bias->values() = {0.0};
    nn::ClassifierHead head(1, 2, rng);
    ClientState client(std::move(enc), std::move(head));
    client.train_set = ds;
    auto imp = compute_importance(client);

    // |d|w x|/dw| = |x|; with b = 0 the bias derivative has magnitude 1
    double mean_abs_x = 0.0;
    for (double v : xs) {
        mean_abs_x += std::abs(v);
    }
    mean_abs_x /= static_cast<double>(xs.size());
    REQUIRE(imp.encoder.size() == 2);
    CHECK(imp.encoder[0] == doctest::Approx(mean_abs_x).epsilon(1e-9));
    CHECK(imp.encoder[1] == doctest::Approx(1.0).epsilon(1e-9));

    // duplicating every sample leaves the mean unchanged
    auto doubled = ds;
    doubled.examples.insert(doubled.examples.end(), ds.examples.begin(), ds.examples.end());
    client.train_set = doubled;
    auto imp2 = compute_importance(client);
    CHECK(imp2.encoder[0] == doctest::Approx(imp.encoder[0]).epsilon(1e-12));
}

TEST_CASE("dead units receive zero importance") {
    data::DomainDataset ds;
    ds.domain_id = 0;
    ds.examples.push_back({{1.0}, 0, 0});
    ds.examples.push_back({{-2.0}, 0, 0});
    Rng rng(11);
    nn::MlpEncoder enc({1, 2}, rng);
    enc.layers()[0].weight->values() = {0.7, 0.0};  // second output unit is dead
    enc.layers()[0].bias->values() = {0.0, 0.0};
    nn::ClassifierHead head(2, 2, rng);
    ClientState client(std::move(enc), std::move(head));
    client.train_set = ds;
    auto imp = compute_importance(client);
    // weight[1] and bias[1] feed an always-zero coordinate
    CHECK(imp.encoder[1] == doctest::Approx(0.0));
    CHECK(imp.encoder[3] == doctest::Approx(0.0));
    CHECK(imp.encoder[0] > 0.0);
}

TEST_CASE("importance normalization ratios, fallback and column sums") {
    ImportanceVector a;
    a.encoder = {1.0, 0.0, 2.0};
    a.head = {5.0};
    ImportanceVector b;
    b.encoder = {3.0, 0.0, 6.0};
    b.head = {0.0};
    auto norm = normalize_importance({a, b});
    CHECK(norm[0].encoder[0] == doctest::Approx(0.25));
    CHECK(norm[1].encoder[0] == doctest::Approx(0.75));
    // all-zero coordinate falls back to uniform
    CHECK(norm[0].encoder[1] == doctest::Approx(0.5));
    CHECK(norm[1].encoder[1] == doctest::Approx(0.5));
    for (std::size_t j = 0; j < a.encoder.size(); ++j) {
        CHECK(norm[0].encoder[j] + norm[1].encoder[j] == doctest::Approx(1.0).epsilon(1e-9));
    }

    ImportanceVector bad;
    bad.encoder = {1.0};
    bad.head = {1.0};
    CHECK_THROWS(normalize_importance({a, bad}));
}

TEST_CASE("scaling a client's raw importance moves its share monotonically") {
    ImportanceVector a;
    a.encoder = {1.0, 2.0};
    a.head = {1.0};
    ImportanceVector b;
    b.encoder = {2.0, 1.0};
    b.head = {3.0};
    auto base = normalize_importance({a, b});
    ImportanceVector a_scaled = a;
    for (double& v : a_scaled.encoder) {
        v *= 4.0;
    }
    for (double& v : a_scaled.head) {
        v *= 4.0;
    }
    auto scaled = normalize_importance({a_scaled, b});
    for (std::size_t j = 0; j < a.encoder.size(); ++j) {
        CHECK(scaled[0].encoder[j] > base[0].encoder[j]);
    }
    // t = 1 is a fixed point
    auto same = normalize_importance({a, b});
    CHECK(same[0].encoder == base[0].encoder);
}

TEST_CASE("aggregation identities and weighted means") {
    Rng rng(12);
    nn::MlpEncoder enc({2, 2}, rng);
    nn::ClassifierHead head(2, 2, rng);
    GlobalModel m0(enc.clone(), head.clone());
    GlobalModel m1(enc.clone(), head.clone());

    SUBCASE("identical clients reproduce the common parameters exactly") {
        auto agg = aggregate({&m0, &m1}, nullptr);
        CHECK(nn::flatten_params(agg.encoder.parameters()) ==
              nn::flatten_params(m0.encoder.parameters()));
        CHECK(agg.head.bn.running_mean == m0.head.bn.running_mean);
    }

    SUBCASE("weighted and uniform means on a single coordinate") {
        m0.encoder.layers()[0].weight->values()[0] = 0.0;
        m1.encoder.layers()[0].weight->values()[0] = 4.0;
        auto uniform = aggregate({&m0, &m1}, nullptr);
        CHECK(uniform.encoder.layers()[0].weight->values()[0] == doctest::Approx(2.0));

        std::vector<ImportanceVector> norm(2);
        const std::size_t enc_n = nn::param_count(m0.encoder.parameters());
        const std::size_t head_n = nn::param_count(m0.head.parameters());
        norm[0].encoder.assign(enc_n, 0.25);
        norm[1].encoder.assign(enc_n, 0.75);
        norm[0].head.assign(head_n, 0.5);
        norm[1].head.assign(head_n, 0.5);
        auto weighted = aggregate({&m0, &m1}, &norm);
        CHECK(weighted.encoder.layers()[0].weight->values()[0] == doctest::Approx(3.0));
    }
}

TEST_CASE("aggregation is a per-coordinate convex combination") {
    Rng rng(13);
    nn::MlpEncoder enc({3, 2}, rng);
    nn::ClassifierHead head(2, 2, rng);
    Rng value_rng(99);
    for (int rep = 0; rep < 1000; ++rep) {
        GlobalModel m0(enc.clone(), head.clone());
        GlobalModel m1(enc.clone(), head.clone());
        GlobalModel m2(enc.clone(), head.clone());
        for (auto* m : {&m0, &m1, &m2}) {
            for (const auto& p : m->encoder.parameters()) {
                for (double& v : p->values()) {
                    v = value_rng.uniform(-2.0, 2.0);
                }
            }
        }
        // random raw importances, normalized per coordinate
        std::vector<ImportanceVector> raw(3);
        const std::size_t enc_n = nn::param_count(m0.encoder.parameters());
        const std::size_t head_n = nn::param_count(m0.head.parameters());
        for (auto& r : raw) {
            r.encoder.resize(enc_n);
            for (double& v : r.encoder) {
                v = value_rng.uniform(0.0, 1.0);
            }
            r.head.assign(head_n, 1.0);
        }
        auto norm = normalize_importance(raw);
        auto agg = aggregate({&m0, &m1, &m2}, &norm);
        auto a = nn::flatten_params(agg.encoder.parameters());
        auto v0 = nn::flatten_params(m0.encoder.parameters());
        auto v1 = nn::flatten_params(m1.encoder.parameters());
        auto v2 = nn::flatten_params(m2.encoder.parameters());
        for (std::size_t j = 0; j < a.size(); ++j) {
            const double lo = std::min({v0[j], v1[j], v2[j]});
            const double hi = std::max({v0[j], v1[j], v2[j]});
            CHECK(a[j] >= lo - 1e-12);
            CHECK(a[j] <= hi + 1e-12);
        }
    }
}

TEST_CASE("broadcast copies the global model bit-for-bit; aggregate is its inverse") {
    auto datasets = data::generate_rotated_blobs(four_domain_spec(0.3, 40), 17);
    Rng rng(14);
    nn::MlpEncoder enc({8, 4, 3}, rng);
    nn::ClassifierHead head(3, 2, rng);
    std::vector<ClientState> clients;
    for (int i = 0; i < 2; ++i) {
        ClientState st(enc.clone(), head.clone());
        st.id = i;
        st.train_set = datasets[static_cast<std::size_t>(i)];
        st.batch_seed = mix_seed(20, static_cast<std::uint64_t>(i));
        clients.push_back(std::move(st));
    }
    // perturb the clients so broadcast has something to overwrite
    clients[0].encoder.layers()[0].weight->values()[0] = 9.0;
    clients[1].head.bn.running_mean[0] = 5.0;

    GlobalModel global(enc.clone(), head.clone());
    global.head.bn.running_mean[0] = 1.25;
    broadcast(global, clients);
    for (const auto& c : clients) {
        CHECK(nn::flatten_params(c.encoder.parameters()) ==
              nn::flatten_params(global.encoder.parameters()));
        CHECK(nn::flatten_params(c.head.parameters()) ==
              nn::flatten_params(global.head.parameters()));
        CHECK(c.head.bn.running_mean == global.head.bn.running_mean);
        CHECK(c.head.bn.running_var == global.head.bn.running_var);
    }

    // broadcast then aggregate (uniform) leaves the global model unchanged
    GlobalModel g0(clients[0].encoder.clone(), clients[0].head.clone());
    GlobalModel g1(clients[1].encoder.clone(), clients[1].head.clone());
    auto re = aggregate({&g0, &g1}, nullptr);
    CHECK(nn::flatten_params(re.encoder.parameters()) ==
          nn::flatten_params(global.encoder.parameters()));
}

TEST_CASE("evaluate accuracy semantics") {
    auto datasets = data::generate_rotated_blobs(four_domain_spec(0.2, 60), 19);
    auto client = make_client(datasets[0], 16, 8, 21);
    local_train_stage1(client, 40, {});
    auto full = evaluate(client.encoder, client.head, client.train_set);
    CHECK(full.accuracy >= 0.95);

    // order invariance
    auto shuffled = client.train_set;
    std::reverse(shuffled.examples.begin(), shuffled.examples.end());
    auto rev = evaluate(client.encoder, client.head, shuffled);
    CHECK(rev.accuracy == doctest::Approx(full.accuracy));

    // constant predictor sits at chance on a balanced set
    Rng rng(22);
    nn::MlpEncoder zero_enc({8, 4}, rng);
    nn::ClassifierHead zero_head(4, 2, rng);
    for (const auto& p : zero_enc.parameters()) {
        for (double& v : p->values()) {
            v = 0.0;
        }
    }
    for (const auto& p : zero_head.parameters()) {
        for (double& v : p->values()) {
            v = 0.0;
        }
    }
    auto chance = evaluate(zero_enc, zero_head, client.train_set);
    CHECK(chance.accuracy == doctest::Approx(0.5).epsilon(0.05));

    data::DomainDataset empty;
    CHECK_THROWS(evaluate(client.encoder, client.head, empty));
}

TEST_CASE("pipeline runs are deterministic and thread-count independent") {
    auto datasets = data::generate_rotated_blobs(four_domain_spec(0.3, 60), 23);
    auto split = data::leave_one_out_split(datasets, 3, 0.2, 23);
    auto cfg = tiny_pipeline_config();

    auto rep1 = run_pipeline(split, cfg, 5, "lsi");
    auto rep2 = run_pipeline(split, cfg, 5, "lsi");
    CHECK(report::metrics_csv_string(rep1.rows) == report::metrics_csv_string(rep2.rows));

    auto parallel_cfg = cfg;
    parallel_cfg.threads = 3;
    auto rep3 = run_pipeline(split, parallel_cfg, 5, "lsi");
    CHECK(report::metrics_csv_string(rep1.rows) == report::metrics_csv_string(rep3.rows));
}

TEST_CASE("no-di no-importance ablation reproduces the fedavg trajectory exactly") {
    auto datasets = data::generate_rotated_blobs(four_domain_spec(0.3, 60), 29);
    auto split = data::leave_one_out_split(datasets, 0, 0.2, 29);
    auto cfg = tiny_pipeline_config();
    cfg.round.use_di = false;
    cfg.round.use_importance = false;
    auto ablated = run_pipeline(split, cfg, 7, "x");
    auto baseline = run_fedavg(split, cfg, 7);
    REQUIRE(ablated.rows.size() == baseline.rows.size());
    for (std::size_t i = 0; i < ablated.rows.size(); ++i) {
        CHECK(ablated.rows[i].split == baseline.rows[i].split);
        CHECK(ablated.rows[i].accuracy == baseline.rows[i].accuracy);
        CHECK(ablated.rows[i].loss == baseline.rows[i].loss);
    }
    // lambda_di = 0 is bit-identical to use_di = false
    auto cfg_zero = tiny_pipeline_config();
    cfg_zero.round.use_di = true;
    cfg_zero.round.lambda_di = 0.0;
    cfg_zero.round.use_importance = false;
    auto zero_di = run_pipeline(split, cfg_zero, 7, "x");
    for (std::size_t i = 0; i < zero_di.rows.size(); ++i) {
        CHECK(zero_di.rows[i].accuracy == ablated.rows[i].accuracy);
        CHECK(zero_di.rows[i].loss == ablated.rows[i].loss);
    }
}

TEST_CASE("pipeline ledger matches the closed form, fedavg has no stage transfers") {
    auto datasets = data::generate_rotated_blobs(four_domain_spec(0.3, 60), 31);
    auto split = data::leave_one_out_split(datasets, 1, 0.2, 31);
    auto cfg = tiny_pipeline_config();
    auto rep = run_pipeline(split, cfg, 9, "lsi");

    const std::uint64_t enc = rep.encoder_params;
    const std::uint64_t head = rep.head_params;
    const std::uint64_t gen = rep.generator_params;
    const auto rounds = static_cast<std::uint64_t>(cfg.round.rounds);
    for (const auto& client : split.clients) {
        const auto total = rep.ledger.total_params(std::nullopt, client.domain_id);
        CHECK(total == head + gen + rounds * 2 * (enc + head));
    }
    // pre-round uploads carry the head only
    for (const auto& rec : rep.ledger.records()) {
        if (rec.round == 0 && rec.direction == transport::Direction::client_to_server) {
            CHECK(rec.part == transport::PartId::head);
        }
    }

    auto fed = run_fedavg(split, cfg, 9);
    for (const auto& client : split.clients) {
        CHECK(fed.ledger.total_params(std::nullopt, client.domain_id) ==
              rounds * 2 * (enc + head));
        CHECK(fed.ledger.total_params(transport::Direction::client_to_server, client.domain_id) ==
              rounds * (enc + head));
    }
}

TEST_CASE("socket transport produces the same metrics as the memory transport") {
    auto datasets = data::generate_rotated_blobs(four_domain_spec(0.3, 50), 37);
    auto split = data::leave_one_out_split(datasets, 2, 0.2, 37);
    auto cfg = tiny_pipeline_config();
    auto mem = run_pipeline(split, cfg, 11, "lsi");
    cfg.transport = transport::TransportKind::socket;
    auto sock = run_pipeline(split, cfg, 11, "lsi");
    CHECK(report::metrics_csv_string(mem.rows) == report::metrics_csv_string(sock.rows));
}

TEST_CASE("identical client distributions give fedavg no disadvantage") {
    data::SyntheticSpec spec = four_domain_spec(0.2, 80);
    for (auto& d : spec.domains) {
        d.angle_deg = 0.0;  // no shift to exploit
    }
    auto datasets = data::generate_rotated_blobs(spec, 41);
    auto split = data::leave_one_out_split(datasets, 3, 0.2, 41);
    auto cfg = tiny_pipeline_config();
    cfg.round.rounds = 3;
    auto lsi = run_pipeline(split, cfg, 13, "lsi");
    auto fed = run_fedavg(split, cfg, 13);
    CHECK(std::abs(lsi.test_accuracy_at_best - fed.test_accuracy_at_best) <= 0.05);
}
