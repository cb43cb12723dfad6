#include "fedlsi/report/runner.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "fedlsi/data/batching.hpp"
#include "fedlsi/data/split.hpp"
#include "fedlsi/federation/pipeline.hpp"
#include "fedlsi/inversion/inversion.hpp"
#include "fedlsi/report/pca.hpp"
#include "fedlsi/util.hpp"

namespace fedlsi::report {

namespace fs = std::filesystem;

namespace {

constexpr const char* kCommsHeader = "method,seed,unseen,round,direction,client,part,params,bytes";

std::string part_name(transport::PartId part) {
    switch (part) {
        case transport::PartId::encoder:
            return "encoder";
        case transport::PartId::head:
            return "head";
        case transport::PartId::generator:
            return "generator";
    }
    return "?";
}

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    fields.push_back(cur);
    return fields;
}

void run_jobs(int threads, std::size_t n, const std::function<void(std::size_t)>& job) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            job(i);
        }
        return;
    }
    std::size_t next = 0;
    while (next < n) {
        const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(threads),
                                                        n - next);
        std::vector<std::future<void>> futures;
        futures.reserve(batch);
        for (std::size_t i = 0; i < batch; ++i) {
            futures.push_back(std::async(std::launch::async, job, next + i));
        }
        next += batch;
        for (auto& f : futures) {
            f.get();
        }
    }
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) {
        s += x;
    }
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double population_std(const std::vector<double>& v) {
    if (v.size() < 2) {
        return 0.0;
    }
    const double mu = mean_of(v);
    double s = 0.0;
    for (double x : v) {
        s += (x - mu) * (x - mu);
    }
    return std::sqrt(s / static_cast<double>(v.size()));
}

// Best-validation checkpoint test accuracy for one (method, seed, unseen)
// trajectory, recomputed from rows. Falls back to the final round when the
// run produced no validation rows.
double best_val_test_accuracy(const std::vector<MetricsRow>& rows, const std::string& method,
                              std::uint64_t seed, int unseen) {
    int best_round = -1;
    double best_val = -1.0;
    int last_round = -1;
    for (const auto& r : rows) {
        if (r.method != method || r.seed != seed || r.unseen != unseen) {
            continue;
        }
        if (r.split == "val" && r.accuracy > best_val) {
            best_val = r.accuracy;
            best_round = r.round;
        }
        if (r.split == "unseen") {
            last_round = std::max(last_round, r.round);
        }
    }
    const int target = best_round >= 0 ? best_round : last_round;
    for (const auto& r : rows) {
        if (r.method == method && r.seed == seed && r.unseen == unseen && r.round == target &&
            r.split == "unseen") {
            return r.accuracy;
        }
    }
    throw std::runtime_error("no unseen row found for method=" + method);
}

struct RunOutcome {
    federation::ExperimentReport rep;
    bool ok = false;
    std::string error;
};

}  // namespace

void write_comms_csv(const std::vector<CommsRow>& rows, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write comms csv: " + path);
    }
    out << kCommsHeader << "\n";
    for (const auto& r : rows) {
        out << r.method << "," << r.seed << "," << r.unseen << "," << r.round << ","
            << r.direction << "," << r.client << "," << r.part << "," << r.params << ","
            << r.bytes << "\n";
    }
}

std::vector<CommsRow> read_comms_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot read comms csv: " + path);
    }
    std::string line;
    if (!std::getline(in, line) || (line != kCommsHeader && line != std::string(kCommsHeader) + "\r")) {
        throw std::runtime_error("comms csv has an unexpected header");
    }
    std::vector<CommsRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        const auto f = split_fields(line);
        if (f.size() != 9) {
            throw std::runtime_error("comms csv row has wrong field count: " + line);
        }
        CommsRow r;
        r.method = f[0];
        r.seed = static_cast<std::uint64_t>(parse_int(f[1]));
        r.unseen = static_cast<int>(parse_int(f[2]));
        r.round = static_cast<std::uint32_t>(parse_int(f[3]));
        r.direction = f[4];
        r.client = static_cast<int>(parse_int(f[5]));
        r.part = f[6];
        r.params = static_cast<std::uint64_t>(parse_int(f[7]));
        r.bytes = static_cast<std::uint64_t>(parse_int(f[8]));
        rows.push_back(std::move(r));
    }
    return rows;
}

std::vector<CommsRow> ledger_to_rows(const transport::CommsLedger& ledger,
                                     const std::string& method, std::uint64_t seed, int unseen) {
    std::vector<CommsRow> rows;
    rows.reserve(ledger.records().size());
    for (const auto& rec : ledger.records()) {
        CommsRow r;
        r.method = method;
        r.seed = seed;
        r.unseen = unseen;
        r.round = rec.round;
        r.direction =
            rec.direction == transport::Direction::client_to_server ? "up" : "down";
        r.client = rec.client;
        r.part = part_name(rec.part);
        r.params = rec.params;
        r.bytes = rec.bytes;
        rows.push_back(std::move(r));
    }
    return rows;
}

std::string build_report_text(const std::vector<MetricsRow>& rows,
                              const std::vector<CommsRow>& comms, bool complete) {
    std::set<std::string> methods;
    std::set<std::uint64_t> seeds;
    std::set<int> domains;
    for (const auto& r : rows) {
        methods.insert(r.method);
        seeds.insert(r.seed);
        domains.insert(r.unseen);
    }

    std::ostringstream out;
    out << "report_version: 1\n";
    out << "methods:";
    for (const auto& m : methods) {
        out << " " << m;
    }
    out << "\n";
    out << "seeds:";
    for (auto s : seeds) {
        out << " " << s;
    }
    out << "\n";
    out << "unseen_domains:";
    for (int d : domains) {
        out << " " << d;
    }
    out << "\n";

    for (const auto& method : methods) {
        std::vector<double> per_seed_avgs(seeds.size(), 0.0);
        std::vector<double> domain_means;
        for (int d : domains) {
            std::vector<double> accs;
            std::size_t si = 0;
            for (auto s : seeds) {
                const double a = best_val_test_accuracy(rows, method, s, d);
                accs.push_back(a);
                per_seed_avgs[si++] += a / static_cast<double>(domains.size());
            }
            out << method << ".domain" << d
                << ".test_acc_mean: " << format_fixed(mean_of(accs), 6) << "\n";
            out << method << ".domain" << d
                << ".test_acc_std: " << format_fixed(population_std(accs), 6) << "\n";
            domain_means.push_back(mean_of(accs));
        }
        out << method << ".avg.test_acc_mean: " << format_fixed(mean_of(domain_means), 6)
            << "\n";
        out << method << ".avg.test_acc_std: " << format_fixed(population_std(per_seed_avgs), 6)
            << "\n";

        std::uint64_t up = 0;
        std::uint64_t down = 0;
        for (const auto& c : comms) {
            if (c.method != method) {
                continue;
            }
            if (c.direction == "up") {
                up += c.params;
            } else {
                down += c.params;
            }
        }
        out << method << ".comms.params_client_to_server: " << up << "\n";
        out << method << ".comms.params_server_to_client: " << down << "\n";
    }

    if (methods.contains("lsi")) {
        out << "bank_lifetime: stages 2-3\n";
        out << "storage_after_training: encoder,head\n";
    }
    out << "complete: " << (complete ? "true" : "false") << "\n";
    return out.str();
}

std::vector<data::DomainDataset> make_datasets(const ExperimentConfig& cfg, std::uint64_t seed) {
    if (!cfg.csv_path.empty()) {
        return data::load_csv(cfg.csv_path);
    }
    return data::generate_rotated_blobs(cfg.synthetic, seed);
}

namespace {

std::vector<int> unseen_selection(const ExperimentConfig& cfg,
                                  const std::vector<data::DomainDataset>& datasets) {
    std::vector<int> ids;
    if (cfg.unseen_all) {
        for (const auto& d : datasets) {
            ids.push_back(d.domain_id);
        }
        std::sort(ids.begin(), ids.end());
    } else {
        ids.push_back(cfg.unseen_id);
    }
    return ids;
}

struct JobSpec {
    std::uint64_t seed;
    int unseen;
};

int execute_and_write(const ExperimentConfig& cfg, const std::string& method,
                      const federation::PipelineConfig& pipe_cfg, const std::string& out_dir) {
    fs::create_directories(out_dir);
    auto probe_datasets = make_datasets(cfg, cfg.seeds.front());
    const auto unseen_ids = unseen_selection(cfg, probe_datasets);

    std::vector<JobSpec> jobs;
    for (auto seed : cfg.seeds) {
        for (int u : unseen_ids) {
            jobs.push_back({seed, u});
        }
    }
    std::vector<RunOutcome> outcomes(jobs.size());

    federation::PipelineConfig run_cfg = pipe_cfg;
    // Parallelize across runs when there are several; inside a run otherwise.
    const bool parallel_runs = jobs.size() > 1 && pipe_cfg.threads > 1;
    if (parallel_runs) {
        run_cfg.threads = 1;
    }
    run_jobs(parallel_runs ? pipe_cfg.threads : 1, jobs.size(), [&](std::size_t i) {
        try {
            auto datasets = make_datasets(cfg, jobs[i].seed);
            auto split = data::leave_one_out_split(datasets, jobs[i].unseen, cfg.val_fraction,
                                                   jobs[i].seed);
            if (method == "fedavg") {
                outcomes[i].rep = federation::run_fedavg(split, run_cfg, jobs[i].seed);
            } else {
                outcomes[i].rep = federation::run_pipeline(split, run_cfg, jobs[i].seed, method);
            }
            outcomes[i].ok = true;
        } catch (const std::exception& e) {
            outcomes[i].error = e.what();
        }
    });

    std::vector<MetricsRow> all_rows;
    std::vector<CommsRow> all_comms;
    bool complete = true;
    for (std::size_t i = 0; i < jobs.size(); ++i) {
        if (!outcomes[i].ok) {
            complete = false;
            std::cerr << "run failed (seed=" << jobs[i].seed << ", unseen=" << jobs[i].unseen
                      << "): " << outcomes[i].error << "\n";
            continue;
        }
        const auto& rep = outcomes[i].rep;
        all_rows.insert(all_rows.end(), rep.rows.begin(), rep.rows.end());
        auto comms = ledger_to_rows(rep.ledger, method, jobs[i].seed, jobs[i].unseen);
        all_comms.insert(all_comms.end(), comms.begin(), comms.end());
        for (const auto& w : rep.warnings) {
            std::cerr << "warning: " << w << "\n";
        }
    }

    write_metrics_csv(all_rows, out_dir + "/metrics.csv");
    write_comms_csv(all_comms, out_dir + "/comms.csv");
    std::ofstream report_file(out_dir + "/report.txt", std::ios::binary);
    report_file << build_report_text(all_rows, all_comms, complete);
    return complete ? 0 : 1;
}

}  // namespace

int cmd_run(const ExperimentConfig& cfg, const std::string& method) {
    if (method != "lsi" && method != "fedavg") {
        throw std::invalid_argument("method must be 'lsi' or 'fedavg'");
    }
    federation::PipelineConfig pipe_cfg = cfg.pipeline;
    pipe_cfg.round.method =
        method == "lsi" ? federation::Method::lsi : federation::Method::fedavg;
    if (method == "fedavg") {
        pipe_cfg.round.use_di = false;
        pipe_cfg.round.use_importance = false;
    }
    return execute_and_write(cfg, method, pipe_cfg, cfg.out_dir);
}

int cmd_ablation(const ExperimentConfig& cfg) {
    fs::create_directories(cfg.out_dir);
    struct GridRow {
        bool use_di;
        bool use_importance;
        const char* label;
    };
    // Table rows in the conventional order: No/No, Yes/No, No/Yes, Yes/Yes.
    const GridRow grid[] = {
        {false, false, "no_di.no_imp"},
        {true, false, "di.no_imp"},
        {false, true, "no_di.imp"},
        {true, true, "di.imp"},
    };

    std::vector<MetricsRow> all_rows;
    std::vector<CommsRow> all_comms;
    bool complete = true;

    std::ostringstream table;
    table << "use_di,use_importance,domain,test_acc_mean,test_acc_std\n";

    for (const auto& row : grid) {
        federation::PipelineConfig pipe_cfg = cfg.pipeline;
        pipe_cfg.round.method = federation::Method::lsi;
        pipe_cfg.round.use_di = row.use_di;
        pipe_cfg.round.use_importance = row.use_importance;
        const std::string method = std::string("lsi.") + row.label;

        const std::string sub_dir = cfg.out_dir + "/ablation_" + row.label;
        const int rc = execute_and_write(cfg, method, pipe_cfg, sub_dir);
        complete = complete && rc == 0;

        auto rows = read_metrics_csv(sub_dir + "/metrics.csv");
        auto comms = read_comms_csv(sub_dir + "/comms.csv");
        all_rows.insert(all_rows.end(), rows.begin(), rows.end());
        all_comms.insert(all_comms.end(), comms.begin(), comms.end());

        std::set<int> domains;
        std::set<std::uint64_t> seeds;
        for (const auto& r : rows) {
            domains.insert(r.unseen);
            seeds.insert(r.seed);
        }
        std::vector<double> domain_means;
        for (int d : domains) {
            std::vector<double> accs;
            for (auto s : seeds) {
                accs.push_back(best_val_test_accuracy(rows, method, s, d));
            }
            table << (row.use_di ? "yes" : "no") << "," << (row.use_importance ? "yes" : "no")
                  << "," << d << "," << format_fixed(mean_of(accs), 6) << ","
                  << format_fixed(population_std(accs), 6) << "\n";
            domain_means.push_back(mean_of(accs));
        }
        table << (row.use_di ? "yes" : "no") << "," << (row.use_importance ? "yes" : "no")
              << ",avg," << format_fixed(mean_of(domain_means), 6) << ",\n";
    }

    std::ofstream table_file(cfg.out_dir + "/ablation.csv", std::ios::binary);
    table_file << table.str();
    write_metrics_csv(all_rows, cfg.out_dir + "/metrics.csv");
    write_comms_csv(all_comms, cfg.out_dir + "/comms.csv");
    std::ofstream report_file(cfg.out_dir + "/report.txt", std::ios::binary);
    report_file << build_report_text(all_rows, all_comms, complete);
    return complete ? 0 : 1;
}

int cmd_sweep(const ExperimentConfig& cfg, std::vector<double> values) {
    if (values.empty()) {
        throw std::invalid_argument("sweep: value list is empty");
    }
    for (double v : values) {
        if (v < 0.0) {
            throw std::invalid_argument("sweep: lambda_di values must be >= 0");
        }
    }
    std::sort(values.begin(), values.end(), std::greater<>());
    fs::create_directories(cfg.out_dir);

    std::vector<MetricsRow> all_rows;
    std::vector<CommsRow> all_comms;
    bool complete = true;

    std::ostringstream table;
    table << "lambda_di,domain,test_acc_mean,test_acc_std\n";

    for (std::size_t vi = 0; vi < values.size(); ++vi) {
        federation::PipelineConfig pipe_cfg = cfg.pipeline;
        pipe_cfg.round.method = federation::Method::lsi;
        pipe_cfg.round.lambda_di = values[vi];
        const std::string method = "lsi.lambda_di=" + format_shortest(values[vi]);
        const std::string sub_dir = cfg.out_dir + "/sweep_" + std::to_string(vi);
        const int rc = execute_and_write(cfg, method, pipe_cfg, sub_dir);
        complete = complete && rc == 0;

        auto rows = read_metrics_csv(sub_dir + "/metrics.csv");
        auto comms = read_comms_csv(sub_dir + "/comms.csv");
        all_rows.insert(all_rows.end(), rows.begin(), rows.end());
        all_comms.insert(all_comms.end(), comms.begin(), comms.end());

        std::set<int> domains;
        std::set<std::uint64_t> seeds;
        for (const auto& r : rows) {
            domains.insert(r.unseen);
            seeds.insert(r.seed);
        }
        std::vector<double> domain_means;
        for (int d : domains) {
            std::vector<double> accs;
            for (auto s : seeds) {
                accs.push_back(best_val_test_accuracy(rows, method, s, d));
            }
            table << format_shortest(values[vi]) << "," << d << ","
                  << format_fixed(mean_of(accs), 6) << "," << format_fixed(population_std(accs), 6)
                  << "\n";
            domain_means.push_back(mean_of(accs));
        }
        table << format_shortest(values[vi]) << ",avg," << format_fixed(mean_of(domain_means), 6)
              << ",\n";
    }

    std::ofstream table_file(cfg.out_dir + "/sweep.csv", std::ios::binary);
    table_file << table.str();
    write_metrics_csv(all_rows, cfg.out_dir + "/metrics.csv");
    write_comms_csv(all_comms, cfg.out_dir + "/comms.csv");
    std::ofstream report_file(cfg.out_dir + "/report.txt", std::ios::binary);
    report_file << build_report_text(all_rows, all_comms, complete);
    return complete ? 0 : 1;
}

namespace {

void write_projection_csv(const std::string& path, double variance_explained,
                          const std::vector<std::array<std::string, 5>>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write projection csv: " + path);
    }
    out << "# variance_explained=" << format_fixed(variance_explained, 6) << "\n";
    out << "source,client,label,pc1,pc2\n";
    for (const auto& r : rows) {
        out << r[0] << "," << r[1] << "," << r[2] << "," << r[3] << "," << r[4] << "\n";
    }
}

}  // namespace

int cmd_project(const ExperimentConfig& cfg, const ProjectOptions& opts) {
    fs::create_directories(cfg.out_dir);
    const std::uint64_t seed = cfg.seeds.front();
    auto datasets = make_datasets(cfg, seed);
    const auto unseen_ids = unseen_selection(cfg, datasets);
    const int unseen = cfg.unseen_all ? unseen_ids.back() : cfg.unseen_id;
    auto split = data::leave_one_out_split(datasets, unseen, cfg.val_fraction, seed);

    const std::size_t m = split.clients.size();
    Rng init_rng(mix_seed(seed, seed_tag::model_init));
    nn::MlpEncoder init_encoder({split.feature_dim, cfg.pipeline.model.hidden,
                                 cfg.pipeline.model.latent},
                                init_rng);
    nn::ClassifierHead init_head(cfg.pipeline.model.latent,
                                 static_cast<std::size_t>(split.num_classes), init_rng);

    std::vector<federation::ClientState> clients;
    for (std::size_t i = 0; i < m; ++i) {
        federation::ClientState st(init_encoder.clone(), init_head.clone());
        st.id = split.clients[i].domain_id;
        st.index = static_cast<int>(i);
        st.train_set = split.clients[i].train;
        st.val_set = split.clients[i].val;
        st.batch_seed = mix_seed(mix_seed(seed, seed_tag::client,
                                          static_cast<std::uint64_t>(st.id)),
                                 seed_tag::batch);
        clients.push_back(std::move(st));
    }
    for (auto& cl : clients) {
        federation::local_train_stage1(cl, cfg.pipeline.round.local_epochs, cfg.pipeline.train);
    }

    auto synthesize_banks = [&](const inversion::SynthTermToggles& toggles) {
        std::vector<inversion::SynthBank> banks;
        for (auto& cl : clients) {
            banks.push_back(inversion::synthesize(
                cl.head, cl.train_set, cfg.pipeline.synth,
                mix_seed(seed, seed_tag::synth, static_cast<std::uint64_t>(cl.id)), toggles));
        }
        return banks;
    };

    // Original latents: every client's training examples, capped per client.
    struct LatentRow {
        std::string source;
        int client;
        int label;
        std::vector<double> z;
    };
    std::vector<LatentRow> originals;
    const std::size_t cap = cfg.pipeline.synth.samples_per_client;
    for (auto& cl : clients) {
        const std::size_t n = std::min(cap, cl.train_set.size());
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) {
            idx[i] = i;
        }
        auto x = data::batch_features(cl.train_set, idx);
        auto z = cl.encoder.forward(nullptr, x);
        for (std::size_t i = 0; i < n; ++i) {
            LatentRow row;
            row.source = "original";
            row.client = cl.id;
            row.label = cl.train_set.examples[idx[i]].label;
            row.z.assign(z->values().begin() + static_cast<std::ptrdiff_t>(i * z->cols()),
                         z->values().begin() + static_cast<std::ptrdiff_t>((i + 1) * z->cols()));
            originals.push_back(std::move(row));
        }
    }

    auto export_variant = [&](const std::string& path,
                              const std::vector<inversion::SynthBank>& banks) {
        std::vector<LatentRow> rows = originals;
        for (const auto& bank : banks) {
            for (std::size_t i = 0; i < bank.size(); ++i) {
                LatentRow row;
                row.source = "synthesized";
                row.client = bank.client_id();
                row.label = bank.labels()[i];
                const auto& z = bank.latents();
                row.z.assign(z->values().begin() + static_cast<std::ptrdiff_t>(i * z->cols()),
                             z->values().begin() +
                                 static_cast<std::ptrdiff_t>((i + 1) * z->cols()));
                rows.push_back(std::move(row));
            }
        }
        std::vector<std::vector<double>> matrix;
        matrix.reserve(rows.size());
        for (const auto& r : rows) {
            matrix.push_back(r.z);
        }
        auto pca = fit_pca2(matrix);
        std::vector<std::array<std::string, 5>> csv_rows;
        csv_rows.reserve(rows.size());
        for (const auto& r : rows) {
            const auto pc = pca.project(r.z);
            csv_rows.push_back({r.source, std::to_string(r.client), std::to_string(r.label),
                                format_fixed(pc[0], 6), format_fixed(pc[1], 6)});
        }
        write_projection_csv(path, pca.variance_explained, csv_rows);
    };

    auto full_banks = synthesize_banks({});
    if (!opts.dump_banks_path.empty()) {
        inversion::dump_banks_csv(full_banks, opts.dump_banks_path);
    }
    export_variant(cfg.out_dir + "/projections.csv", full_banks);

    if (opts.variants) {
        export_variant(cfg.out_dir + "/projections_no_clsz.csv",
                       synthesize_banks({.use_clsz = false}));
        export_variant(cfg.out_dir + "/projections_no_bn.csv",
                       synthesize_banks({.use_bn = false}));
        export_variant(cfg.out_dir + "/projections_no_norm.csv",
                       synthesize_banks({.use_norm = false}));
    }
    return 0;
}

int cmd_report(const std::string& dir) {
    auto rows = read_metrics_csv(dir + "/metrics.csv");
    std::vector<CommsRow> comms;
    if (fs::exists(dir + "/comms.csv")) {
        comms = read_comms_csv(dir + "/comms.csv");
    }
    std::ofstream report_file(dir + "/report.txt", std::ios::binary);
    if (!report_file) {
        throw std::runtime_error("cannot write report: " + dir + "/report.txt");
    }
    report_file << build_report_text(rows, comms, true);
    return 0;
}

int cmd_gen_data(const ExperimentConfig& cfg, const std::string& out_path) {
    auto datasets = make_datasets(cfg, cfg.seeds.front());
    data::write_csv(datasets, out_path);
    return 0;
}

}  // namespace fedlsi::report
