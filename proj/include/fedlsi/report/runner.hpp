#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedlsi/report/config.hpp"
#include "fedlsi/report/metrics.hpp"
#include "fedlsi/transport/ledger.hpp"

namespace fedlsi::report {

// One ledger record flattened for comms.csv.
struct CommsRow {
    std::string method;
    std::uint64_t seed = 0;
    int unseen = 0;
    std::uint32_t round = 0;
    std::string direction;  // up | down
    int client = 0;
    std::string part;  // encoder | head | generator
    std::uint64_t params = 0;
    std::uint64_t bytes = 0;
};

void write_comms_csv(const std::vector<CommsRow>& rows, const std::string& path);
std::vector<CommsRow> read_comms_csv(const std::string& path);

std::vector<CommsRow> ledger_to_rows(const transport::CommsLedger& ledger,
                                     const std::string& method, std::uint64_t seed, int unseen);

// Plain-text summary with `key: value` lines; cells are best-validation
// checkpoint test accuracies, mean and population std over seeds.
std::string build_report_text(const std::vector<MetricsRow>& rows,
                              const std::vector<CommsRow>& comms, bool complete);

// Builds (or loads) the datasets configured for one seed.
std::vector<data::DomainDataset> make_datasets(const ExperimentConfig& cfg, std::uint64_t seed);

// Runs every (seed, unseen domain) combination for one method and writes
// metrics.csv, comms.csv and report.txt into cfg.out_dir. `method` is "lsi"
// or "fedavg". Returns 0 only when every run completed.
int cmd_run(const ExperimentConfig& cfg, const std::string& method);

// 2x2 (use_di, use_importance) grid from shared seeds; writes ablation.csv
// plus the standard outputs.
int cmd_ablation(const ExperimentConfig& cfg);

// One run set per lambda_di value (descending); writes sweep.csv.
int cmd_sweep(const ExperimentConfig& cfg, std::vector<double> values);

struct ProjectOptions {
    bool variants = false;         // also export the per-loss ablation panels
    std::string dump_banks_path;   // optional raw bank dump (explicitly enabled)
};

// Latent projection export: original z and synthesized zhat pooled, 2-PC PCA.
int cmd_project(const ExperimentConfig& cfg, const ProjectOptions& opts);

// Regenerates report.txt from metrics.csv / comms.csv in `dir`.
int cmd_report(const std::string& dir);

int cmd_gen_data(const ExperimentConfig& cfg, const std::string& out_path);

}  // namespace fedlsi::report
