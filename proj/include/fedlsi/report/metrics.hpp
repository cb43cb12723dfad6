#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fedlsi::report {

// One evaluation cell; feeds metrics.csv and the report tables.
struct MetricsRow {
    std::string method;
    std::uint64_t seed = 0;
    int unseen = 0;
    int round = 0;
    std::string split;  // train | val | unseen | local-client-<d>
    double accuracy = 0.0;
    double loss = 0.0;
};

// Header `method,seed,unseen,round,split,accuracy,loss`; six decimal places,
// '\n' newlines, locale-independent.
void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::string& path);
std::string metrics_csv_string(const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> read_metrics_csv(const std::string& path);
std::vector<MetricsRow> parse_metrics_csv(const std::string& text);

}  // namespace fedlsi::report
