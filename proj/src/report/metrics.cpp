#include "fedlsi/report/metrics.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "fedlsi/util.hpp"

namespace fedlsi::report {

namespace {

constexpr const char* kHeader = "method,seed,unseen,round,split,accuracy,loss";

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

}  // namespace

std::string metrics_csv_string(const std::vector<MetricsRow>& rows) {
    std::string out;
    out += kHeader;
    out += '\n';
    for (const auto& r : rows) {
        out += r.method;
        out += ',';
        out += std::to_string(r.seed);
        out += ',';
        out += std::to_string(r.unseen);
        out += ',';
        out += std::to_string(r.round);
        out += ',';
        out += r.split;
        out += ',';
        out += format_fixed(r.accuracy, 6);
        out += ',';
        out += format_fixed(r.loss, 6);
        out += '\n';
    }
    return out;
}

void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write metrics csv: " + path);
    }
    out << metrics_csv_string(rows);
}

std::vector<MetricsRow> parse_metrics_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) {
        throw std::runtime_error("metrics csv is empty");
    }
    if (!line.empty() && line.back() == '\r') {
        line.pop_back();
    }
    if (line != kHeader) {
        throw std::runtime_error("metrics csv has an unexpected header: " + line);
    }
    std::vector<MetricsRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        const auto f = split_fields(line);
        if (f.size() != 7) {
            throw std::runtime_error("metrics csv row has wrong field count: " + line);
        }
        MetricsRow r;
        r.method = f[0];
        r.seed = static_cast<std::uint64_t>(parse_int(f[1]));
        r.unseen = static_cast<int>(parse_int(f[2]));
        r.round = static_cast<int>(parse_int(f[3]));
        r.split = f[4];
        r.accuracy = parse_double(f[5]);
        r.loss = parse_double(f[6]);
        rows.push_back(std::move(r));
    }
    return rows;
}

std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot read metrics csv: " + path);
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_metrics_csv(buf.str());
}

}  // namespace fedlsi::report
