#include "fedlsi/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "fedlsi/util.hpp"

namespace fedlsi::data {

std::size_t DomainDataset::feature_dim() const {
    if (examples.empty()) {
        return 0;
    }
    return examples.front().features.size();
}

int DomainDataset::class_count() const {
    int mx = -1;
    for (const auto& e : examples) {
        mx = std::max(mx, e.label);
    }
    return mx + 1;
}

void SyntheticSpec::validate() const {
    if (classes < 2) {
        throw std::invalid_argument("synthetic spec: need at least 2 classes");
    }
    if (domains.size() < 3) {
        throw std::invalid_argument(
            "synthetic spec: need at least 3 domains (2 clients + 1 unseen)");
    }
    if (noise_sigma < 0.0) {
        throw std::invalid_argument("synthetic spec: noise sigma must be >= 0");
    }
    if (samples_per_domain < classes) {
        throw std::invalid_argument("synthetic spec: need at least one sample per class");
    }
    if (ambient_dim < 2) {
        throw std::invalid_argument("synthetic spec: ambient dimension must be >= 2");
    }
}

std::array<double, 2> rotate2d(const std::array<double, 2>& v, double angle_deg) {
    const double rad = angle_deg * 3.14159265358979323846 / 180.0;
    const double c = std::cos(rad);
    const double s = std::sin(rad);
    return {c * v[0] - s * v[1], s * v[0] + c * v[1]};
}

namespace {

// Orthonormal k x 2 embedding from a seeded Gaussian draw (Gram-Schmidt).
std::array<std::vector<double>, 2> make_embedding(std::size_t k, std::uint64_t embed_seed) {
    Rng rng(mix_seed(embed_seed, 0xE3BEDull));
    std::vector<double> a(k);
    std::vector<double> b(k);
    for (std::size_t i = 0; i < k; ++i) {
        a[i] = rng.normal();
    }
    for (std::size_t i = 0; i < k; ++i) {
        b[i] = rng.normal();
    }
    double na = 0.0;
    for (double v : a) {
        na += v * v;
    }
    na = std::sqrt(na);
    for (double& v : a) {
        v /= na;
    }
    double dot = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        dot += a[i] * b[i];
    }
    for (std::size_t i = 0; i < k; ++i) {
        b[i] -= dot * a[i];
    }
    double nb = 0.0;
    for (double v : b) {
        nb += v * v;
    }
    nb = std::sqrt(nb);
    if (nb < 1e-12) {
        throw std::runtime_error("degenerate embedding draw");
    }
    for (double& v : b) {
        v /= nb;
    }
    return {std::move(a), std::move(b)};
}

constexpr double kPrototypeRadius = 3.0;
// The prototype circle sits off the origin so that rotating a domain moves
// the constellation centroid: domains then differ by a detectable covariate
// shift while the within-domain class geometry stays rigid.
constexpr double kPrototypeCenterX = 8.0;

}  // namespace

std::vector<DomainDataset> generate_rotated_blobs(const SyntheticSpec& spec, std::uint64_t seed) {
    spec.validate();
    const auto embedding = make_embedding(spec.ambient_dim, spec.embed_seed);

    std::vector<DomainDataset> out;
    out.reserve(spec.domains.size());
    for (std::size_t d = 0; d < spec.domains.size(); ++d) {
        const auto& tf = spec.domains[d];
        Rng rng(mix_seed(seed, seed_tag::data, d + 1));
        DomainDataset ds;
        ds.domain_id = static_cast<int>(d);
        ds.examples.reserve(static_cast<std::size_t>(spec.samples_per_domain));
        for (int i = 0; i < spec.samples_per_domain; ++i) {
            const int label = i % spec.classes;
            const double proto_angle =
                2.0 * 3.14159265358979323846 * static_cast<double>(label) /
                static_cast<double>(spec.classes);
            std::array<double, 2> v{kPrototypeCenterX + kPrototypeRadius * std::cos(proto_angle),
                                    kPrototypeRadius * std::sin(proto_angle)};
            v = rotate2d(v, tf.angle_deg);
            v[0] = v[0] * tf.scale + tf.shift[0] + spec.noise_sigma * rng.normal();
            v[1] = v[1] * tf.scale + tf.shift[1] + spec.noise_sigma * rng.normal();

            LabeledExample ex;
            ex.label = label;
            ex.domain = ds.domain_id;
            ex.features.resize(spec.ambient_dim);
            for (std::size_t j = 0; j < spec.ambient_dim; ++j) {
                ex.features[j] = embedding[0][j] * v[0] + embedding[1][j] * v[1];
            }
            ds.examples.push_back(std::move(ex));
        }
        out.push_back(std::move(ds));
    }
    return out;
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
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

std::vector<DomainDataset> load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open csv file: " + path);
    }
    std::string line;
    if (!std::getline(in, line)) {
        throw std::runtime_error("csv file is empty (missing header): " + path);
    }
    const auto header = split_line(line);
    if (header.size() < 3 || header[0] != "domain" || header[1] != "label") {
        throw std::runtime_error("csv header must start with domain,label,f0,...");
    }
    const std::size_t k = header.size() - 2;
    for (std::size_t j = 0; j < k; ++j) {
        const std::string expected = "f" + std::to_string(j);
        if (header[j + 2] != expected) {
            throw std::runtime_error("unknown csv column '" + header[j + 2] + "' (expected '" +
                                     expected + "')");
        }
    }

    std::vector<DomainDataset> out;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        const auto fields = split_line(line);
        if (fields.size() != header.size()) {
            throw std::runtime_error("csv row " + std::to_string(line_no) + " has " +
                                     std::to_string(fields.size()) + " fields, expected " +
                                     std::to_string(header.size()));
        }
        LabeledExample ex;
        ex.domain = static_cast<int>(parse_int(fields[0]));
        ex.label = static_cast<int>(parse_int(fields[1]));
        if (ex.domain < 0 || ex.label < 0) {
            throw std::runtime_error("csv row " + std::to_string(line_no) +
                                     ": domain and label must be non-negative");
        }
        ex.features.resize(k);
        for (std::size_t j = 0; j < k; ++j) {
            ex.features[j] = parse_double(fields[j + 2]);
        }
        auto it = std::find_if(out.begin(), out.end(), [&](const DomainDataset& d) {
            return d.domain_id == ex.domain;
        });
        if (it == out.end()) {
            DomainDataset ds;
            ds.domain_id = ex.domain;
            out.push_back(std::move(ds));
            it = out.end() - 1;
        }
        it->examples.push_back(std::move(ex));
    }
    std::sort(out.begin(), out.end(), [](const DomainDataset& a, const DomainDataset& b) {
        return a.domain_id < b.domain_id;
    });
    return out;
}

void write_csv(const std::vector<DomainDataset>& datasets, const std::string& path) {
    std::size_t k = 0;
    for (const auto& d : datasets) {
        if (!d.empty()) {
            k = d.feature_dim();
            break;
        }
    }
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write csv file: " + path);
    }
    out << "domain,label";
    for (std::size_t j = 0; j < k; ++j) {
        out << ",f" << j;
    }
    out << "\n";
    for (const auto& d : datasets) {
        for (const auto& ex : d.examples) {
            out << ex.domain << "," << ex.label;
            for (double f : ex.features) {
                out << "," << format_shortest(f);
            }
            out << "\n";
        }
    }
}

int global_class_count(const std::vector<DomainDataset>& datasets) {
    int mx = -1;
    for (const auto& d : datasets) {
        mx = std::max(mx, d.class_count() - 1);
    }
    return mx + 1;
}

}  // namespace fedlsi::data
