#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace fedlsi::data {

struct LabeledExample {
    std::vector<double> features;
    int label = 0;
    int domain = 0;
};

struct DomainDataset {
    int domain_id = 0;
    std::vector<LabeledExample> examples;

    bool empty() const { return examples.empty(); }
    std::size_t size() const { return examples.size(); }
    std::size_t feature_dim() const;
    // labels are class ids in [0, class_count)
    int class_count() const;
};

struct DomainTransform {
    double angle_deg = 0.0;
    double scale = 1.0;
    std::array<double, 2> shift{0.0, 0.0};
};

// Synthetic multi-domain task: class prototypes evenly spaced on a 2-D circle
// of radius 3, per-domain rotation/scale/shift plus Gaussian noise, then
// lifted to the ambient dimension by a seeded orthonormal embedding.
struct SyntheticSpec {
    int classes = 3;
    std::vector<DomainTransform> domains;
    double noise_sigma = 0.4;
    int samples_per_domain = 300;
    std::size_t ambient_dim = 20;
    std::uint64_t embed_seed = 7;

    void validate() const;
};

std::array<double, 2> rotate2d(const std::array<double, 2>& v, double angle_deg);

std::vector<DomainDataset> generate_rotated_blobs(const SyntheticSpec& spec, std::uint64_t seed);

// CSV format: header `domain,label,f0..f{k-1}`, one example per row.
std::vector<DomainDataset> load_csv(const std::string& path);
void write_csv(const std::vector<DomainDataset>& datasets, const std::string& path);

// Class count across a collection of domains (max label + 1).
int global_class_count(const std::vector<DomainDataset>& datasets);

}  // namespace fedlsi::data
