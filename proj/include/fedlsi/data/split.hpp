#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedlsi/data/dataset.hpp"

namespace fedlsi::data {

struct ClientData {
    int domain_id = 0;
    DomainDataset train;
    DomainDataset val;
};

// Leave-one-domain-out federation split: the unseen domain is wholly reserved
// for testing; every other domain becomes one client with a stratified
// train/val split.
struct FederationSplit {
    std::vector<ClientData> clients;
    DomainDataset unseen;
    int num_classes = 0;
    std::size_t feature_dim = 0;
};

FederationSplit leave_one_out_split(const std::vector<DomainDataset>& datasets, int unseen_id,
                                    double val_fraction, std::uint64_t seed,
                                    std::vector<std::string>* warnings = nullptr);

}  // namespace fedlsi::data
