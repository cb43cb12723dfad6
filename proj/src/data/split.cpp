#include "fedlsi/data/split.hpp"

#include <algorithm>
#include <iostream>
#include <stdexcept>

#include "fedlsi/util.hpp"

namespace fedlsi::data {

namespace {

void emit_warning(std::vector<std::string>* warnings, const std::string& msg) {
    if (warnings) {
        warnings->push_back(msg);
    } else {
        std::cerr << "warning: " << msg << "\n";
    }
}

}  // namespace

FederationSplit leave_one_out_split(const std::vector<DomainDataset>& datasets, int unseen_id,
                                    double val_fraction, std::uint64_t seed,
                                    std::vector<std::string>* warnings) {
    if (val_fraction < 0.0 || val_fraction >= 1.0) {
        throw std::invalid_argument("val_fraction must be in [0, 1)");
    }
    auto unseen_it = std::find_if(datasets.begin(), datasets.end(), [&](const DomainDataset& d) {
        return d.domain_id == unseen_id;
    });
    if (unseen_it == datasets.end()) {
        throw std::invalid_argument("unseen domain id " + std::to_string(unseen_id) +
                                    " not present");
    }
    if (datasets.size() < 3) {
        throw std::invalid_argument("need at least 2 client domains besides the unseen one");
    }
    if (val_fraction == 0.0) {
        emit_warning(warnings, "val_fraction is 0; validation sets will be empty");
    }

    FederationSplit split;
    split.unseen = *unseen_it;
    split.num_classes = global_class_count(datasets);
    for (const auto& d : datasets) {
        if (!d.empty()) {
            split.feature_dim = d.feature_dim();
            break;
        }
    }

    for (const auto& d : datasets) {
        if (d.domain_id == unseen_id) {
            continue;
        }
        ClientData client;
        client.domain_id = d.domain_id;
        client.train.domain_id = d.domain_id;
        client.val.domain_id = d.domain_id;

        // Stratified split: per class, shuffle then peel off the validation
        // fraction, always keeping at least one example in train.
        std::vector<std::vector<std::size_t>> by_class(
            static_cast<std::size_t>(split.num_classes));
        for (std::size_t i = 0; i < d.examples.size(); ++i) {
            by_class[static_cast<std::size_t>(d.examples[i].label)].push_back(i);
        }
        Rng rng(mix_seed(seed, seed_tag::split, static_cast<std::uint64_t>(d.domain_id) + 1));
        for (int c = 0; c < split.num_classes; ++c) {
            auto& idx = by_class[static_cast<std::size_t>(c)];
            if (idx.empty()) {
                throw std::runtime_error("domain " + std::to_string(d.domain_id) +
                                         " train split is missing class " + std::to_string(c));
            }
            rng.shuffle(idx);
            std::size_t n_val = static_cast<std::size_t>(val_fraction *
                                                         static_cast<double>(idx.size()));
            if (n_val >= idx.size()) {
                n_val = idx.size() - 1;
            }
            for (std::size_t i = 0; i < idx.size(); ++i) {
                if (i < n_val) {
                    client.val.examples.push_back(d.examples[idx[i]]);
                } else {
                    client.train.examples.push_back(d.examples[idx[i]]);
                }
            }
        }
        split.clients.push_back(std::move(client));
    }
    return split;
}

}  // namespace fedlsi::data
