#pragma once

#include <cstdint>
#include <vector>

#include "fedlsi/data/dataset.hpp"
#include "fedlsi/nn/tensor.hpp"
#include "fedlsi/util.hpp"

namespace fedlsi::data {

struct Batch {
    std::vector<std::size_t> indices;
    int label = -1;  // set only in same-class mode
};

struct BatchOptions {
    bool drop_incomplete = false;
    bool same_class = false;
};

// Deterministic shuffled-epoch minibatch stream. In same-class mode every
// batch holds examples of a single class: each epoch partitions the dataset
// per class, chunks each class, and shuffles the chunk order.
class MinibatchIter {
public:
    MinibatchIter(const DomainDataset& dataset, std::size_t batch, std::uint64_t seed,
                  BatchOptions opts = {});

    std::vector<Batch> next_epoch();

private:
    const DomainDataset& dataset_;
    std::size_t batch_;
    BatchOptions opts_;
    Rng rng_;
};

// Assemble a (batch, k) feature tensor and the matching label vector.
nn::TensorPtr batch_features(const DomainDataset& dataset, const std::vector<std::size_t>& idx);
std::vector<int> batch_labels(const DomainDataset& dataset, const std::vector<std::size_t>& idx);

}  // namespace fedlsi::data
