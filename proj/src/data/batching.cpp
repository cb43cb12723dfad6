#include "fedlsi/data/batching.hpp"

#include <stdexcept>

namespace fedlsi::data {

MinibatchIter::MinibatchIter(const DomainDataset& dataset, std::size_t batch, std::uint64_t seed,
                             BatchOptions opts)
    : dataset_(dataset), batch_(batch), opts_(opts), rng_(mix_seed(seed, seed_tag::batch)) {
    if (batch_ == 0) {
        throw std::invalid_argument("minibatch: batch size must be >= 1");
    }
    if (dataset_.empty()) {
        throw std::invalid_argument("minibatch: dataset is empty");
    }
    if (opts_.drop_incomplete && batch_ > dataset_.size()) {
        throw std::invalid_argument(
            "minibatch: batch size exceeds dataset size with drop-incomplete set");
    }
}

std::vector<Batch> MinibatchIter::next_epoch() {
    std::vector<Batch> batches;
    if (!opts_.same_class) {
        std::vector<std::size_t> order(dataset_.size());
        for (std::size_t i = 0; i < order.size(); ++i) {
            order[i] = i;
        }
        rng_.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += batch_) {
            const std::size_t end = std::min(start + batch_, order.size());
            if (opts_.drop_incomplete && end - start < batch_) {
                break;
            }
            Batch b;
            b.indices.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() + static_cast<std::ptrdiff_t>(end));
            batches.push_back(std::move(b));
        }
        return batches;
    }

    const int classes = dataset_.class_count();
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(classes));
    for (std::size_t i = 0; i < dataset_.size(); ++i) {
        by_class[static_cast<std::size_t>(dataset_.examples[i].label)].push_back(i);
    }
    for (int c = 0; c < classes; ++c) {
        auto& idx = by_class[static_cast<std::size_t>(c)];
        rng_.shuffle(idx);
        for (std::size_t start = 0; start < idx.size(); start += batch_) {
            const std::size_t end = std::min(start + batch_, idx.size());
            if (opts_.drop_incomplete && end - start < batch_) {
                break;
            }
            Batch b;
            b.label = c;
            b.indices.assign(idx.begin() + static_cast<std::ptrdiff_t>(start),
                             idx.begin() + static_cast<std::ptrdiff_t>(end));
            batches.push_back(std::move(b));
        }
    }
    rng_.shuffle(batches);
    return batches;
}

nn::TensorPtr batch_features(const DomainDataset& dataset, const std::vector<std::size_t>& idx) {
    if (idx.empty()) {
        throw std::invalid_argument("batch_features: empty index list");
    }
    const std::size_t k = dataset.feature_dim();
    std::vector<double> vals(idx.size() * k);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const auto& ex = dataset.examples.at(idx[i]);
        std::copy(ex.features.begin(), ex.features.end(), vals.begin() + static_cast<std::ptrdiff_t>(i * k));
    }
    return nn::Tensor::make({idx.size(), k}, std::move(vals), false);
}

std::vector<int> batch_labels(const DomainDataset& dataset, const std::vector<std::size_t>& idx) {
    std::vector<int> labels(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        labels[i] = dataset.examples.at(idx[i]).label;
    }
    return labels;
}

}  // namespace fedlsi::data
