#pragma once

#include <array>
#include <vector>

namespace fedlsi::report {

// Two-component PCA fitted on row vectors; deterministic (eigendecomposition
// of the covariance, component signs canonicalized).
struct Pca2 {
    std::vector<double> mean;
    std::array<std::vector<double>, 2> components;
    double variance_explained = 0.0;

    std::array<double, 2> project(const std::vector<double>& row) const;
};

Pca2 fit_pca2(const std::vector<std::vector<double>>& rows);

}  // namespace fedlsi::report
