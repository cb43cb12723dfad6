#include "fedlsi/report/pca.hpp"

#include <Eigen/Dense>

#include <stdexcept>

namespace fedlsi::report {

std::array<double, 2> Pca2::project(const std::vector<double>& row) const {
    if (row.size() != mean.size()) {
        throw std::invalid_argument("pca project: dimension mismatch");
    }
    std::array<double, 2> out{0.0, 0.0};
    for (std::size_t c = 0; c < 2; ++c) {
        for (std::size_t j = 0; j < row.size(); ++j) {
            out[c] += (row[j] - mean[j]) * components[c][j];
        }
    }
    return out;
}

Pca2 fit_pca2(const std::vector<std::vector<double>>& rows) {
    if (rows.size() < 2) {
        throw std::invalid_argument("pca: need at least 2 rows");
    }
    const std::size_t n = rows.size();
    const std::size_t p = rows.front().size();
    if (p < 2) {
        throw std::invalid_argument("pca: need at least 2 features");
    }

    Pca2 pca;
    pca.mean.assign(p, 0.0);
    for (const auto& r : rows) {
        if (r.size() != p) {
            throw std::invalid_argument("pca: ragged input");
        }
        for (std::size_t j = 0; j < p; ++j) {
            pca.mean[j] += r[j];
        }
    }
    for (double& v : pca.mean) {
        v /= static_cast<double>(n);
    }

    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p),
                                                static_cast<Eigen::Index>(p));
    for (const auto& r : rows) {
        Eigen::VectorXd d(static_cast<Eigen::Index>(p));
        for (std::size_t j = 0; j < p; ++j) {
            d[static_cast<Eigen::Index>(j)] = r[j] - pca.mean[j];
        }
        cov += d * d.transpose();
    }
    cov /= static_cast<double>(n - 1);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success) {
        throw std::runtime_error("pca: eigendecomposition failed");
    }
    const auto& values = solver.eigenvalues();   // ascending
    const auto& vectors = solver.eigenvectors();

    double total = 0.0;
    for (Eigen::Index i = 0; i < values.size(); ++i) {
        total += std::max(0.0, values[i]);
    }
    const Eigen::Index last = values.size() - 1;
    pca.variance_explained =
        total > 0.0 ? (std::max(0.0, values[last]) + std::max(0.0, values[last - 1])) / total
                    : 0.0;

    for (std::size_t c = 0; c < 2; ++c) {
        const Eigen::Index col = last - static_cast<Eigen::Index>(c);
        std::vector<double> comp(p);
        for (std::size_t j = 0; j < p; ++j) {
            comp[j] = vectors(static_cast<Eigen::Index>(j), col);
        }
        // canonical sign: largest-magnitude coordinate is positive
        std::size_t arg = 0;
        for (std::size_t j = 1; j < p; ++j) {
            if (std::abs(comp[j]) > std::abs(comp[arg])) {
                arg = j;
            }
        }
        if (comp[arg] < 0.0) {
            for (double& v : comp) {
                v = -v;
            }
        }
        pca.components[c] = std::move(comp);
    }
    return pca;
}

}  // namespace fedlsi::report
