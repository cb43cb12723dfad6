#include "fedlsi/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace fedlsi::nn {

namespace {

void require_same_shape(const TensorPtr& a, const TensorPtr& b, const char* op) {
    if (a->shape() != b->shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
    }
}

bool any_requires_grad(std::initializer_list<const TensorPtr*> ins) {
    for (const TensorPtr* t : ins) {
        if ((*t)->requires_grad()) {
            return true;
        }
    }
    return false;
}

void maybe_record(Tape* tape, const char* op, std::initializer_list<const TensorPtr*> ins,
                  const TensorPtr& out, std::function<void()> backward) {
    if (!out->requires_grad() || tape == nullptr) {
        return;
    }
    std::vector<std::uint64_t> ids;
    ids.reserve(ins.size());
    for (const TensorPtr* t : ins) {
        ids.push_back((*t)->id());
    }
    tape->record(op, std::move(ids), out->id(), std::move(backward));
}

TensorPtr unary_elementwise(Tape* tape, const char* op, const TensorPtr& x,
                            double (*fwd)(double), double (*dfdx)(double)) {
    std::vector<double> y(x->size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        y[i] = fwd(x->values()[i]);
    }
    const bool xg = x->requires_grad();
    auto out = Tensor::make(x->shape(), std::move(y), xg);
    maybe_record(tape, op, {&x}, out, [x, out, dfdx, xg]() {
        if (!out->has_grad() || !xg) {
            return;
        }
        auto& gx = x->grad();
        const auto& go = out->grad();
        for (std::size_t i = 0; i < gx.size(); ++i) {
            gx[i] += dfdx(x->values()[i]) * go[i];
        }
    });
    return out;
}

}  // namespace

TensorPtr add(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
    require_same_shape(a, b, "add");
    std::vector<double> y(a->size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        y[i] = a->values()[i] + b->values()[i];
    }
    const bool ag = a->requires_grad();
    const bool bg = b->requires_grad();
    auto out = Tensor::make(a->shape(), std::move(y), ag || bg);
    maybe_record(tape, "add", {&a, &b}, out, [a, b, out, ag, bg]() {
        if (!out->has_grad()) {
            return;
        }
        if (ag) {
            a->accumulate_grad(out->grad());
        }
        if (bg) {
            b->accumulate_grad(out->grad());
        }
    });
    return out;
}

TensorPtr sub(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
    require_same_shape(a, b, "sub");
    std::vector<double> y(a->size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        y[i] = a->values()[i] - b->values()[i];
    }
    const bool ag = a->requires_grad();
    const bool bg = b->requires_grad();
    auto out = Tensor::make(a->shape(), std::move(y), ag || bg);
    maybe_record(tape, "sub", {&a, &b}, out, [a, b, out, ag, bg]() {
        if (!out->has_grad()) {
            return;
        }
        const auto& go = out->grad();
        if (ag) {
            a->accumulate_grad(go);
        }
        if (bg) {
            auto& gb = b->grad();
            for (std::size_t i = 0; i < gb.size(); ++i) {
                gb[i] -= go[i];
            }
        }
    });
    return out;
}

TensorPtr mul(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> y(a->size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        y[i] = a->values()[i] * b->values()[i];
    }
    const bool ag = a->requires_grad();
    const bool bg = b->requires_grad();
    auto out = Tensor::make(a->shape(), std::move(y), ag || bg);
    maybe_record(tape, "mul", {&a, &b}, out, [a, b, out, ag, bg]() {
        if (!out->has_grad()) {
            return;
        }
        const auto& go = out->grad();
        if (ag) {
            auto& ga = a->grad();
            for (std::size_t i = 0; i < ga.size(); ++i) {
                ga[i] += b->values()[i] * go[i];
            }
        }
        if (bg) {
            auto& gb = b->grad();
            for (std::size_t i = 0; i < gb.size(); ++i) {
                gb[i] += a->values()[i] * go[i];
            }
        }
    });
    return out;
}

TensorPtr scale(Tape* tape, const TensorPtr& a, double c) {
    std::vector<double> y(a->size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        y[i] = a->values()[i] * c;
    }
    const bool ag = a->requires_grad();
    auto out = Tensor::make(a->shape(), std::move(y), ag);
    maybe_record(tape, "scale", {&a}, out, [a, out, c, ag]() {
        if (!out->has_grad() || !ag) {
            return;
        }
        auto& ga = a->grad();
        const auto& go = out->grad();
        for (std::size_t i = 0; i < ga.size(); ++i) {
            ga[i] += c * go[i];
        }
    });
    return out;
}

TensorPtr add_rowvec(Tape* tape, const TensorPtr& x, const TensorPtr& v) {
    const std::size_t b = x->rows();
    const std::size_t p = x->cols();
    if (v->rank() != 1 || v->shape()[0] != p) {
        throw std::invalid_argument("add_rowvec: vector width mismatch");
    }
    std::vector<double> y(x->size());
    for (std::size_t r = 0; r < b; ++r) {
        for (std::size_t c = 0; c < p; ++c) {
            y[r * p + c] = x->values()[r * p + c] + v->values()[c];
        }
    }
    const bool xg = x->requires_grad();
    const bool vg = v->requires_grad();
    auto out = Tensor::make(x->shape(), std::move(y), xg || vg);
    maybe_record(tape, "add_rowvec", {&x, &v}, out, [x, v, out, b, p, xg, vg]() {
        if (!out->has_grad()) {
            return;
        }
        const auto& go = out->grad();
        if (xg) {
            x->accumulate_grad(go);
        }
        if (vg) {
            auto& gv = v->grad();
            for (std::size_t r = 0; r < b; ++r) {
                for (std::size_t c = 0; c < p; ++c) {
                    gv[c] += go[r * p + c];
                }
            }
        }
    });
    return out;
}

TensorPtr sub_rowvec(Tape* tape, const TensorPtr& x, const TensorPtr& v) {
    const std::size_t b = x->rows();
    const std::size_t p = x->cols();
    if (v->rank() != 1 || v->shape()[0] != p) {
        throw std::invalid_argument("sub_rowvec: vector width mismatch");
    }
    std::vector<double> y(x->size());
    for (std::size_t r = 0; r < b; ++r) {
        for (std::size_t c = 0; c < p; ++c) {
            y[r * p + c] = x->values()[r * p + c] - v->values()[c];
        }
    }
    const bool xg = x->requires_grad();
    const bool vg = v->requires_grad();
    auto out = Tensor::make(x->shape(), std::move(y), xg || vg);
    maybe_record(tape, "sub_rowvec", {&x, &v}, out, [x, v, out, b, p, xg, vg]() {
        if (!out->has_grad()) {
            return;
        }
        const auto& go = out->grad();
        if (xg) {
            x->accumulate_grad(go);
        }
        if (vg) {
            auto& gv = v->grad();
            for (std::size_t r = 0; r < b; ++r) {
                for (std::size_t c = 0; c < p; ++c) {
                    gv[c] -= go[r * p + c];
                }
            }
        }
    });
    return out;
}

TensorPtr matmul(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
    const std::size_t m = a->rows();
    const std::size_t k = a->cols();
    if (b->rows() != k) {
        throw std::invalid_argument("matmul: inner dimension mismatch");
    }
    const std::size_t n = b->cols();
    std::vector<double> y(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = a->values()[i * k + kk];
            const double* brow = b->values().data() + kk * n;
            double* yrow = y.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) {
                yrow[j] += av * brow[j];
            }
        }
    }
    const bool ag = a->requires_grad();
    const bool bg = b->requires_grad();
    auto out = Tensor::make({m, n}, std::move(y), ag || bg);
    maybe_record(tape, "matmul", {&a, &b}, out, [a, b, out, m, k, n, ag, bg]() {
        if (!out->has_grad()) {
            return;
        }
        const auto& go = out->grad();
        if (ag) {
            auto& ga = a->grad();
            // dA = dY * B^T
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t kk = 0; kk < k; ++kk) {
                    double s = 0.0;
                    const double* gorow = go.data() + i * n;
                    const double* brow = b->values().data() + kk * n;
                    for (std::size_t j = 0; j < n; ++j) {
                        s += gorow[j] * brow[j];
                    }
                    ga[i * k + kk] += s;
                }
            }
        }
        if (bg) {
            auto& gb = b->grad();
            // dB = A^T * dY
            for (std::size_t kk = 0; kk < k; ++kk) {
                for (std::size_t i = 0; i < m; ++i) {
                    const double av = a->values()[i * k + kk];
                    const double* gorow = go.data() + i * n;
                    double* gbrow = gb.data() + kk * n;
                    for (std::size_t j = 0; j < n; ++j) {
                        gbrow[j] += av * gorow[j];
                    }
                }
            }
        }
    });
    return out;
}

TensorPtr matmul_nt(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
    const std::size_t m = a->rows();
    const std::size_t k = a->cols();
    if (b->cols() != k) {
        throw std::invalid_argument("matmul_nt: inner dimension mismatch");
    }
    const std::size_t n = b->rows();
    std::vector<double> y(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a->values().data() + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b->values().data() + j * k;
            double s = 0.0;
            for (std::size_t kk = 0; kk < k; ++kk) {
                s += arow[kk] * brow[kk];
            }
            y[i * n + j] = s;
        }
    }
    const bool ag = a->requires_grad();
    const bool bg = b->requires_grad();
    auto out = Tensor::make({m, n}, std::move(y), ag || bg);
    maybe_record(tape, "matmul_nt", {&a, &b}, out, [a, b, out, m, k, n, ag, bg]() {
        if (!out->has_grad()) {
            return;
        }
        const auto& go = out->grad();
        if (ag) {
            auto& ga = a->grad();
            // dA = dY * B
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    const double g = go[i * n + j];
                    const double* brow = b->values().data() + j * k;
                    double* garow = ga.data() + i * k;
                    for (std::size_t kk = 0; kk < k; ++kk) {
                        garow[kk] += g * brow[kk];
                    }
                }
            }
        }
        if (bg) {
            auto& gb = b->grad();
            // dB = dY^T * A
            for (std::size_t j = 0; j < n; ++j) {
                for (std::size_t i = 0; i < m; ++i) {
                    const double g = go[i * n + j];
                    const double* arow = a->values().data() + i * k;
                    double* gbrow = gb.data() + j * k;
                    for (std::size_t kk = 0; kk < k; ++kk) {
                        gbrow[kk] += g * arow[kk];
                    }
                }
            }
        }
    });
    return out;
}

TensorPtr relu(Tape* tape, const TensorPtr& x) {
    return unary_elementwise(
        tape, "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

TensorPtr leaky_relu(Tape* tape, const TensorPtr& x, double slope) {
    std::vector<double> y(x->size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double v = x->values()[i];
        y[i] = v > 0.0 ? v : slope * v;
    }
    const bool xg = x->requires_grad();
    auto out = Tensor::make(x->shape(), std::move(y), xg);
    maybe_record(tape, "leaky_relu", {&x}, out, [x, out, slope, xg]() {
        if (!out->has_grad() || !xg) {
            return;
        }
        auto& gx = x->grad();
        const auto& go = out->grad();
        for (std::size_t i = 0; i < gx.size(); ++i) {
            gx[i] += (x->values()[i] > 0.0 ? 1.0 : slope) * go[i];
        }
    });
    return out;
}

TensorPtr sigmoid(Tape* tape, const TensorPtr& x) {
    std::vector<double> y(x->size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double v = x->values()[i];
        y[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    }
    const bool xg = x->requires_grad();
    auto out = Tensor::make(x->shape(), std::move(y), xg);
    maybe_record(tape, "sigmoid", {&x}, out, [x, out, xg]() {
        if (!out->has_grad() || !xg) {
            return;
        }
        auto& gx = x->grad();
        const auto& go = out->grad();
        for (std::size_t i = 0; i < gx.size(); ++i) {
            const double s = out->values()[i];
            gx[i] += s * (1.0 - s) * go[i];
        }
    });
    return out;
}

TensorPtr log_elem(Tape* tape, const TensorPtr& x) {
    std::vector<double> y(x->size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double v = x->values()[i];
        if (v <= 0.0) {
            throw std::domain_error("log_elem: input must be positive");
        }
        y[i] = std::log(v);
    }
    const bool xg = x->requires_grad();
    auto out = Tensor::make(x->shape(), std::move(y), xg);
    maybe_record(tape, "log", {&x}, out, [x, out, xg]() {
        if (!out->has_grad() || !xg) {
            return;
        }
        auto& gx = x->grad();
        const auto& go = out->grad();
        for (std::size_t i = 0; i < gx.size(); ++i) {
            gx[i] += go[i] / x->values()[i];
        }
    });
    return out;
}

TensorPtr clamp_min(Tape* tape, const TensorPtr& x, double lo) {
    std::vector<double> y(x->size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        y[i] = std::max(x->values()[i], lo);
    }
    const bool xg = x->requires_grad();
    auto out = Tensor::make(x->shape(), std::move(y), xg);
    maybe_record(tape, "clamp_min", {&x}, out, [x, out, lo, xg]() {
        if (!out->has_grad() || !xg) {
            return;
        }
        auto& gx = x->grad();
        const auto& go = out->grad();
        for (std::size_t i = 0; i < gx.size(); ++i) {
            if (x->values()[i] > lo) {
                gx[i] += go[i];
            }
        }
    });
    return out;
}

TensorPtr square(Tape* tape, const TensorPtr& x) {
    return unary_elementwise(
        tape, "square", x, [](double v) { return v * v; }, [](double v) { return 2.0 * v; });
}

TensorPtr sum_all(Tape* tape, const TensorPtr& x) {
    double s = 0.0;
    for (double v : x->values()) {
        s += v;
    }
    const bool xg = x->requires_grad();
    auto out = Tensor::make({}, {s}, xg);
    maybe_record(tape, "sum", {&x}, out, [x, out, xg]() {
        if (!out->has_grad() || !xg) {
            return;
        }
        const double g = out->grad()[0];
        auto& gx = x->grad();
        for (double& v : gx) {
            v += g;
        }
    });
    return out;
}

TensorPtr mean_all(Tape* tape, const TensorPtr& x) {
    return scale(tape, sum_all(tape, x), 1.0 / static_cast<double>(x->size()));
}

TensorPtr batch_mean(Tape* tape, const TensorPtr& x) {
    const std::size_t b = x->rows();
    const std::size_t p = x->cols();
    std::vector<double> y(p, 0.0);
    for (std::size_t r = 0; r < b; ++r) {
        for (std::size_t c = 0; c < p; ++c) {
            y[c] += x->values()[r * p + c];
        }
    }
    const double inv = 1.0 / static_cast<double>(b);
    for (double& v : y) {
        v *= inv;
    }
    const bool xg = x->requires_grad();
    auto out = Tensor::make({p}, std::move(y), xg);
    maybe_record(tape, "batch_mean", {&x}, out, [x, out, b, p, inv, xg]() {
        if (!out->has_grad() || !xg) {
            return;
        }
        const auto& go = out->grad();
        auto& gx = x->grad();
        for (std::size_t r = 0; r < b; ++r) {
            for (std::size_t c = 0; c < p; ++c) {
                gx[r * p + c] += inv * go[c];
            }
        }
    });
    return out;
}

TensorPtr l2_norm(Tape* tape, const TensorPtr& x) {
    double ss = 0.0;
    for (double v : x->values()) {
        ss += v * v;
    }
    const double n = std::sqrt(ss);
    const bool xg = x->requires_grad();
    auto out = Tensor::make({}, {n}, xg);
    maybe_record(tape, "l2_norm", {&x}, out, [x, out, n, xg]() {
        if (!out->has_grad() || !xg) {
            return;
        }
        if (n == 0.0) {
            return;  // subgradient 0 at the origin
        }
        const double g = out->grad()[0] / n;
        auto& gx = x->grad();
        for (std::size_t i = 0; i < gx.size(); ++i) {
            gx[i] += g * x->values()[i];
        }
    });
    return out;
}

TensorPtr mean_abs_diff(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
    require_same_shape(a, b, "mean_abs_diff");
    double s = 0.0;
    for (std::size_t i = 0; i < a->size(); ++i) {
        s += std::abs(a->values()[i] - b->values()[i]);
    }
    const double inv = 1.0 / static_cast<double>(a->size());
    const bool ag = a->requires_grad();
    const bool bg = b->requires_grad();
    auto out = Tensor::make({}, {s * inv}, ag || bg);
    maybe_record(tape, "mean_abs_diff", {&a, &b}, out, [a, b, out, inv, ag, bg]() {
        if (!out->has_grad()) {
            return;
        }
        const double g = out->grad()[0] * inv;
        for (std::size_t i = 0; i < a->size(); ++i) {
            const double d = a->values()[i] - b->values()[i];
            const double sgn = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
            if (ag) {
                a->grad()[i] += g * sgn;
            }
            if (bg) {
                b->grad()[i] -= g * sgn;
            }
        }
    });
    return out;
}

TensorPtr concat_cols(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
    const std::size_t rows = a->rows();
    if (b->rows() != rows) {
        throw std::invalid_argument("concat_cols: row count mismatch");
    }
    const std::size_t pa = a->cols();
    const std::size_t pb = b->cols();
    std::vector<double> y(rows * (pa + pb));
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(a->values().data() + r * pa, pa, y.data() + r * (pa + pb));
        std::copy_n(b->values().data() + r * pb, pb, y.data() + r * (pa + pb) + pa);
    }
    const bool ag = a->requires_grad();
    const bool bg = b->requires_grad();
    auto out = Tensor::make({rows, pa + pb}, std::move(y), ag || bg);
    maybe_record(tape, "concat_cols", {&a, &b}, out, [a, b, out, rows, pa, pb, ag, bg]() {
        if (!out->has_grad()) {
            return;
        }
        const auto& go = out->grad();
        for (std::size_t r = 0; r < rows; ++r) {
            if (ag) {
                auto& ga = a->grad();
                for (std::size_t c = 0; c < pa; ++c) {
                    ga[r * pa + c] += go[r * (pa + pb) + c];
                }
            }
            if (bg) {
                auto& gb = b->grad();
                for (std::size_t c = 0; c < pb; ++c) {
                    gb[r * pb + c] += go[r * (pa + pb) + pa + c];
                }
            }
        }
    });
    return out;
}

TensorPtr gather_rows(Tape* tape, const TensorPtr& x, const std::vector<std::size_t>& rows) {
    const std::size_t n = x->rows();
    const std::size_t p = x->cols();
    std::vector<double> y(rows.size() * p);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= n) {
            throw std::out_of_range("gather_rows: row index out of range");
        }
        std::copy_n(x->values().data() + rows[i] * p, p, y.data() + i * p);
    }
    const bool xg = x->requires_grad();
    auto out = Tensor::make({rows.size(), p}, std::move(y), xg);
    maybe_record(tape, "gather_rows", {&x}, out, [x, out, rows, p, xg]() {
        if (!out->has_grad() || !xg) {
            return;
        }
        const auto& go = out->grad();
        auto& gx = x->grad();
        for (std::size_t i = 0; i < rows.size(); ++i) {
            for (std::size_t c = 0; c < p; ++c) {
                gx[rows[i] * p + c] += go[i * p + c];
            }
        }
    });
    return out;
}

TensorPtr dropout(Tape* tape, const TensorPtr& x, double p, Rng& rng, bool training) {
    if (p < 0.0 || p >= 1.0) {
        throw std::invalid_argument("dropout: p must be in [0, 1)");
    }
    if (!training || p == 0.0) {
        return x;
    }
    const double keep = 1.0 - p;
    const double inv_keep = 1.0 / keep;
    std::vector<double> mask(x->size());
    std::vector<double> y(x->size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        mask[i] = rng.uniform() < keep ? inv_keep : 0.0;
        y[i] = x->values()[i] * mask[i];
    }
    const bool xg = x->requires_grad();
    auto out = Tensor::make(x->shape(), std::move(y), xg);
    maybe_record(tape, "dropout", {&x}, out, [x, out, mask = std::move(mask), xg]() {
        if (!out->has_grad() || !xg) {
            return;
        }
        auto& gx = x->grad();
        const auto& go = out->grad();
        for (std::size_t i = 0; i < gx.size(); ++i) {
            gx[i] += mask[i] * go[i];
        }
    });
    return out;
}

TensorPtr layer_norm(Tape* tape, const TensorPtr& x, const TensorPtr& gamma,
                     const TensorPtr& beta, double eps) {
    const std::size_t b = x->rows();
    const std::size_t p = x->cols();
    if (gamma->size() != p || beta->size() != p) {
        throw std::invalid_argument("layer_norm: affine parameter width mismatch");
    }
    if (eps <= 0.0) {
        throw std::invalid_argument("layer_norm: eps must be > 0");
    }
    std::vector<double> xhat(b * p);
    std::vector<double> invstd(b);
    std::vector<double> y(b * p);
    for (std::size_t r = 0; r < b; ++r) {
        const double* row = x->values().data() + r * p;
        double mean = 0.0;
        for (std::size_t c = 0; c < p; ++c) {
            mean += row[c];
        }
        mean /= static_cast<double>(p);
        double var = 0.0;
        for (std::size_t c = 0; c < p; ++c) {
            const double d = row[c] - mean;
            var += d * d;
        }
        var /= static_cast<double>(p);
        invstd[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t c = 0; c < p; ++c) {
            const double h = (row[c] - mean) * invstd[r];
            xhat[r * p + c] = h;
            y[r * p + c] = h * gamma->values()[c] + beta->values()[c];
        }
    }
    const bool xg = x->requires_grad();
    const bool gg = gamma->requires_grad();
    const bool bgr = beta->requires_grad();
    auto out = Tensor::make(x->shape(), std::move(y), xg || gg || bgr);
    maybe_record(tape, "layer_norm", {&x, &gamma, &beta}, out,
                 [x, gamma, beta, out, xhat = std::move(xhat), invstd = std::move(invstd), b, p,
                  xg, gg, bgr]() {
                     if (!out->has_grad()) {
                         return;
                     }
                     const auto& go = out->grad();
                     if (bgr) {
                         auto& gb = beta->grad();
                         for (std::size_t r = 0; r < b; ++r) {
                             for (std::size_t c = 0; c < p; ++c) {
                                 gb[c] += go[r * p + c];
                             }
                         }
                     }
                     if (gg) {
                         auto& ggrad = gamma->grad();
                         for (std::size_t r = 0; r < b; ++r) {
                             for (std::size_t c = 0; c < p; ++c) {
                                 ggrad[c] += go[r * p + c] * xhat[r * p + c];
                             }
                         }
                     }
                     if (xg) {
                         auto& gx = x->grad();
                         const double invp = 1.0 / static_cast<double>(p);
                         for (std::size_t r = 0; r < b; ++r) {
                             double sum_g = 0.0;
                             double sum_gh = 0.0;
                             for (std::size_t c = 0; c < p; ++c) {
                                 const double g = go[r * p + c] * gamma->values()[c];
                                 sum_g += g;
                                 sum_gh += g * xhat[r * p + c];
                             }
                             for (std::size_t c = 0; c < p; ++c) {
                                 const double g = go[r * p + c] * gamma->values()[c];
                                 gx[r * p + c] += invstd[r] *
                                                  (g - invp * sum_g - xhat[r * p + c] * invp * sum_gh);
                             }
                         }
                     }
                 });
    return out;
}

TensorPtr cross_entropy(Tape* tape, const TensorPtr& logits, const std::vector<int>& labels) {
    const std::size_t b = logits->rows();
    const std::size_t c = logits->cols();
    if (labels.size() != b) {
        throw std::invalid_argument("cross_entropy: label count does not match batch size");
    }
    double loss = 0.0;
    for (std::size_t r = 0; r < b; ++r) {
        const int y = labels[r];
        if (y < 0 || static_cast<std::size_t>(y) >= c) {
            throw std::out_of_range("cross_entropy: label out of range");
        }
        const double* row = logits->values().data() + r * c;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < c; ++j) {
            mx = std::max(mx, row[j]);
        }
        double sumexp = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            sumexp += std::exp(row[j] - mx);
        }
        loss += (mx + std::log(sumexp)) - row[y];
    }
    loss /= static_cast<double>(b);
    const bool lg = logits->requires_grad();
    auto out = Tensor::make({}, {loss}, lg);
    maybe_record(tape, "cross_entropy", {&logits}, out, [logits, out, labels, b, c, lg]() {
        if (!out->has_grad() || !lg) {
            return;
        }
        const double g = out->grad()[0] / static_cast<double>(b);
        auto& gx = logits->grad();
        for (std::size_t r = 0; r < b; ++r) {
            const double* row = logits->values().data() + r * c;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < c; ++j) {
                mx = std::max(mx, row[j]);
            }
            double sumexp = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
                sumexp += std::exp(row[j] - mx);
            }
            for (std::size_t j = 0; j < c; ++j) {
                const double p = std::exp(row[j] - mx) / sumexp;
                const double onehot = (static_cast<int>(j) == labels[r]) ? 1.0 : 0.0;
                gx[r * c + j] += g * (p - onehot);
            }
        }
    });
    return out;
}

}  // namespace fedlsi::nn
