#include "fewshot/graph.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "fewshot/rng.hpp"

namespace fewshot::ad {

namespace {

constexpr double kExpGuard = 700.0;  // exp stays finite below this

// in-place y += x for equal-length buffers
void axpy(std::vector<double>& y, const std::vector<double>& x, double s = 1.0) {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += s * x[i];
}

}  // namespace

TensorPtr Graph::record(const char* kind, std::vector<TensorPtr> inputs, TensorPtr out,
                        std::function<void()> backprop) {
    bool rg = false;
    for (const auto& in : inputs) rg = rg || in->requires_grad;
    out->set_requires_grad(rg);
    nodes_.push_back(Node{kind, std::move(inputs), out, std::move(backprop)});
    return out;
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

TensorPtr Graph::binary_elementwise(const char* kind, const TensorPtr& a, const TensorPtr& b) {
    // exact-shape or scalar broadcast only; richer broadcasting is rejected
    if (!(a->shape == b->shape || a->numel() == 1 || b->numel() == 1)) {
        throw std::invalid_argument(std::string(kind) + ": shape mismatch " + shape_str(a->shape) +
                                    " vs " + shape_str(b->shape) +
                                    " (only exact-match or scalar broadcast supported)");
    }
    const bool a_scalar = a->numel() == 1 && b->numel() != 1;
    const Shape& out_shape = a_scalar ? b->shape : a->shape;
    auto out = zeros(out_shape);
    const std::size_t n = out->numel();

    auto va = [&](std::size_t i) { return a->numel() == 1 ? a->data[0] : a->data[i]; };
    auto vb = [&](std::size_t i) { return b->numel() == 1 ? b->data[0] : b->data[i]; };

    if (kind[0] == 'a') {  // add
        for (std::size_t i = 0; i < n; ++i) out->data[i] = va(i) + vb(i);
    } else if (kind[0] == 's') {  // sub
        for (std::size_t i = 0; i < n; ++i) out->data[i] = va(i) - vb(i);
    } else if (kind[0] == 'm') {  // mul
        for (std::size_t i = 0; i < n; ++i) out->data[i] = va(i) * vb(i);
    } else {  // div
        for (std::size_t i = 0; i < b->numel(); ++i) {
            if (b->data[i] == 0.0) throw std::invalid_argument("div: divisor entry is zero");
        }
        for (std::size_t i = 0; i < n; ++i) out->data[i] = va(i) / vb(i);
    }

    const char op = kind[0];
    return record(kind, {a, b}, out, [a, b, out, op]() {
        const std::size_t n = out->numel();
        auto acc_a = [&](std::size_t i, double g) {
            if (a->numel() == 1) a->grad[0] += g; else a->grad[i] += g;
        };
        auto acc_b = [&](std::size_t i, double g) {
            if (b->numel() == 1) b->grad[0] += g; else b->grad[i] += g;
        };
        auto va = [&](std::size_t i) { return a->numel() == 1 ? a->data[0] : a->data[i]; };
        auto vb = [&](std::size_t i) { return b->numel() == 1 ? b->data[0] : b->data[i]; };
        for (std::size_t i = 0; i < n; ++i) {
            const double g = out->grad[i];
            switch (op) {
                case 'a':
                    if (a->requires_grad) acc_a(i, g);
                    if (b->requires_grad) acc_b(i, g);
                    break;
                case 's':
                    if (a->requires_grad) acc_a(i, g);
                    if (b->requires_grad) acc_b(i, -g);
                    break;
                case 'm':
                    if (a->requires_grad) acc_a(i, g * vb(i));
                    if (b->requires_grad) acc_b(i, g * va(i));
                    break;
                case 'd':
                    if (a->requires_grad) acc_a(i, g / vb(i));
                    if (b->requires_grad) acc_b(i, -g * va(i) / (vb(i) * vb(i)));
                    break;
            }
        }
    });
}

TensorPtr Graph::add(const TensorPtr& a, const TensorPtr& b) { return binary_elementwise("add", a, b); }
TensorPtr Graph::sub(const TensorPtr& a, const TensorPtr& b) { return binary_elementwise("sub", a, b); }
TensorPtr Graph::mul(const TensorPtr& a, const TensorPtr& b) { return binary_elementwise("mul", a, b); }
TensorPtr Graph::div(const TensorPtr& a, const TensorPtr& b) { return binary_elementwise("div", a, b); }

TensorPtr Graph::exp(const TensorPtr& a) {
    auto out = zeros(a->shape);
    for (std::size_t i = 0; i < a->numel(); ++i) {
        if (a->data[i] > kExpGuard) {
            throw std::invalid_argument("exp: input " + std::to_string(a->data[i]) +
                                        " would overflow");
        }
        out->data[i] = std::exp(a->data[i]);
    }
    return record("exp", {a}, out, [a, out]() {
        if (!a->requires_grad) return;
        for (std::size_t i = 0; i < a->numel(); ++i) a->grad[i] += out->grad[i] * out->data[i];
    });
}

TensorPtr Graph::log(const TensorPtr& a) {
    auto out = zeros(a->shape);
    for (std::size_t i = 0; i < a->numel(); ++i) {
        if (!(a->data[i] > 0.0)) {
            throw std::invalid_argument("log: input " + std::to_string(a->data[i]) +
                                        " is not strictly positive");
        }
        out->data[i] = std::log(a->data[i]);
    }
    return record("log", {a}, out, [a, out]() {
        if (!a->requires_grad) return;
        for (std::size_t i = 0; i < a->numel(); ++i) a->grad[i] += out->grad[i] / a->data[i];
    });
}

TensorPtr Graph::relu(const TensorPtr& a) {
    auto out = zeros(a->shape);
    for (std::size_t i = 0; i < a->numel(); ++i) out->data[i] = a->data[i] > 0.0 ? a->data[i] : 0.0;
    return record("relu", {a}, out, [a, out]() {
        if (!a->requires_grad) return;
        for (std::size_t i = 0; i < a->numel(); ++i) {
            if (a->data[i] > 0.0) a->grad[i] += out->grad[i];
        }
    });
}

TensorPtr Graph::scale(const TensorPtr& a, double s) {
    auto out = zeros(a->shape);
    for (std::size_t i = 0; i < a->numel(); ++i) out->data[i] = s * a->data[i];
    return record("scale", {a}, out, [a, out, s]() {
        if (!a->requires_grad) return;
        axpy(a->grad, out->grad, s);
    });
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

TensorPtr Graph::matmul(const TensorPtr& a, const TensorPtr& b) {
    if (a->rank() != 2 || b->rank() != 2 || a->shape[1] != b->shape[0]) {
        throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a->shape) + " vs " +
                                    shape_str(b->shape));
    }
    const std::size_t m = a->shape[0], k = a->shape[1], n = b->shape[1];
    auto out = zeros({m, n});
    const double* pa = a->data.data();
    const double* pb = b->data.data();
    double* pc = out->data.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = pa[i * k + p];
            if (aip == 0.0) continue;
            const double* brow = pb + p * n;
            double* crow = pc + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
    return record("matmul", {a, b}, out, [a, b, out, m, k, n]() {
        const double* g = out->grad.data();
        if (a->requires_grad) {
            // dA = dC * B^T
            double* da = a->grad.data();
            const double* pb = b->data.data();
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    const double gij = g[i * n + j];
                    if (gij == 0.0) continue;
                    const double* brow = pb + j;  // column j of B, strided
                    double* darow = da + i * k;
                    for (std::size_t p = 0; p < k; ++p) darow[p] += gij * brow[p * n];
                }
            }
        }
        if (b->requires_grad) {
            // dB = A^T * dC
            double* db = b->grad.data();
            const double* pa = a->data.data();
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t p = 0; p < k; ++p) {
                    const double aip = pa[i * k + p];
                    if (aip == 0.0) continue;
                    const double* grow = g + i * n;
                    double* dbrow = db + p * n;
                    for (std::size_t j = 0; j < n; ++j) dbrow[j] += aip * grow[j];
                }
            }
        }
    });
}

TensorPtr Graph::transpose(const TensorPtr& a) {
    if (a->rank() != 2) {
        throw std::invalid_argument("transpose: rank-2 tensor required, got " + shape_str(a->shape));
    }
    const std::size_t r = a->shape[0], c = a->shape[1];
    auto out = zeros({c, r});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out->data[j * r + i] = a->data[i * c + j];
    return record("transpose", {a}, out, [a, out, r, c]() {
        if (!a->requires_grad) return;
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) a->grad[i * c + j] += out->grad[j * r + i];
    });
}

// ---------------------------------------------------------------------------
// row-wise
// ---------------------------------------------------------------------------

TensorPtr Graph::softmax(const TensorPtr& a) {
    const std::size_t r = a->rows(), c = a->cols();
    auto out = zeros(a->shape);
    for (std::size_t i = 0; i < r; ++i) {
        const double* x = a->data.data() + i * c;
        double* y = out->data.data() + i * c;
        double m = x[0];
        for (std::size_t j = 1; j < c; ++j) m = std::max(m, x[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            y[j] = std::exp(x[j] - m);
            z += y[j];
        }
        for (std::size_t j = 0; j < c; ++j) y[j] /= z;
    }
    return record("softmax", {a}, out, [a, out, r, c]() {
        if (!a->requires_grad) return;
        for (std::size_t i = 0; i < r; ++i) {
            const double* y = out->data.data() + i * c;
            const double* gy = out->grad.data() + i * c;
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) dot += gy[j] * y[j];
            double* gx = a->grad.data() + i * c;
            for (std::size_t j = 0; j < c; ++j) gx[j] += y[j] * (gy[j] - dot);
        }
    });
}

TensorPtr Graph::layer_norm(const TensorPtr& x, const TensorPtr& gain, const TensorPtr& bias,
                            double eps) {
    const std::size_t r = x->rows(), c = x->cols();
    if (gain->numel() != c || bias->numel() != c) {
        throw std::invalid_argument("layer_norm: gain/bias length must equal row width " +
                                    std::to_string(c));
    }
    if (!(eps > 0.0)) throw std::invalid_argument("layer_norm: eps must be positive");

    auto out = zeros(x->shape);
    auto xhat = std::make_shared<std::vector<double>>(x->numel());
    auto rstd = std::make_shared<std::vector<double>>(r);
    for (std::size_t i = 0; i < r; ++i) {
        const double* xi = x->data.data() + i * c;
        double mu = 0.0;
        for (std::size_t j = 0; j < c; ++j) mu += xi[j];
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) var += (xi[j] - mu) * (xi[j] - mu);
        var /= static_cast<double>(c);
        const double rs = 1.0 / std::sqrt(var + eps);
        (*rstd)[i] = rs;
        double* h = xhat->data() + i * c;
        double* y = out->data.data() + i * c;
        for (std::size_t j = 0; j < c; ++j) {
            h[j] = (xi[j] - mu) * rs;
            y[j] = gain->data[j] * h[j] + bias->data[j];
        }
    }
    return record("layer_norm", {x, gain, bias}, out, [x, gain, bias, out, xhat, rstd, r, c]() {
        for (std::size_t i = 0; i < r; ++i) {
            const double* gy = out->grad.data() + i * c;
            const double* h = xhat->data() + i * c;
            if (gain->requires_grad) {
                for (std::size_t j = 0; j < c; ++j) gain->grad[j] += gy[j] * h[j];
            }
            if (bias->requires_grad) {
                for (std::size_t j = 0; j < c; ++j) bias->grad[j] += gy[j];
            }
            if (x->requires_grad) {
                double mean_dh = 0.0, mean_dh_h = 0.0;
                for (std::size_t j = 0; j < c; ++j) {
                    const double dh = gy[j] * gain->data[j];
                    mean_dh += dh;
                    mean_dh_h += dh * h[j];
                }
                mean_dh /= static_cast<double>(c);
                mean_dh_h /= static_cast<double>(c);
                double* gx = x->grad.data() + i * c;
                const double rs = (*rstd)[i];
                for (std::size_t j = 0; j < c; ++j) {
                    const double dh = gy[j] * gain->data[j];
                    gx[j] += rs * (dh - mean_dh - h[j] * mean_dh_h);
                }
            }
        }
    });
}

TensorPtr Graph::add_rows(const TensorPtr& x, const TensorPtr& b) {
    const std::size_t r = x->rows(), c = x->cols();
    if (b->numel() != c) {
        throw std::invalid_argument("add_rows: row width " + std::to_string(c) +
                                    " vs bias length " + std::to_string(b->numel()));
    }
    auto out = zeros(x->shape);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out->data[i * c + j] = x->data[i * c + j] + b->data[j];
    return record("add_rows", {x, b}, out, [x, b, out, r, c]() {
        if (x->requires_grad) axpy(x->grad, out->grad);
        if (b->requires_grad) {
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) b->grad[j] += out->grad[i * c + j];
        }
    });
}

TensorPtr Graph::logsumexp_rows(const TensorPtr& x) {
    const std::size_t r = x->rows(), c = x->cols();
    auto out = zeros({r});
    for (std::size_t i = 0; i < r; ++i) {
        const double* xi = x->data.data() + i * c;
        double m = xi[0];
        for (std::size_t j = 1; j < c; ++j) m = std::max(m, xi[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += std::exp(xi[j] - m);
        out->data[i] = m + std::log(z);
    }
    return record("logsumexp_rows", {x}, out, [x, out, r, c]() {
        if (!x->requires_grad) return;
        for (std::size_t i = 0; i < r; ++i) {
            const double g = out->grad[i];
            if (g == 0.0) continue;
            const double lse = out->data[i];
            const double* xi = x->data.data() + i * c;
            double* gx = x->grad.data() + i * c;
            for (std::size_t j = 0; j < c; ++j) gx[j] += g * std::exp(xi[j] - lse);
        }
    });
}

// ---------------------------------------------------------------------------
// structure
// ---------------------------------------------------------------------------

TensorPtr Graph::gather_rows(const TensorPtr& m, std::vector<std::size_t> row_ids) {
    if (m->rank() != 2) {
        throw std::invalid_argument("gather_rows: rank-2 tensor required, got " +
                                    shape_str(m->shape));
    }
    const std::size_t r = m->shape[0], c = m->shape[1];
    for (auto id : row_ids) {
        if (id >= r) {
            throw std::invalid_argument("gather_rows: row id " + std::to_string(id) +
                                        " out of range [0, " + std::to_string(r) + ")");
        }
    }
    auto out = zeros({row_ids.size(), c});
    for (std::size_t i = 0; i < row_ids.size(); ++i) {
        const double* src = m->data.data() + row_ids[i] * c;
        std::copy(src, src + c, out->data.data() + i * c);
    }
    auto ids = std::make_shared<std::vector<std::size_t>>(std::move(row_ids));
    return record("gather_rows", {m}, out, [m, out, ids, c]() {
        if (!m->requires_grad) return;
        for (std::size_t i = 0; i < ids->size(); ++i) {
            double* dst = m->grad.data() + (*ids)[i] * c;
            const double* g = out->grad.data() + i * c;
            for (std::size_t j = 0; j < c; ++j) dst[j] += g[j];
        }
    });
}

TensorPtr Graph::concat_rows(const std::vector<TensorPtr>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
    const std::size_t c = parts[0]->cols();
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p->cols() != c) {
            throw std::invalid_argument("concat_rows: column mismatch " + shape_str(parts[0]->shape) +
                                        " vs " + shape_str(p->shape));
        }
        total += p->rows();
    }
    auto out = zeros({total, c});
    std::size_t row = 0;
    for (const auto& p : parts) {
        std::copy(p->data.begin(), p->data.end(), out->data.begin() + row * c);
        row += p->rows();
    }
    return record("concat_rows", parts, out, [parts, out, c]() {
        std::size_t row = 0;
        for (const auto& p : parts) {
            if (p->requires_grad) {
                for (std::size_t i = 0; i < p->numel(); ++i) p->grad[i] += out->grad[row * c + i];
            }
            row += p->rows();
        }
    });
}

TensorPtr Graph::concat_cols(const std::vector<TensorPtr>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
    const std::size_t r = parts[0]->rows();
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p->rows() != r) {
            throw std::invalid_argument("concat_cols: row mismatch " + shape_str(parts[0]->shape) +
                                        " vs " + shape_str(p->shape));
        }
        total += p->cols();
    }
    auto out = zeros({r, total});
    std::size_t col = 0;
    for (const auto& p : parts) {
        const std::size_t pc = p->cols();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < pc; ++j) out->data[i * total + col + j] = p->at(i, j);
        col += pc;
    }
    return record("concat_cols", parts, out, [parts, out, r, total]() {
        std::size_t col = 0;
        for (const auto& p : parts) {
            const std::size_t pc = p->cols();
            if (p->requires_grad) {
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < pc; ++j)
                        p->grad[i * pc + j] += out->grad[i * total + col + j];
            }
            col += pc;
        }
    });
}

TensorPtr Graph::slice_cols(const TensorPtr& x, std::size_t start, std::size_t len) {
    const std::size_t r = x->rows(), c = x->cols();
    if (len == 0 || start + len > c) {
        throw std::invalid_argument("slice_cols: range [" + std::to_string(start) + ", " +
                                    std::to_string(start + len) + ") out of " + shape_str(x->shape));
    }
    auto out = zeros({r, len});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < len; ++j) out->data[i * len + j] = x->data[i * c + start + j];
    return record("slice_cols", {x}, out, [x, out, start, len, r, c]() {
        if (!x->requires_grad) return;
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < len; ++j) x->grad[i * c + start + j] += out->grad[i * len + j];
    });
}

TensorPtr Graph::sum(const TensorPtr& a) {
    auto out = zeros({1});
    double s = 0.0;
    for (double v : a->data) s += v;
    out->data[0] = s;
    return record("sum", {a}, out, [a, out]() {
        if (!a->requires_grad) return;
        const double g = out->grad[0];
        for (std::size_t i = 0; i < a->numel(); ++i) a->grad[i] += g;
    });
}

// ---------------------------------------------------------------------------
// fused loss kernels
// ---------------------------------------------------------------------------

TensorPtr Graph::cosine_similarity_matrix(const TensorPtr& embeddings) {
    if (embeddings->rank() != 2) {
        throw std::invalid_argument("cosine_similarity_matrix: rank-2 tensor required, got " +
                                    shape_str(embeddings->shape));
    }
    const std::size_t bsz = embeddings->shape[0], d = embeddings->shape[1];
    auto norms = std::make_shared<std::vector<double>>(bsz);
    auto unit = std::make_shared<std::vector<double>>(bsz * d);
    for (std::size_t i = 0; i < bsz; ++i) {
        const double* e = embeddings->data.data() + i * d;
        double sq = 0.0;
        for (std::size_t j = 0; j < d; ++j) sq += e[j] * e[j];
        const double r = std::sqrt(sq);
        if (!(r > 1e-150)) {
            throw std::invalid_argument("cosine_similarity_matrix: embedding row " +
                                        std::to_string(i) + " has zero norm");
        }
        (*norms)[i] = r;
        for (std::size_t j = 0; j < d; ++j) (*unit)[i * d + j] = e[j] / r;
    }
    auto out = zeros({bsz, bsz});
    for (std::size_t i = 0; i < bsz; ++i) {
        for (std::size_t j = i; j < bsz; ++j) {
            double s = 0.0;
            const double* ui = unit->data() + i * d;
            const double* uj = unit->data() + j * d;
            for (std::size_t k = 0; k < d; ++k) s += ui[k] * uj[k];
            out->data[i * bsz + j] = s;
            out->data[j * bsz + i] = s;
        }
    }
    return record("cosine_similarity_matrix", {embeddings}, out,
                  [embeddings, out, norms, unit, bsz, d]() {
                      if (!embeddings->requires_grad) return;
                      // S = U U^T  =>  dU = (G + G^T) U, then project through the
                      // normalization u = e / |e|.
                      std::vector<double> du(bsz * d, 0.0);
                      const double* g = out->grad.data();
                      for (std::size_t i = 0; i < bsz; ++i) {
                          for (std::size_t j = 0; j < bsz; ++j) {
                              const double gij = g[i * bsz + j] + g[j * bsz + i];
                              if (gij == 0.0) continue;
                              const double* uj = unit->data() + j * d;
                              double* dui = du.data() + i * d;
                              for (std::size_t k = 0; k < d; ++k) dui[k] += gij * uj[k];
                          }
                      }
                      for (std::size_t i = 0; i < bsz; ++i) {
                          const double* ui = unit->data() + i * d;
                          const double* dui = du.data() + i * d;
                          double radial = 0.0;
                          for (std::size_t k = 0; k < d; ++k) radial += ui[k] * dui[k];
                          double* ge = embeddings->grad.data() + i * d;
                          const double inv_r = 1.0 / (*norms)[i];
                          for (std::size_t k = 0; k < d; ++k)
                              ge[k] += inv_r * (dui[k] - radial * ui[k]);
                      }
                  });
}

TensorPtr Graph::cross_entropy(const TensorPtr& logits, const std::vector<std::size_t>& labels) {
    if (logits->rank() != 2) {
        throw std::invalid_argument("cross_entropy: rank-2 logits required, got " +
                                    shape_str(logits->shape));
    }
    const std::size_t bsz = logits->shape[0], n_classes = logits->shape[1];
    if (labels.size() != bsz) {
        throw std::invalid_argument("cross_entropy: batch " + std::to_string(bsz) + " vs " +
                                    std::to_string(labels.size()) + " labels");
    }
    auto lse = std::make_shared<std::vector<double>>(bsz);
    double total = 0.0;
    for (std::size_t i = 0; i < bsz; ++i) {
        if (labels[i] >= n_classes) {
            throw std::invalid_argument("cross_entropy: label " + std::to_string(labels[i]) +
                                        " out of range [0, " + std::to_string(n_classes) + ")");
        }
        const double* x = logits->data.data() + i * n_classes;
        double m = x[0];
        for (std::size_t j = 1; j < n_classes; ++j) m = std::max(m, x[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < n_classes; ++j) z += std::exp(x[j] - m);
        (*lse)[i] = m + std::log(z);
        total += (*lse)[i] - x[labels[i]];
    }
    auto out = zeros({1});
    out->data[0] = total;
    auto lab = std::make_shared<std::vector<std::size_t>>(labels);
    return record("cross_entropy", {logits}, out, [logits, out, lse, lab, bsz, n_classes]() {
        if (!logits->requires_grad) return;
        const double g = out->grad[0];
        if (g == 0.0) return;
        for (std::size_t i = 0; i < bsz; ++i) {
            const double* x = logits->data.data() + i * n_classes;
            double* gx = logits->grad.data() + i * n_classes;
            for (std::size_t j = 0; j < n_classes; ++j) {
                const double p = std::exp(x[j] - (*lse)[i]);
                gx[j] += g * (p - (j == (*lab)[i] ? 1.0 : 0.0));
            }
        }
    });
}

TensorPtr Graph::dropout(const TensorPtr& x, double rate, std::uint64_t draw_seed) {
    if (rate < 0.0 || rate >= 1.0) {
        throw std::invalid_argument("dropout: rate must be in [0, 1), got " + std::to_string(rate));
    }
    if (rate == 0.0) return x;
    Rng rng(draw_seed);
    auto keep = std::make_shared<std::vector<double>>(x->numel());
    const double inv_keep = 1.0 / (1.0 - rate);
    auto out = zeros(x->shape);
    for (std::size_t i = 0; i < x->numel(); ++i) {
        (*keep)[i] = rng.uniform() < rate ? 0.0 : inv_keep;
        out->data[i] = x->data[i] * (*keep)[i];
    }
    return record("dropout", {x}, out, [x, out, keep]() {
        if (!x->requires_grad) return;
        for (std::size_t i = 0; i < x->numel(); ++i) x->grad[i] += out->grad[i] * (*keep)[i];
    });
}

// ---------------------------------------------------------------------------
// backward + gradient checking
// ---------------------------------------------------------------------------

void Graph::backward(const TensorPtr& loss) {
    if (loss->numel() != 1) {
        throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss->shape));
    }
    if (nodes_.empty()) throw std::invalid_argument("backward: graph is empty");
    bool produced_here = false;
    for (const auto& n : nodes_) produced_here = produced_here || n.output == loss;
    if (!produced_here) {
        throw std::invalid_argument("backward: loss tensor was not produced by this graph");
    }
    if (!loss->requires_grad) {
        throw std::invalid_argument("backward: loss does not depend on any requires_grad tensor");
    }
    loss->grad[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (it->output->requires_grad) it->backprop();
    }
}

double grad_check(const TensorProgram& program, const std::vector<Tensor>& inputs,
                  const GradCheckOptions& opts) {
    if (!(opts.step >= 1e-6 && opts.step <= 1e-4)) {
        throw std::invalid_argument("grad_check: step must be in [1e-6, 1e-4]");
    }

    // analytic pass
    std::vector<TensorPtr> leaves;
    leaves.reserve(inputs.size());
    for (const auto& in : inputs) leaves.push_back(tensor(in.shape, in.data, true));
    std::vector<std::vector<double>> analytic;
    {
        Graph g;
        auto loss = program(g, leaves);
        if (loss->numel() != 1) throw std::invalid_argument("grad_check: program must be scalar");
        g.backward(loss);
        for (const auto& l : leaves) analytic.push_back(l->grad);
    }

    // numeric pass; leaves carry requires_grad=false so forward is cheap
    std::vector<TensorPtr> probe;
    probe.reserve(inputs.size());
    for (const auto& in : inputs) probe.push_back(tensor(in.shape, in.data, false));
    auto eval = [&]() {
        Graph g;
        return program(g, probe)->data[0];
    };

    Rng coord_rng(opts.coord_seed);
    double worst = 0.0;
    const double h = opts.step;
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        std::vector<std::size_t> coords;
        const std::size_t n = inputs[t].data.size();
        if (opts.max_coords_per_tensor == 0 || opts.max_coords_per_tensor >= n) {
            coords.resize(n);
            for (std::size_t i = 0; i < n; ++i) coords[i] = i;
        } else {
            coords = coord_rng.sample_without_replacement(n, opts.max_coords_per_tensor);
        }
        for (auto i : coords) {
            const double saved = probe[t]->data[i];
            probe[t]->data[i] = saved + h;
            const double fp = eval();
            probe[t]->data[i] = saved - h;
            const double fm = eval();
            probe[t]->data[i] = saved;
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[t][i];
            const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
            worst = std::max(worst, err);
        }
    }
    return worst;
}

}  // namespace fewshot::ad
