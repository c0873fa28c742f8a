#include "csdm/tape.hpp"

#include <cfloat>
#include <cmath>

#include "csdm/kernels.hpp"

namespace csdm {

namespace {
const kernels::Ops& K() { return kernels::active(); }

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw DimensionError(std::string(op) + ": shape mismatch " +
                             shape_str(a.shape) + " vs " + shape_str(b.shape));
}
}  // namespace

Var Tape::push(Tensor val, bool needs_grad) {
    Node n;
    n.grad = Tensor(val.shape);
    n.val = std::move(val);
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int32_t>(nodes_.size() - 1)};
}

Var Tape::constant(Tensor t) { return push(std::move(t), false); }

Var Tape::gather_rows(Parameter& table, std::span<const int32_t> idx,
                      bool train) {
    const std::size_t d = table.value.cols();
    const std::size_t vocab = table.value.rows();
    Tensor out({idx.size(), d});
    for (std::size_t r = 0; r < idx.size(); ++r) {
        const int32_t i = idx[r];
        if (i < 0 || static_cast<std::size_t>(i) >= vocab)
            throw ValidationError("gather: index " + std::to_string(i) +
                                  " out of vocabulary " + table.name + " (" +
                                  std::to_string(vocab) + ")");
        std::copy_n(table.value.row(i), d, out.row(r));
    }
    Var y = push(std::move(out), train);
    if (train) {
        std::vector<int32_t> ix(idx.begin(), idx.end());
        Parameter* t = &table;
        node(y).back = [y, ix = std::move(ix), t](Tape& tp) {
            const Tensor& g = tp.node(y).grad;
            const std::size_t d = t->value.cols();
            for (std::size_t r = 0; r < ix.size(); ++r)
                K().axpy(1.0, g.row(r), t->grad.row(ix[r]), d);
        };
    }
    return y;
}

Var Tape::gather_mean(Parameter& table,
                      const std::vector<std::vector<int32_t>>& idx,
                      bool train) {
    const std::size_t d = table.value.cols();
    Tensor out({idx.size(), d});
    for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r].empty())
            throw ValidationError("gather_mean: empty index list in " +
                                  table.name);
        for (int32_t i : idx[r]) {
            if (i < 0 || static_cast<std::size_t>(i) >= table.value.rows())
                throw ValidationError("gather_mean: index out of vocabulary " +
                                      table.name);
            K().axpy(1.0 / idx[r].size(), table.value.row(i), out.row(r), d);
        }
    }
    Var y = push(std::move(out), train);
    if (train) {
        Parameter* t = &table;
        node(y).back = [y, idx, t](Tape& tp) {
            const Tensor& g = tp.node(y).grad;
            const std::size_t d = t->value.cols();
            for (std::size_t r = 0; r < idx.size(); ++r)
                for (int32_t i : idx[r])
                    K().axpy(1.0 / idx[r].size(), g.row(r), t->grad.row(i), d);
        };
    }
    return y;
}

Var Tape::affine(Var x, Parameter& w, Parameter& b, bool train) {
    const Tensor& xv = val(x);
    const std::size_t n = xv.rows(), in = xv.cols();
    const std::size_t out = w.value.cols();
    if (w.value.rows() != in)
        throw DimensionError("affine: input " + shape_str(xv.shape) +
                             " does not match weight " +
                             shape_str(w.value.shape));
    if (b.value.numel() != out)
        throw DimensionError("affine: bias " + shape_str(b.value.shape) +
                             " does not match weight " +
                             shape_str(w.value.shape));
    Tensor yv({n, out});
    for (std::size_t i = 0; i < n; ++i)
        std::copy_n(b.value.v.data(), out, yv.row(i));
    K().matmul_nn(xv.v.data(), w.value.v.data(), yv.v.data(), n, in, out);

    const bool xg = node(x).needs_grad;
    Var y = push(std::move(yv), xg || train);
    if (node(y).needs_grad) {
        Parameter* wp = &w;
        Parameter* bp = &b;
        node(y).back = [y, x, wp, bp, xg, train, n, in, out](Tape& tp) {
            const Tensor& gy = tp.node(y).grad;
            if (xg)
                K().matmul_nt(gy.v.data(), wp->value.v.data(),
                              tp.node(x).grad.v.data(), n, out, in);
            if (train) {
                K().matmul_tn(tp.node(x).val.v.data(), gy.v.data(),
                              wp->grad.v.data(), in, n, out);
                for (std::size_t i = 0; i < n; ++i)
                    K().axpy(1.0, gy.row(i), bp->grad.v.data(), out);
            }
        };
    }
    return y;
}

Var Tape::linear(Var x, Parameter& w, bool train) {
    const Tensor& xv = val(x);
    const std::size_t n = xv.rows(), in = xv.cols();
    const std::size_t out = w.value.cols();
    if (w.value.rows() != in)
        throw DimensionError("linear: input " + shape_str(xv.shape) +
                             " does not match weight " +
                             shape_str(w.value.shape));
    Tensor yv({n, out});
    K().matmul_nn(xv.v.data(), w.value.v.data(), yv.v.data(), n, in, out);
    const bool xg = node(x).needs_grad;
    Var y = push(std::move(yv), xg || train);
    if (node(y).needs_grad) {
        Parameter* wp = &w;
        node(y).back = [y, x, wp, xg, train, n, in, out](Tape& tp) {
            const Tensor& gy = tp.node(y).grad;
            if (xg)
                K().matmul_nt(gy.v.data(), wp->value.v.data(),
                              tp.node(x).grad.v.data(), n, out, in);
            if (train)
                K().matmul_tn(tp.node(x).val.v.data(), gy.v.data(),
                              wp->grad.v.data(), in, n, out);
        };
    }
    return y;
}

Var Tape::add_rowvec(Var x, Parameter& b, bool train) {
    const Tensor& xv = val(x);
    const std::size_t n = xv.rows(), m = xv.cols();
    if (b.value.numel() != m)
        throw DimensionError("add_rowvec: bias size mismatch");
    Tensor yv = xv;
    for (std::size_t i = 0; i < n; ++i)
        K().axpy(1.0, b.value.v.data(), yv.row(i), m);
    const bool xg = node(x).needs_grad;
    Var y = push(std::move(yv), xg || train);
    if (node(y).needs_grad) {
        Parameter* bp = &b;
        node(y).back = [y, x, bp, xg, train, n, m](Tape& tp) {
            const Tensor& gy = tp.node(y).grad;
            if (xg) K().axpy(1.0, gy.v.data(), tp.node(x).grad.v.data(), n * m);
            if (train)
                for (std::size_t i = 0; i < n; ++i)
                    K().axpy(1.0, gy.row(i), bp->grad.v.data(), m);
        };
    }
    return y;
}

Var Tape::add(Var a, Var b) {
    check_same_shape(val(a), val(b), "add");
    Tensor yv = val(a);
    K().axpy(1.0, val(b).v.data(), yv.v.data(), yv.numel());
    const bool ag = node(a).needs_grad, bg = node(b).needs_grad;
    Var y = push(std::move(yv), ag || bg);
    if (node(y).needs_grad)
        node(y).back = [y, a, b, ag, bg](Tape& tp) {
            const Tensor& g = tp.node(y).grad;
            if (ag) K().axpy(1.0, g.v.data(), tp.node(a).grad.v.data(), g.numel());
            if (bg) K().axpy(1.0, g.v.data(), tp.node(b).grad.v.data(), g.numel());
        };
    return y;
}

Var Tape::sub(Var a, Var b) {
    check_same_shape(val(a), val(b), "sub");
    Tensor yv = val(a);
    K().axpy(-1.0, val(b).v.data(), yv.v.data(), yv.numel());
    const bool ag = node(a).needs_grad, bg = node(b).needs_grad;
    Var y = push(std::move(yv), ag || bg);
    if (node(y).needs_grad)
        node(y).back = [y, a, b, ag, bg](Tape& tp) {
            const Tensor& g = tp.node(y).grad;
            if (ag) K().axpy(1.0, g.v.data(), tp.node(a).grad.v.data(), g.numel());
            if (bg) K().axpy(-1.0, g.v.data(), tp.node(b).grad.v.data(), g.numel());
        };
    return y;
}

Var Tape::mul(Var a, Var b) {
    check_same_shape(val(a), val(b), "mul");
    Tensor yv = val(a);
    for (std::size_t i = 0; i < yv.numel(); ++i) yv.v[i] *= val(b).v[i];
    const bool ag = node(a).needs_grad, bg = node(b).needs_grad;
    Var y = push(std::move(yv), ag || bg);
    if (node(y).needs_grad)
        node(y).back = [y, a, b, ag, bg](Tape& tp) {
            const Tensor& g = tp.node(y).grad;
            for (std::size_t i = 0; i < g.numel(); ++i) {
                if (ag) tp.node(a).grad.v[i] += g.v[i] * tp.node(b).val.v[i];
                if (bg) tp.node(b).grad.v[i] += g.v[i] * tp.node(a).val.v[i];
            }
        };
    return y;
}

Var Tape::scale(Var x, double a) {
    Tensor yv = val(x);
    K().scale(a, yv.v.data(), yv.numel());
    Var y = push(std::move(yv), node(x).needs_grad);
    if (node(y).needs_grad)
        node(y).back = [y, x, a](Tape& tp) {
            const Tensor& g = tp.node(y).grad;
            K().axpy(a, g.v.data(), tp.node(x).grad.v.data(), g.numel());
        };
    return y;
}

Var Tape::relu(Var x) {
    Tensor yv = val(x);
    for (auto& v : yv.v) v = v > 0.0 ? v : 0.0;
    Var y = push(std::move(yv), node(x).needs_grad);
    if (node(y).needs_grad)
        node(y).back = [y, x](Tape& tp) {
            const Tensor& g = tp.node(y).grad;
            const Tensor& xv = tp.node(x).val;
            Tensor& gx = tp.node(x).grad;
            for (std::size_t i = 0; i < g.numel(); ++i)
                if (xv.v[i] > 0.0) gx.v[i] += g.v[i];
        };
    return y;
}

Var Tape::sigmoid(Var x) {
    Tensor yv = val(x);
    for (auto& v : yv.v) v = sigmoid_scalar(v);
    Var y = push(std::move(yv), node(x).needs_grad);
    if (node(y).needs_grad)
        node(y).back = [y, x](Tape& tp) {
            const Tensor& g = tp.node(y).grad;
            const Tensor& s = tp.node(y).val;
            Tensor& gx = tp.node(x).grad;
            for (std::size_t i = 0; i < g.numel(); ++i)
                gx.v[i] += g.v[i] * s.v[i] * (1.0 - s.v[i]);
        };
    return y;
}

Var Tape::square(Var x) {
    Tensor yv = val(x);
    for (auto& v : yv.v) v *= v;
    Var y = push(std::move(yv), node(x).needs_grad);
    if (node(y).needs_grad)
        node(y).back = [y, x](Tape& tp) {
            const Tensor& g = tp.node(y).grad;
            const Tensor& xv = tp.node(x).val;
            Tensor& gx = tp.node(x).grad;
            for (std::size_t i = 0; i < g.numel(); ++i)
                gx.v[i] += 2.0 * g.v[i] * xv.v[i];
        };
    return y;
}

Var Tape::concat_cols(const std::vector<Var>& xs) {
    if (xs.empty()) throw DimensionError("concat_cols: no inputs");
    const std::size_t n = val(xs[0]).rows();
    std::size_t total = 0;
    bool any_grad = false;
    for (Var x : xs) {
        if (val(x).rows() != n)
            throw DimensionError("concat_cols: row count mismatch");
        total += val(x).cols();
        any_grad = any_grad || node(x).needs_grad;
    }
    Tensor yv({n, total});
    std::size_t off = 0;
    for (Var x : xs) {
        const Tensor& xv = val(x);
        for (std::size_t i = 0; i < n; ++i)
            std::copy_n(xv.row(i), xv.cols(), yv.row(i) + off);
        off += xv.cols();
    }
    Var y = push(std::move(yv), any_grad);
    if (any_grad)
        node(y).back = [y, xs, n](Tape& tp) {
            const Tensor& g = tp.node(y).grad;
            std::size_t off = 0;
            for (Var x : xs) {
                const std::size_t m = tp.node(x).val.cols();
                if (tp.node(x).needs_grad) {
                    Tensor& gx = tp.node(x).grad;
                    for (std::size_t i = 0; i < n; ++i)
                        K().axpy(1.0, g.row(i) + off, gx.row(i), m);
                }
                off += m;
            }
        };
    return y;
}

Var Tape::row_sum(Var x) {
    const Tensor& xv = val(x);
    const std::size_t n = xv.rows(), m = xv.cols();
    Tensor yv({n, 1});
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < m; ++j) s += xv.at(i, j);
        yv.at(i, 0) = s;
    }
    Var y = push(std::move(yv), node(x).needs_grad);
    if (node(y).needs_grad)
        node(y).back = [y, x, n, m](Tape& tp) {
            const Tensor& g = tp.node(y).grad;
            Tensor& gx = tp.node(x).grad;
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j)
                    gx.at(i, j) += g.at(i, 0);
        };
    return y;
}

Var Tape::sum_cols(const std::vector<Var>& xs) {
    if (xs.empty()) throw DimensionError("sum_cols: no inputs");
    Var acc = xs[0];
    for (std::size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
    return acc;
}

Var Tape::row_scale(Var x, const std::vector<double>& coef) {
    const Tensor& xv = val(x);
    const std::size_t n = xv.rows(), m = xv.cols();
    if (coef.size() != n)
        throw DimensionError("row_scale: coefficient count mismatch");
    Tensor yv = xv;
    for (std::size_t i = 0; i < n; ++i) K().scale(coef[i], yv.row(i), m);
    Var y = push(std::move(yv), node(x).needs_grad);
    if (node(y).needs_grad)
        node(y).back = [y, x, coef, n, m](Tape& tp) {
            const Tensor& g = tp.node(y).grad;
            Tensor& gx = tp.node(x).grad;
            for (std::size_t i = 0; i < n; ++i)
                K().axpy(coef[i], g.row(i), gx.row(i), m);
        };
    return y;
}

Var Tape::mul_bcast(Var x, Var s) {
    const Tensor& xv = val(x);
    const Tensor& sv = val(s);
    const std::size_t n = xv.rows(), m = xv.cols();
    if (sv.rows() != n || sv.cols() != 1)
        throw DimensionError("mul_bcast: scale must be [n,1]");
    Tensor yv = xv;
    for (std::size_t i = 0; i < n; ++i) K().scale(sv.at(i, 0), yv.row(i), m);
    const bool xg = node(x).needs_grad, sg = node(s).needs_grad;
    Var y = push(std::move(yv), xg || sg);
    if (node(y).needs_grad)
        node(y).back = [y, x, s, xg, sg, n, m](Tape& tp) {
            const Tensor& g = tp.node(y).grad;
            const Tensor& xv = tp.node(x).val;
            const Tensor& sv = tp.node(s).val;
            for (std::size_t i = 0; i < n; ++i) {
                if (xg)
                    K().axpy(sv.at(i, 0), g.row(i), tp.node(x).grad.row(i), m);
                if (sg)
                    tp.node(s).grad.at(i, 0) += K().dot(g.row(i), xv.row(i), m);
            }
        };
    return y;
}

Var Tape::dropout(Var x, double p, bool training, Rng& rng) {
    if (p < 0.0 || p >= 1.0)
        throw ValidationError("dropout: p must be in [0,1), got " +
                              std::to_string(p));
    if (!training || p == 0.0) return x;
    const Tensor& xv = val(x);
    std::vector<double> mask(xv.numel());
    const double keep = 1.0 / (1.0 - p);
    for (auto& mi : mask) mi = rng.bernoulli(p) ? 0.0 : keep;
    Tensor yv = xv;
    for (std::size_t i = 0; i < yv.numel(); ++i) yv.v[i] *= mask[i];
    Var y = push(std::move(yv), node(x).needs_grad);
    if (node(y).needs_grad)
        node(y).back = [y, x, mask = std::move(mask)](Tape& tp) {
            const Tensor& g = tp.node(y).grad;
            Tensor& gx = tp.node(x).grad;
            for (std::size_t i = 0; i < g.numel(); ++i)
                gx.v[i] += g.v[i] * mask[i];
        };
    return y;
}

Var Tape::bce_with_logits(Var logits, std::span<const double> y) {
    const Tensor& z = val(logits);
    const std::size_t n = z.numel();
    if (y.size() != n)
        throw DimensionError("bce_with_logits: label count mismatch");
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (y[i] != 0.0 && y[i] != 1.0)
            throw ValidationError("bce: label must be 0 or 1");
        const double zi = z.v[i];
        loss += std::max(zi, 0.0) - zi * y[i] + std::log1p(std::exp(-std::abs(zi)));
    }
    Tensor lv({1});
    lv.v[0] = loss / static_cast<double>(n);
    Var out = push(std::move(lv), node(logits).needs_grad);
    if (node(out).needs_grad) {
        std::vector<double> yy(y.begin(), y.end());
        node(out).back = [out, logits, yy = std::move(yy), n](Tape& tp) {
            const double g = tp.node(out).grad.v[0] / static_cast<double>(n);
            const Tensor& z = tp.node(logits).val;
            Tensor& gx = tp.node(logits).grad;
            for (std::size_t i = 0; i < n; ++i)
                gx.v[i] += g * (sigmoid_scalar(z.v[i]) - yy[i]);
        };
    }
    return out;
}

Var Tape::mse_rows(Var pred, const Tensor& target) {
    const Tensor& pv = val(pred);
    check_same_shape(pv, target, "mse_rows");
    const std::size_t n = pv.rows();
    double loss = 0.0;
    for (std::size_t i = 0; i < pv.numel(); ++i) {
        const double d = pv.v[i] - target.v[i];
        loss += d * d;
    }
    Tensor lv({1});
    lv.v[0] = loss / static_cast<double>(n);
    Var out = push(std::move(lv), node(pred).needs_grad);
    if (node(out).needs_grad) {
        Tensor tgt = target;
        node(out).back = [out, pred, tgt = std::move(tgt), n](Tape& tp) {
            const double g = 2.0 * tp.node(out).grad.v[0] / static_cast<double>(n);
            const Tensor& pv = tp.node(pred).val;
            Tensor& gx = tp.node(pred).grad;
            for (std::size_t i = 0; i < pv.numel(); ++i)
                gx.v[i] += g * (pv.v[i] - tgt.v[i]);
        };
    }
    return out;
}

void Tape::backward(Var root) {
    if (node(root).val.numel() != 1)
        throw DimensionError("backward: root must be scalar");
    node(root).grad.v[0] = 1.0;
    for (int32_t i = root.id; i >= 0; --i)
        if (nodes_[i].needs_grad && nodes_[i].back) nodes_[i].back(*this);
}

// ---- standalone ops ----

double sigmoid_scalar(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    const double s = e / (1.0 + e);
    // exp underflows to 0 below ~-745; keep the result strictly positive.
    return s > 0.0 ? s : DBL_TRUE_MIN;
}

Tensor sigmoid(const Tensor& x) {
    Tensor y = x;
    for (auto& v : y.v) v = sigmoid_scalar(v);
    return y;
}

double bce_loss(double p_hat, int y) {
    if (y != 0 && y != 1) throw ValidationError("bce_loss: label must be 0 or 1");
    constexpr double eps = 1e-7;
    const double p = std::min(std::max(p_hat, eps), 1.0 - eps);
    return -(y * std::log(p) + (1 - y) * std::log(1.0 - p));
}

Tensor dropout(const Tensor& x, double p, bool training, Rng& rng) {
    if (p < 0.0 || p >= 1.0)
        throw ValidationError("dropout: p must be in [0,1), got " +
                              std::to_string(p));
    if (!training || p == 0.0) return x;
    Tensor y = x;
    const double keep = 1.0 / (1.0 - p);
    for (auto& v : y.v) v = rng.bernoulli(p) ? 0.0 : v * keep;
    return y;
}

Tensor time_encoding(std::span<const int32_t> t, std::size_t dim) {
    if (dim % 2 != 0) throw ValidationError("time_encoding: dim must be even");
    Tensor enc({t.size(), dim});
    for (std::size_t r = 0; r < t.size(); ++r) {
        for (std::size_t k = 0; k < dim / 2; ++k) {
            const double freq =
                std::pow(10000.0, -2.0 * static_cast<double>(k) /
                                      static_cast<double>(dim));
            const double a = static_cast<double>(t[r]) * freq;
            enc.at(r, 2 * k) = std::sin(a);
            enc.at(r, 2 * k + 1) = std::cos(a);
        }
    }
    return enc;
}

void adam_step(std::span<Parameter* const> params, const AdamConfig& cfg) {
    for (Parameter* p : params) {
        if (!p->grad.all_finite())
            throw TrainingError("adam_step: non-finite gradient in parameter '" +
                                p->name + "'");
        p->step_count += 1;
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p->step_count));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p->step_count));
        kernels::active().adam(p->value.v.data(), p->grad.v.data(),
                               p->m.v.data(), p->v.v.data(), p->numel(),
                               cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, bc1, bc2);
        p->zero_grad();
    }
}

}  // namespace csdm
