#include "stormcast/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>

#include "stormcast/rng.hpp"

namespace stormcast {

Tensor::Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (numel() != static_cast<std::int64_t>(data.size()))
        throw ShapeError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str());
}

Tensor Tensor::zeros(std::vector<int> shape) {
    Tensor t;
    t.shape = std::move(shape);
    t.data.assign(static_cast<std::size_t>(t.numel()), 0.0);
    return t;
}

Tensor Tensor::full(std::vector<int> shape, double value) {
    Tensor t = zeros(std::move(shape));
    std::fill(t.data.begin(), t.data.end(), value);
    return t;
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

std::int64_t Tensor::numel() const {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

int Tensor::dim(int i) const {
    int nd = ndim();
    if (i < 0) i += nd;
    if (i < 0 || i >= nd) throw ShapeError("dim index out of range for " + shape_str());
    return shape[static_cast<std::size_t>(i)];
}

std::string Tensor::shape_str() const {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + ")";
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str());
    return data[0];
}

const Tensor& Var::value() const { return tape_->node(id_).value; }
const Tensor& Var::grad() const { return tape_->node(id_).grad; }
bool Var::requires_grad() const { return tape_->node(id_).requires_grad; }

Var Tape::leaf(Tensor value, bool requires_grad) {
    return emplace(std::move(value), requires_grad, nullptr);
}

Var Tape::emplace(Tensor value, bool requires_grad,
                  std::function<void(Tape&, const Tensor&)> back) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backward = requires_grad ? std::move(back) : nullptr;
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::accumulate(int id, const double* g, std::int64_t n) {
    Node& target = node(id);
    if (!target.requires_grad) return;
    if (target.grad.data.empty()) target.grad = Tensor::zeros(target.value.shape);
    if (static_cast<std::int64_t>(target.grad.data.size()) != n)
        throw ShapeError("gradient size mismatch while accumulating");
    double* dst = target.grad.data.data();
    for (std::int64_t i = 0; i < n; ++i) dst[i] += g[i];
}

void Tape::accumulate(int id, const Tensor& g) {
    accumulate(id, g.data.data(), static_cast<std::int64_t>(g.data.size()));
}

void Tape::backward(Var loss) {
    if (loss.tape() != this) throw std::invalid_argument("loss var belongs to another tape");
    Node& ln = node(loss.id());
    if (ln.value.numel() != 1) throw ShapeError("backward() needs a scalar loss");
    if (!ln.requires_grad) throw std::invalid_argument("loss does not depend on any parameter");
    ln.grad = Tensor::full(ln.value.shape, 1.0);

    for (int id = loss.id(); id >= 0; --id) {
        Node& n = node(id);
        if (n.backward && !n.grad.data.empty()) n.backward(*this, n.grad);
    }
}

void Tape::clear() { nodes_.clear(); }

namespace {

// ---- raw accumulate kernels (C += ...) ----

void mm_nn_acc(double* C, const double* A, const double* B, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* a_row = A + static_cast<std::size_t>(i) * k;
        double* c_row = C + static_cast<std::size_t>(i) * n;
        for (int l = 0; l < k; ++l) {
            double a = a_row[l];
            if (a == 0.0) continue;
            const double* b_row = B + static_cast<std::size_t>(l) * n;
            for (int j = 0; j < n; ++j) c_row[j] += a * b_row[j];
        }
    }
}

// C (m,n) += A (m,k) * B^T, B given as (n,k)
void mm_nt_acc(double* C, const double* A, const double* B, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* a_row = A + static_cast<std::size_t>(i) * k;
        double* c_row = C + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* b_row = B + static_cast<std::size_t>(j) * k;
            double s = 0.0;
            for (int l = 0; l < k; ++l) s += a_row[l] * b_row[l];
            c_row[j] += s;
        }
    }
}

// C (m,n) += A^T * B, A given as (k,m), B as (k,n)
void mm_tn_acc(double* C, const double* A, const double* B, int m, int k, int n) {
    for (int l = 0; l < k; ++l) {
        const double* a_row = A + static_cast<std::size_t>(l) * m;
        const double* b_row = B + static_cast<std::size_t>(l) * n;
        for (int i = 0; i < m; ++i) {
            double a = a_row[i];
            if (a == 0.0) continue;
            double* c_row = C + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) c_row[j] += a * b_row[j];
        }
    }
}

Tape* same_tape(Var a, Var b, const char* op) {
    if (a.tape() != b.tape() || a.tape() == nullptr)
        throw std::invalid_argument(std::string(op) + ": operands on different tapes");
    return a.tape();
}

[[noreturn]] void shape_fail(const char* op, const Tensor& a, const Tensor& b) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape_str() + " and " +
                     b.shape_str());
}

bool needs_grad(Var v) { return v.requires_grad(); }

}  // namespace

Var matmul(Var a, Var b) {
    Tape* tape = same_tape(a, b, "matmul");
    const Tensor& A = a.value();
    const Tensor& B = b.value();

    if (A.ndim() == 2 && B.ndim() == 2) {
        int m = A.dim(0), k = A.dim(1), k2 = B.dim(0), n = B.dim(1);
        if (k != k2) shape_fail("matmul", A, B);
        Tensor out = Tensor::zeros({m, n});
        mm_nn_acc(out.data.data(), A.data.data(), B.data.data(), m, k, n);
        int aid = a.id(), bid = b.id();
        return tape->emplace(std::move(out), needs_grad(a) || needs_grad(b),
                             [aid, bid, m, k, n](Tape& t, const Tensor& g) {
                                 const Tensor& av = t.node(aid).value;
                                 const Tensor& bv = t.node(bid).value;
                                 if (t.node(aid).requires_grad) {
                                     Tensor da = Tensor::zeros(av.shape);
                                     mm_nt_acc(da.data.data(), g.data.data(), bv.data.data(), m, n,
                                               k);
                                     t.accumulate(aid, da);
                                 }
                                 if (t.node(bid).requires_grad) {
                                     Tensor db = Tensor::zeros(bv.shape);
                                     mm_tn_acc(db.data.data(), av.data.data(), g.data.data(), k, m,
                                               n);
                                     t.accumulate(bid, db);
                                 }
                             });
    }

    if (A.ndim() == 3 && B.ndim() == 3) {
        int nb = A.dim(0), m = A.dim(1), k = A.dim(2);
        if (B.dim(0) != nb || B.dim(1) != k) shape_fail("matmul", A, B);
        int n = B.dim(2);
        Tensor out = Tensor::zeros({nb, m, n});
        for (int s = 0; s < nb; ++s) {
            mm_nn_acc(out.data.data() + static_cast<std::size_t>(s) * m * n,
                      A.data.data() + static_cast<std::size_t>(s) * m * k,
                      B.data.data() + static_cast<std::size_t>(s) * k * n, m, k, n);
        }
        int aid = a.id(), bid = b.id();
        return tape->emplace(
            std::move(out), needs_grad(a) || needs_grad(b),
            [aid, bid, nb, m, k, n](Tape& t, const Tensor& g) {
                const Tensor& av = t.node(aid).value;
                const Tensor& bv = t.node(bid).value;
                if (t.node(aid).requires_grad) {
                    Tensor da = Tensor::zeros(av.shape);
                    for (int s = 0; s < nb; ++s)
                        mm_nt_acc(da.data.data() + static_cast<std::size_t>(s) * m * k,
                                  g.data.data() + static_cast<std::size_t>(s) * m * n,
                                  bv.data.data() + static_cast<std::size_t>(s) * k * n, m, n, k);
                    t.accumulate(aid, da);
                }
                if (t.node(bid).requires_grad) {
                    Tensor db = Tensor::zeros(bv.shape);
                    for (int s = 0; s < nb; ++s)
                        mm_tn_acc(db.data.data() + static_cast<std::size_t>(s) * k * n,
                                  av.data.data() + static_cast<std::size_t>(s) * m * k,
                                  g.data.data() + static_cast<std::size_t>(s) * m * n, k, m, n);
                    t.accumulate(bid, db);
                }
            });
    }
    shape_fail("matmul", A, B);
}

Var add(Var a, Var b) {
    Tape* tape = same_tape(a, b, "add");
    const Tensor& A = a.value();
    const Tensor& B = b.value();

    bool suffix = B.ndim() < A.ndim() || (B.ndim() == A.ndim() && !A.same_shape(B));
    if (suffix) {
        if (B.ndim() > A.ndim() ||
            !std::equal(B.shape.begin(), B.shape.end(), A.shape.end() - B.ndim()))
            shape_fail("add", A, B);
    }
    std::int64_t bn = B.numel();
    std::int64_t an = A.numel();
    Tensor out = A;
    for (std::int64_t i = 0; i < an; ++i) out.data[static_cast<std::size_t>(i)] +=
        B.data[static_cast<std::size_t>(i % bn)];

    int aid = a.id(), bid = b.id();
    return tape->emplace(std::move(out), needs_grad(a) || needs_grad(b),
                         [aid, bid, an, bn](Tape& t, const Tensor& g) {
                             t.accumulate(aid, g);
                             if (t.node(bid).requires_grad) {
                                 Tensor db = Tensor::zeros(t.node(bid).value.shape);
                                 for (std::int64_t i = 0; i < an; ++i)
                                     db.data[static_cast<std::size_t>(i % bn)] +=
                                         g.data[static_cast<std::size_t>(i)];
                                 t.accumulate(bid, db);
                             }
                         });
}

Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

Var mul(Var a, Var b) {
    Tape* tape = same_tape(a, b, "mul");
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (!A.same_shape(B)) shape_fail("mul", A, B);

    Tensor out = A;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= B.data[i];
    int aid = a.id(), bid = b.id();
    return tape->emplace(std::move(out), needs_grad(a) || needs_grad(b),
                         [aid, bid](Tape& t, const Tensor& g) {
                             const Tensor& av = t.node(aid).value;
                             const Tensor& bv = t.node(bid).value;
                             if (t.node(aid).requires_grad) {
                                 Tensor da = g;
                                 for (std::size_t i = 0; i < da.data.size(); ++i)
                                     da.data[i] *= bv.data[i];
                                 t.accumulate(aid, da);
                             }
                             if (t.node(bid).requires_grad) {
                                 Tensor db = g;
                                 for (std::size_t i = 0; i < db.data.size(); ++i)
                                     db.data[i] *= av.data[i];
                                 t.accumulate(bid, db);
                             }
                         });
}

Var scale(Var a, double c) {
    Tape* tape = a.tape();
    Tensor out = a.value();
    for (double& v : out.data) v *= c;
    int aid = a.id();
    return tape->emplace(std::move(out), needs_grad(a), [aid, c](Tape& t, const Tensor& g) {
        Tensor da = g;
        for (double& v : da.data) v *= c;
        t.accumulate(aid, da);
    });
}

Var relu(Var a) {
    Tape* tape = a.tape();
    Tensor out = a.value();
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    int aid = a.id();
    return tape->emplace(std::move(out), needs_grad(a), [aid](Tape& t, const Tensor& g) {
        const Tensor& av = t.node(aid).value;
        Tensor da = g;
        for (std::size_t i = 0; i < da.data.size(); ++i)
            if (av.data[i] <= 0.0) da.data[i] = 0.0;
        t.accumulate(aid, da);
    });
}

Var softmax_lastdim(Var a) {
    Tape* tape = a.tape();
    const Tensor& A = a.value();
    int d = A.dim(-1);
    std::int64_t rows = A.numel() / d;

    Tensor out = A;
    for (std::int64_t r = 0; r < rows; ++r) {
        double* row = out.data.data() + r * d;
        double mx = row[0];
        for (int j = 1; j < d; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int j = 0; j < d; ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
        for (int j = 0; j < d; ++j) row[j] /= sum;
    }
    int aid = a.id();
    auto y_shared = std::make_shared<Tensor>(out);
    return tape->emplace(std::move(out), needs_grad(a),
                         [aid, d, rows, y_shared](Tape& t, const Tensor& g) {
                             Tensor da = Tensor::zeros(y_shared->shape);
                             for (std::int64_t r = 0; r < rows; ++r) {
                                 const double* yr = y_shared->data.data() + r * d;
                                 const double* gr = g.data.data() + r * d;
                                 double* dr = da.data.data() + r * d;
                                 double dot = 0.0;
                                 for (int j = 0; j < d; ++j) dot += gr[j] * yr[j];
                                 for (int j = 0; j < d; ++j) dr[j] = yr[j] * (gr[j] - dot);
                             }
                             t.accumulate(aid, da);
                         });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
    Tape* tape = same_tape(x, gain, "layer_norm");
    same_tape(x, bias, "layer_norm");
    const Tensor& X = x.value();
    int d = X.dim(-1);
    if (gain.value().numel() != d || bias.value().numel() != d)
        throw ShapeError("layer_norm: gain/bias must have " + std::to_string(d) + " entries");
    std::int64_t rows = X.numel() / d;

    Tensor out = Tensor::zeros(X.shape);
    Tensor xhat = Tensor::zeros(X.shape);
    std::vector<double> inv_std(static_cast<std::size_t>(rows));
    const double* gptr = gain.value().data.data();
    const double* bptr = bias.value().data.data();
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* xr = X.data.data() + r * d;
        double mean = 0.0;
        for (int j = 0; j < d; ++j) mean += xr[j];
        mean /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
        var /= d;
        double inv = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<std::size_t>(r)] = inv;
        double* hr = xhat.data.data() + r * d;
        double* or_ = out.data.data() + r * d;
        for (int j = 0; j < d; ++j) {
            hr[j] = (xr[j] - mean) * inv;
            or_[j] = hr[j] * gptr[j] + bptr[j];
        }
    }

    int xid = x.id(), gid = gain.id(), bid = bias.id();
    bool req = needs_grad(x) || needs_grad(gain) || needs_grad(bias);
    auto xhat_shared = std::make_shared<Tensor>(std::move(xhat));
    auto inv_shared = std::make_shared<std::vector<double>>(std::move(inv_std));
    return tape->emplace(
        std::move(out), req,
        [xid, gid, bid, d, rows, xhat_shared, inv_shared](Tape& t, const Tensor& g) {
            const double* gain_ptr = t.node(gid).value.data.data();
            if (t.node(gid).requires_grad) {
                Tensor dgain = Tensor::zeros({d});
                for (std::int64_t r = 0; r < rows; ++r)
                    for (int j = 0; j < d; ++j)
                        dgain.data[static_cast<std::size_t>(j)] +=
                            g.data[static_cast<std::size_t>(r * d + j)] *
                            xhat_shared->data[static_cast<std::size_t>(r * d + j)];
                t.accumulate(gid, dgain);
            }
            if (t.node(bid).requires_grad) {
                Tensor dbias = Tensor::zeros({d});
                for (std::int64_t r = 0; r < rows; ++r)
                    for (int j = 0; j < d; ++j)
                        dbias.data[static_cast<std::size_t>(j)] +=
                            g.data[static_cast<std::size_t>(r * d + j)];
                t.accumulate(bid, dbias);
            }
            if (t.node(xid).requires_grad) {
                Tensor dx = Tensor::zeros(t.node(xid).value.shape);
                for (std::int64_t r = 0; r < rows; ++r) {
                    const double* gr = g.data.data() + r * d;
                    const double* hr = xhat_shared->data.data() + r * d;
                    double inv = (*inv_shared)[static_cast<std::size_t>(r)];
                    double mean_dh = 0.0, mean_dh_h = 0.0;
                    for (int j = 0; j < d; ++j) {
                        double dh = gr[j] * gain_ptr[j];
                        mean_dh += dh;
                        mean_dh_h += dh * hr[j];
                    }
                    mean_dh /= d;
                    mean_dh_h /= d;
                    double* dr = dx.data.data() + r * d;
                    for (int j = 0; j < d; ++j) {
                        double dh = gr[j] * gain_ptr[j];
                        dr[j] = inv * (dh - mean_dh - hr[j] * mean_dh_h);
                    }
                }
                t.accumulate(xid, dx);
            }
        });
}

Var concat_last(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_last: no inputs");
    Tape* tape = parts[0].tape();
    std::vector<int> lead(parts[0].value().shape.begin(), parts[0].value().shape.end() - 1);
    int total = 0;
    bool req = false;
    std::vector<int> widths, ids;
    for (const Var& p : parts) {
        same_tape(parts[0], p, "concat_last");
        std::vector<int> pl(p.value().shape.begin(), p.value().shape.end() - 1);
        if (pl != lead) shape_fail("concat_last", parts[0].value(), p.value());
        widths.push_back(p.value().dim(-1));
        ids.push_back(p.id());
        total += widths.back();
        req = req || needs_grad(p);
    }
    std::int64_t rows = 1;
    for (int d : lead) rows *= d;

    std::vector<int> out_shape = lead;
    out_shape.push_back(total);
    Tensor out = Tensor::zeros(out_shape);
    for (std::int64_t r = 0; r < rows; ++r) {
        double* dst = out.data.data() + r * total;
        for (std::size_t p = 0; p < parts.size(); ++p) {
            int w = widths[p];
            const double* src = parts[p].value().data.data() + r * w;
            std::copy(src, src + w, dst);
            dst += w;
        }
    }
    return tape->emplace(std::move(out), req,
                         [ids, widths, rows, total](Tape& t, const Tensor& g) {
                             int offset = 0;
                             for (std::size_t p = 0; p < ids.size(); ++p) {
                                 int w = widths[p];
                                 if (t.node(ids[p]).requires_grad) {
                                     Tensor dp = Tensor::zeros(t.node(ids[p]).value.shape);
                                     for (std::int64_t r = 0; r < rows; ++r)
                                         for (int j = 0; j < w; ++j)
                                             dp.data[static_cast<std::size_t>(r * w + j)] =
                                                 g.data[static_cast<std::size_t>(r * total +
                                                                                 offset + j)];
                                     t.accumulate(ids[p], dp);
                                 }
                                 offset += w;
                             }
                         });
}

Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
    Tape* tape = parts[0].tape();
    int cols = parts[0].value().dim(-1);
    int total_rows = 0;
    bool req = false;
    std::vector<int> ids, row_counts;
    for (const Var& p : parts) {
        same_tape(parts[0], p, "concat_rows");
        if (p.value().ndim() != 2 || p.value().dim(1) != cols)
            shape_fail("concat_rows", parts[0].value(), p.value());
        ids.push_back(p.id());
        row_counts.push_back(p.value().dim(0));
        total_rows += row_counts.back();
        req = req || needs_grad(p);
    }
    Tensor out = Tensor::zeros({total_rows, cols});
    double* dst = out.data.data();
    for (const Var& p : parts) {
        const auto& src = p.value().data;
        std::copy(src.begin(), src.end(), dst);
        dst += src.size();
    }
    return tape->emplace(std::move(out), req, [ids, row_counts, cols](Tape& t, const Tensor& g) {
        std::int64_t offset = 0;
        for (std::size_t p = 0; p < ids.size(); ++p) {
            std::int64_t n = static_cast<std::int64_t>(row_counts[p]) * cols;
            t.accumulate(ids[p], g.data.data() + offset, n);
            offset += n;
        }
    });
}

Var reduce_mean(Var a) {
    Tape* tape = a.tape();
    const Tensor& A = a.value();
    double inv = 1.0 / static_cast<double>(A.numel());
    double sum = std::accumulate(A.data.begin(), A.data.end(), 0.0);
    int aid = a.id();
    std::int64_t n = A.numel();
    return tape->emplace(Tensor::scalar(sum * inv), needs_grad(a),
                         [aid, inv, n](Tape& t, const Tensor& g) {
                             Tensor da = Tensor::full(t.node(aid).value.shape, g.data[0] * inv);
                             t.accumulate(aid, da);
                         });
}

Var transpose_last2(Var a) {
    Tape* tape = a.tape();
    const Tensor& A = a.value();
    if (A.ndim() < 2) throw ShapeError("transpose_last2 needs >= 2 dims, got " + A.shape_str());
    int rows = A.dim(-2), cols = A.dim(-1);
    std::int64_t batch = A.numel() / (static_cast<std::int64_t>(rows) * cols);

    std::vector<int> out_shape = A.shape;
    std::swap(out_shape[out_shape.size() - 1], out_shape[out_shape.size() - 2]);
    Tensor out = Tensor::zeros(out_shape);
    for (std::int64_t s = 0; s < batch; ++s) {
        const double* src = A.data.data() + s * rows * cols;
        double* dst = out.data.data() + s * rows * cols;
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) dst[static_cast<std::size_t>(j) * rows + i] =
                src[static_cast<std::size_t>(i) * cols + j];
    }
    int aid = a.id();
    return tape->emplace(std::move(out), needs_grad(a),
                         [aid, rows, cols, batch](Tape& t, const Tensor& g) {
                             Tensor da = Tensor::zeros(t.node(aid).value.shape);
                             for (std::int64_t s = 0; s < batch; ++s) {
                                 const double* src = g.data.data() + s * rows * cols;
                                 double* dst = da.data.data() + s * rows * cols;
                                 for (int j = 0; j < cols; ++j)
                                     for (int i = 0; i < rows; ++i)
                                         dst[static_cast<std::size_t>(i) * cols + j] =
                                             src[static_cast<std::size_t>(j) * rows + i];
                             }
                             t.accumulate(aid, da);
                         });
}

Var masked_fill(Var a, const Tensor& mask01, double fill) {
    Tape* tape = a.tape();
    const Tensor& A = a.value();
    if (!A.same_shape(mask01)) shape_fail("masked_fill", A, mask01);

    Tensor out = A;
    for (std::size_t i = 0; i < out.data.size(); ++i)
        if (mask01.data[i] != 0.0) out.data[i] = fill;
    int aid = a.id();
    auto mask_shared = std::make_shared<Tensor>(mask01);
    return tape->emplace(std::move(out), needs_grad(a),
                         [aid, mask_shared](Tape& t, const Tensor& g) {
                             Tensor da = g;
                             for (std::size_t i = 0; i < da.data.size(); ++i)
                                 if (mask_shared->data[i] != 0.0) da.data[i] = 0.0;
                             t.accumulate(aid, da);
                         });
}

Var narrow_last(Var a, int start, int len) {
    Tape* tape = a.tape();
    const Tensor& A = a.value();
    int d = A.dim(-1);
    if (start < 0 || len < 1 || start + len > d)
        throw ShapeError("narrow_last: [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") out of range for " + A.shape_str());
    std::int64_t rows = A.numel() / d;

    std::vector<int> out_shape = A.shape;
    out_shape.back() = len;
    Tensor out = Tensor::zeros(out_shape);
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* src = A.data.data() + r * d + start;
        std::copy(src, src + len, out.data.data() + r * len);
    }
    int aid = a.id();
    return tape->emplace(std::move(out), needs_grad(a),
                         [aid, start, len, d, rows](Tape& t, const Tensor& g) {
                             Tensor da = Tensor::zeros(t.node(aid).value.shape);
                             for (std::int64_t r = 0; r < rows; ++r)
                                 for (int j = 0; j < len; ++j)
                                     da.data[static_cast<std::size_t>(r * d + start + j)] =
                                         g.data[static_cast<std::size_t>(r * len + j)];
                             t.accumulate(aid, da);
                         });
}

Var take_rows(Var a, const std::vector<int>& rows) {
    Tape* tape = a.tape();
    const Tensor& A = a.value();
    if (A.ndim() != 2) throw ShapeError("take_rows needs a 2-D tensor, got " + A.shape_str());
    int m = A.dim(0), d = A.dim(1);
    Tensor out = Tensor::zeros({static_cast<int>(rows.size()), d});
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r] < 0 || rows[r] >= m)
            throw ShapeError("take_rows: row " + std::to_string(rows[r]) + " out of range");
        const double* src = A.data.data() + static_cast<std::size_t>(rows[r]) * d;
        std::copy(src, src + d, out.data.data() + r * static_cast<std::size_t>(d));
    }
    int aid = a.id();
    auto rows_copy = rows;
    return tape->emplace(std::move(out), needs_grad(a),
                         [aid, rows_copy, d](Tape& t, const Tensor& g) {
                             Tensor da = Tensor::zeros(t.node(aid).value.shape);
                             for (std::size_t r = 0; r < rows_copy.size(); ++r)
                                 for (int j = 0; j < d; ++j)
                                     da.data[static_cast<std::size_t>(rows_copy[r]) * d +
                                             static_cast<std::size_t>(j)] +=
                                         g.data[r * static_cast<std::size_t>(d) +
                                                static_cast<std::size_t>(j)];
                             t.accumulate(aid, da);
                         });
}

Var take_row(Var a, int row) {
    Var picked = take_rows(a, {row});
    return reshape(picked, {picked.value().dim(1)});
}

Var reshape(Var a, std::vector<int> shape) {
    Tape* tape = a.tape();
    Tensor out(shape, a.value().data);
    if (out.numel() != a.value().numel())
        throw ShapeError("reshape: " + a.value().shape_str() + " to incompatible " +
                         out.shape_str());
    int aid = a.id();
    return tape->emplace(std::move(out), needs_grad(a), [aid](Tape& t, const Tensor& g) {
        t.accumulate(aid, g.data.data(), static_cast<std::int64_t>(g.data.size()));
    });
}

Var linear(Var x, Var w, Var b) { return add(matmul(x, w), b); }

Var smooth_l1(Var pred, const Tensor& target, double beta) {
    if (beta <= 0.0) throw std::invalid_argument("smooth_l1: beta must be positive");
    Tape* tape = pred.tape();
    const Tensor& P = pred.value();
    if (!P.same_shape(target)) shape_fail("smooth_l1", P, target);
    if (P.ndim() != 2) throw ShapeError("smooth_l1 expects (batch, dims), got " + P.shape_str());
    int batch = P.dim(0);

    double total = 0.0;
    for (std::size_t i = 0; i < P.data.size(); ++i) {
        double d = P.data[i] - target.data[i];
        double ad = std::abs(d);
        total += ad < beta ? 0.5 * d * d / beta : ad - 0.5 * beta;
    }
    double value = total / batch;

    int pid = pred.id();
    auto target_shared = std::make_shared<Tensor>(target);
    return tape->emplace(Tensor::scalar(value), needs_grad(pred),
                         [pid, target_shared, beta, batch](Tape& t, const Tensor& g) {
                             const Tensor& pv = t.node(pid).value;
                             Tensor dp = Tensor::zeros(pv.shape);
                             double scale_g = g.data[0] / batch;
                             for (std::size_t i = 0; i < pv.data.size(); ++i) {
                                 double d = pv.data[i] - target_shared->data[i];
                                 double slope = std::abs(d) < beta ? d / beta
                                                                   : (d > 0.0 ? 1.0 : -1.0);
                                 dp.data[i] = scale_g * slope;
                             }
                             t.accumulate(pid, dp);
                         });
}

void adam_step(std::map<std::string, Tensor>& params, const std::map<std::string, Tensor>& grads,
               AdamState& state) {
    state.t += 1;
    const AdamConfig& h = state.hyper;
    double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.t));
    double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.t));

    for (auto& [name, p] : params) {
        auto git = grads.find(name);
        const Tensor* g = git == grads.end() ? nullptr : &git->second;
        if (g && !g->same_shape(p))
            throw std::invalid_argument("adam_step: gradient shape mismatch for " + name);

        Tensor& m = state.m.try_emplace(name, Tensor::zeros(p.shape)).first->second;
        Tensor& v = state.v.try_emplace(name, Tensor::zeros(p.shape)).first->second;

        for (std::size_t i = 0; i < p.data.size(); ++i) {
            double gi = g ? g->data[i] : 0.0;
            if (!std::isfinite(gi))
                throw std::runtime_error("non-finite gradient for parameter " + name);
            m.data[i] = h.beta1 * m.data[i] + (1.0 - h.beta1) * gi;
            v.data[i] = h.beta2 * v.data[i] + (1.0 - h.beta2) * gi * gi;
            double m_hat = m.data[i] / bc1;
            double v_hat = v.data[i] / bc2;
            p.data[i] -= h.lr * m_hat / (std::sqrt(v_hat) + h.eps);
        }
    }
}

GradCheckReport grad_check(const ModelClosure& closure, const ParamMap& params, double epsilon,
                           std::size_t coords_per_tensor, std::uint64_t seed) {
    GradCheckReport report;
    ParamMap analytic;
    double base_loss = closure(params, &analytic);

    // Central differences of an O(|loss|) value cannot resolve derivatives
    // below accumulated rounding noise / (2 epsilon); coordinates where both
    // sides sit under that floor (e.g. exactly-zero gradients such as a key
    // bias, which softmax shift-invariance cancels) carry no signal. The
    // factor budgets a few thousand ulps of accumulation across the forward
    // pass.
    double noise_floor =
        4096.0 * std::max(1.0, std::abs(base_loss)) * std::numeric_limits<double>::epsilon() /
        epsilon;

    Rng rng(seed);
    for (const auto& [name, tensor] : params) {
        auto n = static_cast<std::size_t>(tensor.numel());
        std::vector<std::size_t> coords;
        if (n <= coords_per_tensor) {
            coords.resize(n);
            for (std::size_t i = 0; i < n; ++i) coords[i] = i;
        } else {
            coords = rng_sample_indices(rng, n, coords_per_tensor);
        }

        const Tensor* g = analytic.count(name) ? &analytic.at(name) : nullptr;
        for (std::size_t c : coords) {
            ParamMap perturbed = params;
            perturbed[name].data[c] += epsilon;
            double up = closure(perturbed, nullptr);
            perturbed[name].data[c] -= 2.0 * epsilon;
            double down = closure(perturbed, nullptr);
            double fd = (up - down) / (2.0 * epsilon);
            double an = g ? g->data[c] : 0.0;
            if (std::abs(fd) < noise_floor && std::abs(an) < noise_floor) continue;
            double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8});
            ++report.coords_checked;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_param = name;
                report.worst_coord = static_cast<std::int64_t>(c);
            }
        }
    }
    return report;
}

}  // namespace stormcast
