#include "amsf/autodiff.hpp"

#include <cmath>
#include <utility>

namespace amsf::ad {

namespace {

void check_same_tape(const Var& a, const Var& b) {
    require(a.valid() && b.valid() && a.tape == b.tape, "ad: operands on different tapes");
}

}  // namespace

void AttentionStats::observe(const Matrix& probs) {
    for (long i = 0; i < probs.rows(); ++i) {
        const double s = probs.row(i).sum();
        if (rows_seen == 0) {
            row_sum_min = row_sum_max = s;
        } else {
            row_sum_min = std::min(row_sum_min, s);
            row_sum_max = std::max(row_sum_max, s);
        }
        ++rows_seen;
    }
}

int Tape::emplace(Matrix value) {
    nodes_.push_back(Node{std::move(value), {}, false, {}, nullptr});
    return static_cast<int>(nodes_.size()) - 1;
}

void Tape::set_backprop(int idx, std::function<void(Tape&, const Matrix&)> fn) {
    nodes_[idx].backprop = std::move(fn);
}

Var Tape::leaf(Matrix value) {
    return Var{this, emplace(std::move(value))};
}

Var Tape::param(Parameter& p) {
    const int idx = emplace(p.value);
    nodes_[idx].bound = &p;
    return Var{this, idx};
}

const Matrix& Tape::value(const Var& v) const {
    require(v.tape == this && v.idx >= 0 && v.idx < static_cast<int>(nodes_.size()),
            "ad: stale var");
    return nodes_[v.idx].value;
}

Matrix Tape::grad(const Var& v) const {
    const Node& n = nodes_[v.idx];
    if (!n.grad_live) return Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
}

void Tape::accumulate(int idx, const Matrix& g) {
    Node& n = nodes_[idx];
    if (!n.grad_live) {
        n.grad = g;
        n.grad_live = true;
    } else {
        n.grad += g;
    }
}

void Tape::backward(const Var& root) {
    require(root.tape == this, "ad: root on another tape");
    require(!swept_, "ad: tape already swept; reset() before reuse");
    const Matrix& rv = nodes_[root.idx].value;
    require(rv.rows() == 1 && rv.cols() == 1, "ad: backward root must be 1x1");
    swept_ = true;
    accumulate(root.idx, Matrix::Ones(1, 1));
    for (int i = root.idx; i >= 0; --i) {
        Node& n = nodes_[i];
        if (!n.grad_live) continue;
        if (n.backprop) n.backprop(*this, n.grad);
        if (n.bound) {
            if (n.bound->grad.size() == 0) n.bound->zero_grad();
            n.bound->grad += n.grad;
        }
    }
}

void Tape::reset() {
    nodes_.clear();
    swept_ = false;
}

// ---- elementwise and broadcast --------------------------------------------

Var add(Var a, Var b) {
    check_same_tape(a, b);
    Tape& t = *a.tape;
    const Matrix &av = t.node_value(a.idx), &bv = t.node_value(b.idx);
    const bool sa = av.size() == 1, sb = bv.size() == 1;
    Matrix out;
    if (av.rows() == bv.rows() && av.cols() == bv.cols()) {
        out = av + bv;
    } else if (sa) {
        out = bv.array() + av(0, 0);
    } else if (sb) {
        out = av.array() + bv(0, 0);
    } else {
        throw DimensionError("add: shape mismatch");
    }
    const int idx = t.emplace(std::move(out));
    t.set_backprop(idx, [ai = a.idx, bi = b.idx, sa, sb](Tape& t, const Matrix& g) {
        const bool same = !sa && !sb;
        if (same || !sa) t.accumulate(ai, g); else t.accumulate(ai, Matrix::Constant(1, 1, g.sum()));
        if (same || !sb) t.accumulate(bi, g); else t.accumulate(bi, Matrix::Constant(1, 1, g.sum()));
    });
    return Var{&t, idx};
}

Var sub(Var a, Var b) { return add(a, neg(b)); }

Var neg(Var a) {
    Tape& t = *a.tape;
    const int idx = t.emplace(-t.node_value(a.idx));
    t.set_backprop(idx, [ai = a.idx](Tape& t, const Matrix& g) { t.accumulate(ai, -g); });
    return Var{&t, idx};
}

Var mul(Var a, Var b) {
    check_same_tape(a, b);
    Tape& t = *a.tape;
    const Matrix &av = t.node_value(a.idx), &bv = t.node_value(b.idx);
    const bool sa = av.size() == 1, sb = bv.size() == 1;
    Matrix out;
    if (av.rows() == bv.rows() && av.cols() == bv.cols()) {
        out = av.cwiseProduct(bv);
    } else if (sa) {
        out = bv * av(0, 0);
    } else if (sb) {
        out = av * bv(0, 0);
    } else {
        throw DimensionError("mul: shape mismatch");
    }
    const int idx = t.emplace(std::move(out));
    t.set_backprop(idx, [ai = a.idx, bi = b.idx, sa, sb](Tape& t, const Matrix& g) {
        const Matrix &av = t.node_value(ai), &bv = t.node_value(bi);
        const bool same = !sa && !sb;
        if (same) {
            t.accumulate(ai, g.cwiseProduct(bv));
            t.accumulate(bi, g.cwiseProduct(av));
        } else if (sa) {
            t.accumulate(ai, Matrix::Constant(1, 1, g.cwiseProduct(bv).sum()));
            t.accumulate(bi, g * av(0, 0));
        } else {
            t.accumulate(ai, g * bv(0, 0));
            t.accumulate(bi, Matrix::Constant(1, 1, g.cwiseProduct(av).sum()));
        }
    });
    return Var{&t, idx};
}

Var scale(Var a, double s) {
    Tape& t = *a.tape;
    const int idx = t.emplace(t.node_value(a.idx) * s);
    t.set_backprop(idx, [ai = a.idx, s](Tape& t, const Matrix& g) { t.accumulate(ai, g * s); });
    return Var{&t, idx};
}

Var add_scalar(Var a, double s) {
    Tape& t = *a.tape;
    const int idx = t.emplace(t.node_value(a.idx).array() + s);
    t.set_backprop(idx, [ai = a.idx](Tape& t, const Matrix& g) { t.accumulate(ai, g); });
    return Var{&t, idx};
}

// ---- linear algebra --------------------------------------------------------

Var matmul(Var a, Var b) {
    check_same_tape(a, b);
    Tape& t = *a.tape;
    const Matrix &av = t.node_value(a.idx), &bv = t.node_value(b.idx);
    require(av.cols() == bv.rows(), "matmul: inner dims differ");
    const int idx = t.emplace(av * bv);
    t.set_backprop(idx, [ai = a.idx, bi = b.idx](Tape& t, const Matrix& g) {
        t.accumulate(ai, g * t.node_value(bi).transpose());
        t.accumulate(bi, t.node_value(ai).transpose() * g);
    });
    return Var{&t, idx};
}

Var transpose(Var a) {
    Tape& t = *a.tape;
    const int idx = t.emplace(t.node_value(a.idx).transpose());
    t.set_backprop(idx, [ai = a.idx](Tape& t, const Matrix& g) {
        t.accumulate(ai, g.transpose());
    });
    return Var{&t, idx};
}

Var add_rowvec(Var a, Var r) {
    check_same_tape(a, r);
    Tape& t = *a.tape;
    const Matrix &av = t.node_value(a.idx), &rv = t.node_value(r.idx);
    require(rv.rows() == 1 && rv.cols() == av.cols(), "add_rowvec: bad row vector shape");
    const int idx = t.emplace(av.rowwise() + rv.row(0));
    t.set_backprop(idx, [ai = a.idx, ri = r.idx](Tape& t, const Matrix& g) {
        t.accumulate(ai, g);
        t.accumulate(ri, g.colwise().sum());
    });
    return Var{&t, idx};
}

Var mul_rowvec(Var a, Var r) {
    check_same_tape(a, r);
    Tape& t = *a.tape;
    const Matrix &av = t.node_value(a.idx), &rv = t.node_value(r.idx);
    require(rv.rows() == 1 && rv.cols() == av.cols(), "mul_rowvec: bad row vector shape");
    Matrix out = av.array().rowwise() * rv.row(0).array();
    const int idx = t.emplace(std::move(out));
    t.set_backprop(idx, [ai = a.idx, ri = r.idx](Tape& t, const Matrix& g) {
        const Matrix &av = t.node_value(ai), &rv = t.node_value(ri);
        t.accumulate(ai, g.array().rowwise() * rv.row(0).array());
        t.accumulate(ri, g.cwiseProduct(av).colwise().sum());
    });
    return Var{&t, idx};
}

Var linear(Var x, Var w, Var b) {
    check_same_tape(x, w);
    check_same_tape(x, b);
    Tape& t = *x.tape;
    const Matrix &xv = t.node_value(x.idx), &wv = t.node_value(w.idx), &bv = t.node_value(b.idx);
    require(xv.cols() == wv.rows(), "linear: inner dims differ");
    require(bv.rows() == 1 && bv.cols() == wv.cols(), "linear: bad bias shape");
    Matrix out = (xv * wv).rowwise() + bv.row(0);
    const int idx = t.emplace(std::move(out));
    t.set_backprop(idx, [xi = x.idx, wi = w.idx, bi = b.idx](Tape& t, const Matrix& g) {
        t.accumulate(xi, g * t.node_value(wi).transpose());
        t.accumulate(wi, t.node_value(xi).transpose() * g);
        t.accumulate(bi, g.colwise().sum());
    });
    return Var{&t, idx};
}

// ---- nonlinearities ---------------------------------------------------------

Var relu(Var a) {
    Tape& t = *a.tape;
    const int idx = t.emplace(t.node_value(a.idx).cwiseMax(0.0));
    t.set_backprop(idx, [ai = a.idx](Tape& t, const Matrix& g) {
        const Matrix& av = t.node_value(ai);
        t.accumulate(ai, (av.array() > 0.0).select(g, Matrix::Zero(g.rows(), g.cols())));
    });
    return Var{&t, idx};
}

Var gelu(Var a) {
    Tape& t = *a.tape;
    const Matrix& av = t.node_value(a.idx);
    Matrix out = av.unaryExpr([](double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); });
    const int idx = t.emplace(std::move(out));
    t.set_backprop(idx, [ai = a.idx](Tape& t, const Matrix& g) {
        const Matrix& av = t.node_value(ai);
        Matrix d = av.unaryExpr([](double x) {
            const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
            const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
            return cdf + x * pdf;
        });
        t.accumulate(ai, g.cwiseProduct(d));
    });
    return Var{&t, idx};
}

Var sigmoid(Var a) {
    Tape& t = *a.tape;
    Matrix out = t.node_value(a.idx).unaryExpr(
        [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); });
    const int idx = t.emplace(std::move(out));
    t.set_backprop(idx, [ai = a.idx, idx](Tape& t, const Matrix& g) {
        const Matrix& y = t.node_value(idx);
        t.accumulate(ai, g.cwiseProduct(y.cwiseProduct(Matrix::Ones(y.rows(), y.cols()) - y)));
    });
    return Var{&t, idx};
}

Var softplus(Var a) {
    Tape& t = *a.tape;
    Matrix out = t.node_value(a.idx).unaryExpr([](double x) {
        if (x > 30.0) return x;
        if (x < -30.0) return std::exp(x);
        return std::log1p(std::exp(x));
    });
    const int idx = t.emplace(std::move(out));
    t.set_backprop(idx, [ai = a.idx](Tape& t, const Matrix& g) {
        const Matrix& av = t.node_value(ai);
        Matrix d = av.unaryExpr([](double x) {
            return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        });
        t.accumulate(ai, g.cwiseProduct(d));
    });
    return Var{&t, idx};
}

Var exp(Var a) {
    Tape& t = *a.tape;
    const int idx = t.emplace(t.node_value(a.idx).array().exp().matrix());
    t.set_backprop(idx, [ai = a.idx, idx](Tape& t, const Matrix& g) {
        t.accumulate(ai, g.cwiseProduct(t.node_value(idx)));
    });
    return Var{&t, idx};
}

Var log(Var a) {
    Tape& t = *a.tape;
    const int idx = t.emplace(t.node_value(a.idx).array().log().matrix());
    t.set_backprop(idx, [ai = a.idx](Tape& t, const Matrix& g) {
        t.accumulate(ai, g.cwiseQuotient(t.node_value(ai)));
    });
    return Var{&t, idx};
}

Var clamp(Var a, double lo, double hi) {
    Tape& t = *a.tape;
    const int idx = t.emplace(t.node_value(a.idx).cwiseMax(lo).cwiseMin(hi));
    t.set_backprop(idx, [ai = a.idx, lo, hi](Tape& t, const Matrix& g) {
        const Matrix& av = t.node_value(ai);
        Matrix masked = ((av.array() > lo) && (av.array() < hi))
                            .select(g, Matrix::Zero(g.rows(), g.cols()));
        t.accumulate(ai, masked);
    });
    return Var{&t, idx};
}

Var softmax_rows(Var a) {
    Tape& t = *a.tape;
    const Matrix& av = t.node_value(a.idx);
    Matrix out(av.rows(), av.cols());
    for (long i = 0; i < av.rows(); ++i) {
        Eigen::RowVectorXd e = (av.row(i).array() - av.row(i).maxCoeff()).exp();
        out.row(i) = e / e.sum();
    }
    const int idx = t.emplace(std::move(out));
    t.set_backprop(idx, [ai = a.idx, idx](Tape& t, const Matrix& g) {
        const Matrix& y = t.node_value(idx);
        Matrix gx(y.rows(), y.cols());
        for (long i = 0; i < y.rows(); ++i) {
            const double dot = g.row(i).cwiseProduct(y.row(i)).sum();
            gx.row(i) = y.row(i).cwiseProduct((g.row(i).array() - dot).matrix());
        }
        t.accumulate(ai, gx);
    });
    return Var{&t, idx};
}

Var layer_norm_rows(Var x, Var gain, Var bias, double eps) {
    check_same_tape(x, gain);
    check_same_tape(x, bias);
    Tape& t = *x.tape;
    const Matrix& xv = t.node_value(x.idx);
    const Matrix& gv = t.node_value(gain.idx);
    const Matrix& bv = t.node_value(bias.idx);
    require(gv.rows() == 1 && gv.cols() == xv.cols() && bv.rows() == 1 && bv.cols() == xv.cols(),
            "layer_norm_rows: gain/bias must be 1 x d");
    const long n = xv.rows(), d = xv.cols();
    Matrix xhat(n, d);
    Eigen::VectorXd inv_sigma(n);
    for (long i = 0; i < n; ++i) {
        const double mu = xv.row(i).mean();
        const double var = (xv.row(i).array() - mu).square().mean();
        const double is = 1.0 / std::sqrt(var + eps);
        inv_sigma(i) = is;
        xhat.row(i) = (xv.row(i).array() - mu) * is;
    }
    Matrix out = (xhat.array().rowwise() * gv.row(0).array()).rowwise() + bv.row(0).array();
    const int idx = t.emplace(std::move(out));
    t.set_backprop(idx, [xi = x.idx, gi = gain.idx, bi = bias.idx, xhat = std::move(xhat),
                         inv_sigma = std::move(inv_sigma)](Tape& t, const Matrix& g) {
        const Matrix& gv = t.node_value(gi);
        t.accumulate(gi, g.cwiseProduct(xhat).colwise().sum());
        t.accumulate(bi, g.colwise().sum());
        Matrix gx(g.rows(), g.cols());
        for (long i = 0; i < g.rows(); ++i) {
            Eigen::RowVectorXd ghat = g.row(i).array() * gv.row(0).array();
            const double m1 = ghat.mean();
            const double m2 = ghat.cwiseProduct(xhat.row(i)).mean();
            gx.row(i) = (ghat.array() - m1 - xhat.row(i).array() * m2) * inv_sigma(i);
        }
        t.accumulate(xi, gx);
    });
    return Var{&t, idx};
}

// ---- reductions and reshapes -------------------------------------------------

Var sum_all(Var a) {
    Tape& t = *a.tape;
    const int idx = t.emplace(Matrix::Constant(1, 1, t.node_value(a.idx).sum()));
    t.set_backprop(idx, [ai = a.idx](Tape& t, const Matrix& g) {
        const Matrix& av = t.node_value(ai);
        t.accumulate(ai, Matrix::Constant(av.rows(), av.cols(), g(0, 0)));
    });
    return Var{&t, idx};
}

Var mean_all(Var a) {
    const double inv = 1.0 / static_cast<double>(a.value().size());
    return scale(sum_all(a), inv);
}

Var mean_over_rows(Var a) {
    Tape& t = *a.tape;
    const Matrix& av = t.node_value(a.idx);
    const int idx = t.emplace(av.colwise().mean());
    t.set_backprop(idx, [ai = a.idx, n = av.rows()](Tape& t, const Matrix& g) {
        t.accumulate(ai, g.replicate(n, 1) / static_cast<double>(n));
    });
    return Var{&t, idx};
}

Var rows(Var a, int first, int count) {
    Tape& t = *a.tape;
    const Matrix& av = t.node_value(a.idx);
    require(first >= 0 && count >= 0 && first + count <= av.rows(), "rows: range out of bounds");
    const int idx = t.emplace(av.middleRows(first, count));
    t.set_backprop(idx, [ai = a.idx, first, count](Tape& t, const Matrix& g) {
        const Matrix& av = t.node_value(ai);
        Matrix full = Matrix::Zero(av.rows(), av.cols());
        full.middleRows(first, count) = g;
        t.accumulate(ai, full);
    });
    return Var{&t, idx};
}

Var cols(Var a, int first, int count) {
    Tape& t = *a.tape;
    const Matrix& av = t.node_value(a.idx);
    require(first >= 0 && count >= 0 && first + count <= av.cols(), "cols: range out of bounds");
    const int idx = t.emplace(av.middleCols(first, count));
    t.set_backprop(idx, [ai = a.idx, first, count](Tape& t, const Matrix& g) {
        const Matrix& av = t.node_value(ai);
        Matrix full = Matrix::Zero(av.rows(), av.cols());
        full.middleCols(first, count) = g;
        t.accumulate(ai, full);
    });
    return Var{&t, idx};
}

Var vcat(Var a, Var b) {
    check_same_tape(a, b);
    Tape& t = *a.tape;
    const Matrix &av = t.node_value(a.idx), &bv = t.node_value(b.idx);
    require(av.cols() == bv.cols(), "vcat: column mismatch");
    Matrix out(av.rows() + bv.rows(), av.cols());
    out.topRows(av.rows()) = av;
    out.bottomRows(bv.rows()) = bv;
    const int idx = t.emplace(std::move(out));
    t.set_backprop(idx, [ai = a.idx, bi = b.idx, na = av.rows()](Tape& t, const Matrix& g) {
        t.accumulate(ai, g.topRows(na));
        t.accumulate(bi, g.bottomRows(g.rows() - na));
    });
    return Var{&t, idx};
}

Var hcat(Var a, Var b) {
    check_same_tape(a, b);
    Tape& t = *a.tape;
    const Matrix &av = t.node_value(a.idx), &bv = t.node_value(b.idx);
    require(av.rows() == bv.rows(), "hcat: row mismatch");
    Matrix out(av.rows(), av.cols() + bv.cols());
    out.leftCols(av.cols()) = av;
    out.rightCols(bv.cols()) = bv;
    const int idx = t.emplace(std::move(out));
    t.set_backprop(idx, [ai = a.idx, bi = b.idx, na = av.cols()](Tape& t, const Matrix& g) {
        t.accumulate(ai, g.leftCols(na));
        t.accumulate(bi, g.rightCols(g.cols() - na));
    });
    return Var{&t, idx};
}

Var l2_normalize_rows(Var a, double guard) {
    Tape& t = *a.tape;
    const Matrix& av = t.node_value(a.idx);
    Matrix out(av.rows(), av.cols());
    Eigen::VectorXd norms(av.rows());
    for (long i = 0; i < av.rows(); ++i) {
        const double n = av.row(i).norm();
        norms(i) = n;
        out.row(i) = n > guard ? (av.row(i) / n).eval() : av.row(i);
    }
    const int idx = t.emplace(std::move(out));
    t.set_backprop(idx, [ai = a.idx, idx, norms = std::move(norms), guard](Tape& t, const Matrix& g) {
        const Matrix& y = t.node_value(idx);
        Matrix gx(g.rows(), g.cols());
        for (long i = 0; i < g.rows(); ++i) {
            if (norms(i) > guard) {
                const double dot = g.row(i).cwiseProduct(y.row(i)).sum();
                gx.row(i) = (g.row(i) - dot * y.row(i)) / norms(i);
            } else {
                gx.row(i) = g.row(i);
            }
        }
        t.accumulate(ai, gx);
    });
    return Var{&t, idx};
}

Var spd_solve(Var a, Var b) {
    check_same_tape(a, b);
    Tape& t = *a.tape;
    const Matrix &av = t.node_value(a.idx), &bv = t.node_value(b.idx);
    require(av.rows() == av.cols() && av.rows() == bv.rows(), "spd_solve: bad shapes");
    Eigen::LLT<Matrix> llt(av);
    if (llt.info() != Eigen::Success) {
        throw std::runtime_error("spd_solve: Cholesky factorization failed");
    }
    Matrix y = llt.solve(bv);
    const int idx = t.emplace(std::move(y));
    t.set_backprop(idx, [ai = a.idx, bi = b.idx, idx, llt = std::move(llt)](Tape& t, const Matrix& g) {
        const Matrix gb = llt.solve(g);
        t.accumulate(bi, gb);
        t.accumulate(ai, -gb * t.node_value(idx).transpose());
    });
    return Var{&t, idx};
}

Var patchify(Var pixels, int height, int width, int patch) {
    Tape& t = *pixels.tape;
    const Matrix& pv = t.node_value(pixels.idx);
    require(pv.rows() == static_cast<long>(height) * width, "patchify: pixel count mismatch");
    require(patch > 0 && height % patch == 0 && width % patch == 0,
            "patchify: dims not divisible by patch size");
    const int gh = height / patch, gw = width / patch;
    const long c = pv.cols();
    Matrix out(static_cast<long>(gh) * gw, static_cast<long>(patch) * patch * c);
    for (int pr = 0; pr < gh; ++pr) {
        for (int pc = 0; pc < gw; ++pc) {
            const long token = static_cast<long>(pr) * gw + pc;
            for (int pi = 0; pi < patch; ++pi) {
                for (int pj = 0; pj < patch; ++pj) {
                    const long src = static_cast<long>(pr * patch + pi) * width + (pc * patch + pj);
                    const long off = (static_cast<long>(pi) * patch + pj) * c;
                    out.block(token, off, 1, c) = pv.row(src);
                }
            }
        }
    }
    const int idx = t.emplace(std::move(out));
    t.set_backprop(idx, [pi_ = pixels.idx, height, width, patch, c](Tape& t, const Matrix& g) {
        const int gh = height / patch, gw = width / patch;
        Matrix gx = Matrix::Zero(static_cast<long>(height) * width, c);
        for (int pr = 0; pr < gh; ++pr) {
            for (int pc = 0; pc < gw; ++pc) {
                const long token = static_cast<long>(pr) * gw + pc;
                for (int pi = 0; pi < patch; ++pi) {
                    for (int pj = 0; pj < patch; ++pj) {
                        const long src = static_cast<long>(pr * patch + pi) * width + (pc * patch + pj);
                        const long off = (static_cast<long>(pi) * patch + pj) * c;
                        gx.row(src) += g.block(token, off, 1, c);
                    }
                }
            }
        }
        t.accumulate(pi_, gx);
    });
    return Var{&t, idx};
}

Var flatten_image(Var a) {
    Tape& t = *a.tape;
    const Matrix& av = t.node_value(a.idx);
    const long h = av.rows(), w = av.cols();
    Matrix out(h * w, 1);
    for (long i = 0; i < h; ++i)
        for (long j = 0; j < w; ++j) out(i * w + j, 0) = av(i, j);
    const int idx = t.emplace(std::move(out));
    t.set_backprop(idx, [ai = a.idx, h, w](Tape& t, const Matrix& g) {
        Matrix gx(h, w);
        for (long i = 0; i < h; ++i)
            for (long j = 0; j < w; ++j) gx(i, j) = g(i * w + j, 0);
        t.accumulate(ai, gx);
    });
    return Var{&t, idx};
}

Var multihead_attention(Var q, Var k, Var v, int heads, AttentionStats* stats) {
    check_same_tape(q, k);
    check_same_tape(q, v);
    Tape& t = *q.tape;
    const Matrix &qv = t.node_value(q.idx), &kv = t.node_value(k.idx), &vv = t.node_value(v.idx);
    const long d = qv.cols();
    require(heads > 0 && d % heads == 0, "multihead_attention: heads must divide width");
    require(kv.cols() == d && vv.cols() == d && kv.rows() == vv.rows(),
            "multihead_attention: key/value shapes differ");
    const long dh = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Matrix> probs(heads);
    Matrix out(qv.rows(), d);
    for (int h = 0; h < heads; ++h) {
        const auto qh = qv.middleCols(h * dh, dh);
        const auto kh = kv.middleCols(h * dh, dh);
        Matrix s = qh * kh.transpose() * inv_sqrt;
        Matrix p(s.rows(), s.cols());
        for (long i = 0; i < s.rows(); ++i) {
            Eigen::RowVectorXd e = (s.row(i).array() - s.row(i).maxCoeff()).exp();
            p.row(i) = e / e.sum();
        }
        if (stats) stats->observe(p);
        out.middleCols(h * dh, dh) = p * vv.middleCols(h * dh, dh);
        probs[h] = std::move(p);
    }
    const int idx = t.emplace(std::move(out));
    t.set_backprop(idx, [qi = q.idx, ki = k.idx, vi = v.idx, heads, dh, inv_sqrt,
                         probs = std::move(probs)](Tape& t, const Matrix& g) {
        const Matrix &qv = t.node_value(qi), &kv = t.node_value(ki), &vv = t.node_value(vi);
        Matrix gq = Matrix::Zero(qv.rows(), qv.cols());
        Matrix gk = Matrix::Zero(kv.rows(), kv.cols());
        Matrix gv = Matrix::Zero(vv.rows(), vv.cols());
        for (int h = 0; h < heads; ++h) {
            const Matrix& p = probs[h];
            const auto gh = g.middleCols(h * dh, dh);
            const auto vh = vv.middleCols(h * dh, dh);
            gv.middleCols(h * dh, dh) = p.transpose() * gh;
            Matrix gp = gh * vh.transpose();
            Matrix gs(p.rows(), p.cols());
            for (long i = 0; i < p.rows(); ++i) {
                const double dot = gp.row(i).cwiseProduct(p.row(i)).sum();
                gs.row(i) = p.row(i).cwiseProduct((gp.row(i).array() - dot).matrix());
            }
            gq.middleCols(h * dh, dh) = gs * kv.middleCols(h * dh, dh) * inv_sqrt;
            gk.middleCols(h * dh, dh) = gs.transpose() * qv.middleCols(h * dh, dh) * inv_sqrt;
        }
        t.accumulate(qi, gq);
        t.accumulate(ki, gk);
        t.accumulate(vi, gv);
    });
    return Var{&t, idx};
}

Var dropout(Var a, double rate, Rng& rng, bool training) {
    if (!training || rate <= 0.0) return a;
    require(rate < 1.0, "dropout: rate must be < 1");
    Tape& t = *a.tape;
    const Matrix& av = t.node_value(a.idx);
    const double keep = 1.0 - rate;
    Matrix mask(av.rows(), av.cols());
    for (long i = 0; i < av.rows(); ++i)
        for (long j = 0; j < av.cols(); ++j)
            mask(i, j) = rng.uniform() < keep ? 1.0 / keep : 0.0;
    const int idx = t.emplace(av.cwiseProduct(mask));
    t.set_backprop(idx, [ai = a.idx, mask = std::move(mask)](Tape& t, const Matrix& g) {
        t.accumulate(ai, g.cwiseProduct(mask));
    });
    return Var{&t, idx};
}

}  // namespace amsf::ad
