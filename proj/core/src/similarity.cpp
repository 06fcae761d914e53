#include "amsf/similarity.hpp"

#include <cmath>

namespace amsf::similarity {

using ad::Tape;
using ad::Var;

SimilarityParams init_similarity_params(ParamStore& store, const SimilarityConfig& cfg) {
    if (cfg.gamma <= 0.0 || cfg.eps <= 0.0) throw ConfigError("similarity: gamma/eps must be > 0");
    if (cfg.tau_min <= 0.0 || cfg.tau_max <= cfg.tau_min) {
        throw ConfigError("similarity: bad tau bounds");
    }
    SimilarityParams p;
    p.alpha = &store.add("sim.alpha", Matrix::Constant(1, 1, cfg.alpha_init));
    p.beta = &store.add("sim.beta", Matrix::Constant(1, 1, cfg.beta_init));
    p.tau = &store.add("sim.tau", Matrix::Constant(1, 1, cfg.tau_init));
    p.cfg = cfg;
    return p;
}

Matrix l2_normalize_rows(const Matrix& m, double guard) {
    Matrix out = m;
    for (long i = 0; i < m.rows(); ++i) {
        const double n = m.row(i).norm();
        if (n > guard) out.row(i) /= n;
    }
    return out;
}

Matrix aggregate_support(const std::vector<Matrix>& shots) {
    if (shots.empty()) throw DimensionError("aggregate_support: K must be >= 1");
    Matrix mean = shots[0];
    for (size_t k = 1; k < shots.size(); ++k) {
        require(shots[k].rows() == mean.rows() && shots[k].cols() == mean.cols(),
                "aggregate_support: shot shapes differ");
        mean += shots[k];
    }
    mean /= static_cast<double>(shots.size());
    return l2_normalize_rows(mean);
}

namespace {

void check_lambda(double lambda) {
    if (!(lambda > 0.0)) throw ConfigError("reconstruction_matrix: lambda must be > 0");
}

}  // namespace

Matrix reconstruction_matrix_primal(const Matrix& sbar, double lambda) {
    check_lambda(lambda);
    const long d = sbar.cols();
    Matrix gram = sbar.transpose() * sbar;
    Matrix a = gram + lambda * Matrix::Identity(d, d);
    return Eigen::LLT<Matrix>(a).solve(gram);
}

Matrix reconstruction_matrix_dual(const Matrix& sbar, double lambda) {
    check_lambda(lambda);
    const long r = sbar.rows();
    Matrix k = sbar * sbar.transpose() + lambda * Matrix::Identity(r, r);
    return sbar.transpose() * Eigen::LLT<Matrix>(k).solve(sbar);
}

Matrix reconstruction_matrix(const Matrix& sbar, double lambda) {
    return sbar.rows() < sbar.cols() ? reconstruction_matrix_dual(sbar, lambda)
                                     : reconstruction_matrix_primal(sbar, lambda);
}

Matrix reconstruct(const Matrix& fq, const Matrix& w, double rho) {
    require(fq.cols() == w.rows() && w.rows() == w.cols(), "reconstruct: dim mismatch");
    return rho * (fq * w);
}

double score(const Matrix& fq, const Matrix& fhat) {
    require(fq.rows() == fhat.rows() && fq.cols() == fhat.cols(), "score: shape mismatch");
    const double sq = (fq - fhat).squaredNorm();
    return -sq / static_cast<double>(fq.rows());
}

ClassScoresPlain classify_plain(const Matrix& fq, const std::vector<Matrix>& sbars,
                                double lambda, double rho, double tau) {
    if (sbars.size() < 2) throw DimensionError("classify: needs at least 2 classes");
    const int n = static_cast<int>(sbars.size());
    ClassScoresPlain out;
    out.scores.resize(n);
    for (int c = 0; c < n; ++c) {
        Matrix w = reconstruction_matrix(sbars[c], lambda);
        out.scores(c) = score(fq, reconstruct(fq, w, rho));
    }
    Eigen::RowVectorXd logits = tau * out.scores;
    Eigen::RowVectorXd e = (logits.array() - logits.maxCoeff()).exp();
    out.probs = e / e.sum();
    out.argmax = 0;
    for (int c = 1; c < n; ++c) {
        if (out.probs(c) > out.probs(out.argmax)) out.argmax = c;
    }
    return out;
}

Var aggregate_support(Tape& tape, const std::vector<Var>& shots) {
    if (shots.empty()) throw DimensionError("aggregate_support: K must be >= 1");
    Var sum = shots[0];
    for (size_t k = 1; k < shots.size(); ++k) sum = add(sum, shots[k]);
    return l2_normalize_rows(scale(sum, 1.0 / static_cast<double>(shots.size())));
}

Var reconstruction_matrix(Tape& tape, Var sbar, Var lambda) {
    require(lambda.rows() == 1 && lambda.cols() == 1, "reconstruction_matrix: lambda must be 1x1");
    const long r = sbar.rows(), d = sbar.cols();
    if (r < d) {
        Var k = add(matmul(sbar, transpose(sbar)), mul(lambda, tape.leaf(Matrix::Identity(r, r))));
        return matmul(transpose(sbar), spd_solve(k, sbar));
    }
    Var gram = matmul(transpose(sbar), sbar);
    Var a = add(gram, mul(lambda, tape.leaf(Matrix::Identity(d, d))));
    return spd_solve(a, gram);
}

Var reconstruct(Tape& tape, Var fq, Var w, Var rho) {
    require(fq.cols() == w.rows() && w.rows() == w.cols(), "reconstruct: dim mismatch");
    return mul(rho, matmul(fq, w));
}

Var score(Tape& tape, Var fq, Var fhat) {
    require(fq.rows() == fhat.rows() && fq.cols() == fhat.cols(), "score: shape mismatch");
    Var diff = sub(fq, fhat);
    return scale(sum_all(mul(diff, diff)), -1.0 / static_cast<double>(fq.rows()));
}

EffectiveParams effective_params(Tape& tape, const SimilarityParams& p) {
    EffectiveParams e;
    e.lambda = add_scalar(scale(softplus(tape.param(*p.alpha)), p.cfg.gamma), p.cfg.eps);
    e.rho = add_scalar(sigmoid(tape.param(*p.beta)), 1.0);
    e.tau = clamp(tape.param(*p.tau), p.cfg.tau_min, p.cfg.tau_max);
    return e;
}

ClassifyResult classify(Tape& tape, Var fq, const std::vector<Var>& sbars,
                        const SimilarityParams& p, std::vector<double>* prob_sums) {
    if (sbars.size() < 2) throw DimensionError("classify: needs at least 2 classes");
    EffectiveParams eff = effective_params(tape, p);
    ClassifyResult out;
    Var scores;
    for (size_t c = 0; c < sbars.size(); ++c) {
        Var w = reconstruction_matrix(tape, sbars[c], eff.lambda);
        Var s = score(tape, fq, reconstruct(tape, fq, w, eff.rho));
        scores = c == 0 ? s : hcat(scores, s);
    }
    out.scores = scores;
    out.probs = softmax_rows(mul(eff.tau, scores));
    const Matrix& pv = out.probs.value();
    if (prob_sums) prob_sums->push_back(pv.sum());
    out.argmax = 0;
    for (long c = 1; c < pv.cols(); ++c) {
        if (pv(0, c) > pv(0, out.argmax)) out.argmax = static_cast<int>(c);
    }
    return out;
}

}  // namespace amsf::similarity
