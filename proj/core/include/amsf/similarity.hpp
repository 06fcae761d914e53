#pragma once

#include <vector>

#include "amsf/autodiff.hpp"
#include "amsf/params.hpp"

namespace amsf::similarity {

struct SimilarityConfig {
    double tau_init = 15.0;
    double gamma = 10.0;       // lambda = softplus(alpha) * gamma + eps
    double eps = 0.01;
    double alpha_init = -3.0;
    double beta_init = 0.0;    // rho = 1 + sigmoid(beta)
    double tau_min = 0.1;
    double tau_max = 100.0;
};

struct SimilarityParams {
    Parameter *alpha = nullptr, *beta = nullptr, *tau = nullptr;
    SimilarityConfig cfg;
};

SimilarityParams init_similarity_params(ParamStore& store, const SimilarityConfig& cfg);

// ---- plain-matrix forms (also serve as oracles for the taped path) ---------

Matrix l2_normalize_rows(const Matrix& m, double guard = 1e-12);

/// Elementwise shot mean followed by row normalization. K must be >= 1.
Matrix aggregate_support(const std::vector<Matrix>& shots);

/// (S^T S + lambda I_d)^{-1} S^T S, solved in d x d space.
Matrix reconstruction_matrix_primal(const Matrix& sbar, double lambda);

/// S^T (S S^T + lambda I_r)^{-1} S, solved in r x r space.
Matrix reconstruction_matrix_dual(const Matrix& sbar, double lambda);

/// Dual form when r < d, primal otherwise.
Matrix reconstruction_matrix(const Matrix& sbar, double lambda);

Matrix reconstruct(const Matrix& fq, const Matrix& w, double rho);

/// Negative mean squared token reconstruction error; 0 iff fhat == fq.
double score(const Matrix& fq, const Matrix& fhat);

struct ClassScoresPlain {
    Eigen::RowVectorXd scores;
    Eigen::RowVectorXd probs;
    int argmax = 0;  // lowest index wins ties
};

ClassScoresPlain classify_plain(const Matrix& fq, const std::vector<Matrix>& sbars,
                                double lambda, double rho, double tau);

// ---- taped forms used by the model ------------------------------------------

ad::Var aggregate_support(ad::Tape& tape, const std::vector<ad::Var>& shots);
ad::Var reconstruction_matrix(ad::Tape& tape, ad::Var sbar, ad::Var lambda);
ad::Var reconstruct(ad::Tape& tape, ad::Var fq, ad::Var w, ad::Var rho);
ad::Var score(ad::Tape& tape, ad::Var fq, ad::Var fhat);

struct EffectiveParams {
    ad::Var lambda, rho, tau;  // 1x1 each
};

/// lambda = softplus(alpha)*gamma + eps; rho = 1 + sigmoid(beta);
/// tau projected into [tau_min, tau_max] at use time.
EffectiveParams effective_params(ad::Tape& tape, const SimilarityParams& p);

struct ClassifyResult {
    ad::Var scores;  // 1 x N
    ad::Var probs;   // 1 x N
    int argmax = 0;
};

ClassifyResult classify(ad::Tape& tape, ad::Var fq, const std::vector<ad::Var>& sbars,
                        const SimilarityParams& p, std::vector<double>* prob_sums = nullptr);

}  // namespace amsf::similarity
