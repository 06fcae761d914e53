#pragma once

#include <utility>

#include "amsf/autodiff.hpp"
#include "amsf/backbone.hpp"
#include "amsf/params.hpp"

namespace amsf::acasff {

struct AcasffConfig {
    int fusion_mlp_hidden = 16;
    bool fuse_cls = false;  // when true the CLS row joins both streams
};

struct AcasffParams {
    Parameter *wq_s, *wk_f, *wv_f;  // spatial queries against frequency keys/values
    Parameter *wq_f, *wk_s, *wv_s;  // frequency queries against spatial keys/values
    Parameter *mlp_w1, *mlp_b1, *mlp_w2, *mlp_b2;
};

AcasffParams init_acasff_params(ParamStore& store, int d_model, const AcasffConfig& cfg,
                                Rng& rng);

/// softmax(Q K^T / sqrt(d)) with d = Q's width. Rows are stochastic.
Matrix attention_weights(const Matrix& q, const Matrix& k);

/// Single-head scaled dot-product attention on plain matrices.
Matrix scaled_attention(const Matrix& q, const Matrix& k, const Matrix& v);

/// Dual-branch cross-domain attention. Returns (phi_sf, phi_fs): spatial
/// queries attending to frequency tokens, and the reverse.
std::pair<ad::Var, ad::Var> cross_domain(ad::Tape& tape, ad::Var phi_s, ad::Var phi_f,
                                         const AcasffParams& p, int heads,
                                         ad::AttentionStats* stats = nullptr);

/// (omega_s, omega_f) = (phi_s + phi_fs, phi_f + phi_sf).
std::pair<ad::Var, ad::Var> residual_enhance(ad::Var phi_s, ad::Var phi_f, ad::Var phi_sf,
                                             ad::Var phi_fs);

/// Pooled descriptors through the fusion network give (omega_1, omega_2);
/// output is omega_1*Omega_f + omega_2*Omega_s.
ad::Var adaptive_fuse(ad::Tape& tape, ad::Var omega_f, ad::Var omega_s, const AcasffParams& p,
                      Eigen::Vector2d* weights_out = nullptr);

/// Splits by domain tag, runs both cross-attentions, residual enhancement and
/// adaptive fusion, then writes the fused stream into both domain slots. CLS
/// passes through unchanged unless cfg.fuse_cls.
backbone::TokenSequence fuse_block(ad::Tape& tape, const backbone::TokenSequence& seq,
                                   const AcasffParams& p, const AcasffConfig& cfg, int heads,
                                   ad::AttentionStats* stats = nullptr,
                                   Eigen::Vector2d* weights_out = nullptr);

}  // namespace amsf::acasff
