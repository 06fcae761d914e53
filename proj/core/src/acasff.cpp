#include "amsf/acasff.hpp"

#include <cmath>

namespace amsf::acasff {

using ad::Tape;
using ad::Var;

AcasffParams init_acasff_params(ParamStore& store, int d_model, const AcasffConfig& cfg,
                                Rng& rng) {
    if (cfg.fusion_mlp_hidden < 1) throw ConfigError("acasff: fusion_mlp_hidden must be >= 1");
    AcasffParams p;
    p.wq_s = &store.add("acasff.wq_s", uniform_fan_in(d_model, d_model, rng));
    p.wk_f = &store.add("acasff.wk_f", uniform_fan_in(d_model, d_model, rng));
    p.wv_f = &store.add("acasff.wv_f", uniform_fan_in(d_model, d_model, rng));
    p.wq_f = &store.add("acasff.wq_f", uniform_fan_in(d_model, d_model, rng));
    p.wk_s = &store.add("acasff.wk_s", uniform_fan_in(d_model, d_model, rng));
    p.wv_s = &store.add("acasff.wv_s", uniform_fan_in(d_model, d_model, rng));
    p.mlp_w1 = &store.add("acasff.mlp.w1", uniform_fan_in(2 * d_model, cfg.fusion_mlp_hidden, rng));
    p.mlp_b1 = &store.add("acasff.mlp.b1", Matrix::Zero(1, cfg.fusion_mlp_hidden));
    p.mlp_w2 = &store.add("acasff.mlp.w2", uniform_fan_in(cfg.fusion_mlp_hidden, 2, rng));
    p.mlp_b2 = &store.add("acasff.mlp.b2", Matrix::Zero(1, 2));
    return p;
}

Matrix attention_weights(const Matrix& q, const Matrix& k) {
    require(q.cols() == k.cols(), "attention_weights: width mismatch");
    require(q.cols() > 0, "attention_weights: empty width");
    Matrix s = q * k.transpose() / std::sqrt(static_cast<double>(q.cols()));
    for (long i = 0; i < s.rows(); ++i) {
        Eigen::RowVectorXd e = (s.row(i).array() - s.row(i).maxCoeff()).exp();
        s.row(i) = e / e.sum();
    }
    return s;
}

Matrix scaled_attention(const Matrix& q, const Matrix& k, const Matrix& v) {
    require(k.rows() == v.rows(), "scaled_attention: key/value row mismatch");
    return attention_weights(q, k) * v;
}

std::pair<Var, Var> cross_domain(Tape& tape, Var phi_s, Var phi_f, const AcasffParams& p,
                                 int heads, ad::AttentionStats* stats) {
    require(phi_s.cols() == phi_f.cols(), "cross_domain: token width mismatch");
    Var qs = matmul(phi_s, tape.param(*p.wq_s));
    Var kf = matmul(phi_f, tape.param(*p.wk_f));
    Var vf = matmul(phi_f, tape.param(*p.wv_f));
    Var phi_sf = multihead_attention(qs, kf, vf, heads, stats);

    Var qf = matmul(phi_f, tape.param(*p.wq_f));
    Var ks = matmul(phi_s, tape.param(*p.wk_s));
    Var vs = matmul(phi_s, tape.param(*p.wv_s));
    Var phi_fs = multihead_attention(qf, ks, vs, heads, stats);
    return {phi_sf, phi_fs};
}

std::pair<Var, Var> residual_enhance(Var phi_s, Var phi_f, Var phi_sf, Var phi_fs) {
    require(phi_f.rows() == phi_sf.rows() && phi_f.cols() == phi_sf.cols(),
            "residual_enhance: phi_f/phi_sf shape mismatch");
    require(phi_s.rows() == phi_fs.rows() && phi_s.cols() == phi_fs.cols(),
            "residual_enhance: phi_s/phi_fs shape mismatch");
    Var omega_s = add(phi_s, phi_fs);
    Var omega_f = add(phi_f, phi_sf);
    return {omega_s, omega_f};
}

Var adaptive_fuse(Tape& tape, Var omega_f, Var omega_s, const AcasffParams& p,
                  Eigen::Vector2d* weights_out) {
    require(omega_f.rows() == omega_s.rows() && omega_f.cols() == omega_s.cols(),
            "adaptive_fuse: shape mismatch");
    Var desc = hcat(mean_over_rows(omega_f), mean_over_rows(omega_s));
    Var hidden = relu(linear(desc, tape.param(*p.mlp_w1), tape.param(*p.mlp_b1)));
    Var w = softmax_rows(linear(hidden, tape.param(*p.mlp_w2), tape.param(*p.mlp_b2)));
    if (weights_out) *weights_out = w.value().row(0).transpose();
    return add(mul(cols(w, 0, 1), omega_f), mul(cols(w, 1, 1), omega_s));
}

backbone::TokenSequence fuse_block(Tape& tape, const backbone::TokenSequence& seq,
                                   const AcasffParams& p, const AcasffConfig& cfg, int heads,
                                   ad::AttentionStats* stats, Eigen::Vector2d* weights_out) {
    if (seq.n_spatial == 0 || seq.n_freq == 0) {
        throw DimensionError("fuse_block: sequence lacks a domain token group");
    }
    require(seq.n_spatial == seq.n_freq, "fuse_block: domain token counts differ");
    Var cls = rows(seq.tokens, 0, 1);
    Var phi_s = rows(seq.tokens, seq.spatial_first(), seq.n_spatial);
    Var phi_f = rows(seq.tokens, seq.freq_first(), seq.n_freq);
    if (cfg.fuse_cls) {
        phi_s = vcat(cls, phi_s);
        phi_f = vcat(cls, phi_f);
    }
    auto [phi_sf, phi_fs] = cross_domain(tape, phi_s, phi_f, p, heads, stats);
    auto [omega_s, omega_f] = residual_enhance(phi_s, phi_f, phi_sf, phi_fs);
    Var fused = adaptive_fuse(tape, omega_f, omega_s, p, weights_out);

    backbone::TokenSequence out = seq;
    if (cfg.fuse_cls) {
        Var new_cls = rows(fused, 0, 1);
        Var body = rows(fused, 1, seq.n_spatial);
        out.tokens = vcat(new_cls, vcat(body, body));
    } else {
        out.tokens = vcat(cls, vcat(fused, fused));
    }
    return out;
}

}  // namespace amsf::acasff
