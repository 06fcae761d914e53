#include "amsf/backbone.hpp"

#include <string>

namespace amsf::backbone {

using ad::Tape;
using ad::Var;

BackboneParams init_backbone_params(ParamStore& store, const BackboneConfig& cfg,
                                    int ll_channels, int hf_channels, Rng& rng) {
    if (cfg.d_model < 1 || cfg.depth < 1) throw ConfigError("backbone: bad d_model/depth");
    if (cfg.heads < 1 || cfg.d_model % cfg.heads != 0) {
        throw ConfigError("backbone: heads must divide d_model");
    }
    if (cfg.image_size % cfg.patch_size != 0) {
        throw ConfigError("backbone: image_size not divisible by patch_size");
    }
    if (cfg.insertion_layer < 0 || cfg.insertion_layer >= cfg.depth) {
        throw ConfigError("backbone: insertion_layer must be in [0, depth)");
    }
    const int d = cfg.d_model;
    const int grid = cfg.image_size / cfg.patch_size;
    const int tokens_per_domain = grid * grid;
    const int patch_dim = cfg.patch_size * cfg.patch_size * cfg.proj_channels;

    BackboneParams p;
    p.proj_s_w = &store.add("bb.proj_s.w", uniform_fan_in(ll_channels, cfg.proj_channels, rng));
    p.proj_s_b = &store.add("bb.proj_s.b", Matrix::Zero(1, cfg.proj_channels));
    p.proj_f_w = &store.add("bb.proj_f.w", uniform_fan_in(hf_channels, cfg.proj_channels, rng));
    p.proj_f_b = &store.add("bb.proj_f.b", Matrix::Zero(1, cfg.proj_channels));
    p.embed_s_w = &store.add("bb.embed_s.w", uniform_fan_in(patch_dim, d, rng));
    p.embed_s_b = &store.add("bb.embed_s.b", Matrix::Zero(1, d));
    p.embed_f_w = &store.add("bb.embed_f.w", uniform_fan_in(patch_dim, d, rng));
    p.embed_f_b = &store.add("bb.embed_f.b", Matrix::Zero(1, d));
    p.cls = &store.add("bb.cls", normal_init(1, d, 0.02, rng));
    p.pos = &store.add("bb.pos", normal_init(1 + 2 * tokens_per_domain, d, 0.02, rng));
    for (int i = 0; i < cfg.depth; ++i) {
        const std::string base = "bb.block" + std::to_string(i) + ".";
        BlockParams b;
        b.ln1_g = &store.add(base + "ln1.g", Matrix::Ones(1, d));
        b.ln1_b = &store.add(base + "ln1.b", Matrix::Zero(1, d));
        b.wq = &store.add(base + "wq", uniform_fan_in(d, d, rng));
        b.bq = &store.add(base + "bq", Matrix::Zero(1, d));
        b.wk = &store.add(base + "wk", uniform_fan_in(d, d, rng));
        b.bk = &store.add(base + "bk", Matrix::Zero(1, d));
        b.wv = &store.add(base + "wv", uniform_fan_in(d, d, rng));
        b.bv = &store.add(base + "bv", Matrix::Zero(1, d));
        b.wo = &store.add(base + "wo", uniform_fan_in(d, d, rng));
        b.bo = &store.add(base + "bo", Matrix::Zero(1, d));
        b.ln2_g = &store.add(base + "ln2.g", Matrix::Ones(1, d));
        b.ln2_b = &store.add(base + "ln2.b", Matrix::Zero(1, d));
        b.mlp_w1 = &store.add(base + "mlp.w1", uniform_fan_in(d, cfg.mlp_ratio * d, rng));
        b.mlp_b1 = &store.add(base + "mlp.b1", Matrix::Zero(1, cfg.mlp_ratio * d));
        b.mlp_w2 = &store.add(base + "mlp.w2", uniform_fan_in(cfg.mlp_ratio * d, d, rng));
        b.mlp_b2 = &store.add(base + "mlp.b2", Matrix::Zero(1, d));
        p.blocks.push_back(b);
    }
    p.ln_f_g = &store.add("bb.ln_f.g", Matrix::Ones(1, d));
    p.ln_f_b = &store.add("bb.ln_f.b", Matrix::Zero(1, d));
    return p;
}

std::pair<Var, Var> project_domains(Tape& tape, Var ll_pixels, Var hf_pixels,
                                    const BackboneParams& p) {
    require(ll_pixels.cols() == p.proj_s_w->value.rows(),
            "project_domains: spatial channel mismatch");
    require(hf_pixels.cols() == p.proj_f_w->value.rows(),
            "project_domains: frequency channel mismatch");
    Var fs = linear(ll_pixels, tape.param(*p.proj_s_w), tape.param(*p.proj_s_b));
    Var ff = linear(hf_pixels, tape.param(*p.proj_f_w), tape.param(*p.proj_f_b));
    return {fs, ff};
}

TokenSequence embed(Tape& tape, Var concat_pixels, const BackboneParams& p,
                    const BackboneConfig& cfg, bool training, Rng* dropout_rng) {
    const int c = cfg.proj_channels;
    require(concat_pixels.cols() == 2 * c, "embed: expected both channel groups");
    require(concat_pixels.rows() == static_cast<long>(cfg.image_size) * cfg.image_size,
            "embed: pixel count does not match image_size");
    Var fs = cols(concat_pixels, 0, c);
    Var ff = cols(concat_pixels, c, c);

    Var patches_s = patchify(fs, cfg.image_size, cfg.image_size, cfg.patch_size);
    Var patches_f = patchify(ff, cfg.image_size, cfg.image_size, cfg.patch_size);
    Var tok_s = linear(patches_s, tape.param(*p.embed_s_w), tape.param(*p.embed_s_b));
    Var tok_f = linear(patches_f, tape.param(*p.embed_f_w), tape.param(*p.embed_f_b));

    Var seq = vcat(tape.param(*p.cls), vcat(tok_s, tok_f));
    seq = add(seq, tape.param(*p.pos));
    if (training && cfg.dropout_rate > 0.0) {
        require(dropout_rng != nullptr, "embed: training dropout needs an rng");
        seq = dropout(seq, cfg.dropout_rate, *dropout_rng, true);
    }

    TokenSequence out;
    out.tokens = seq;
    out.grid_h = out.grid_w = cfg.image_size / cfg.patch_size;
    out.n_spatial = out.n_freq = out.grid_h * out.grid_w;
    return out;
}

Var encoder_block(Tape& tape, Var tokens, const BlockParams& p, int heads,
                  ad::AttentionStats* stats) {
    require(heads > 0 && tokens.cols() % heads == 0, "encoder_block: heads must divide d_model");
    Var a = layer_norm_rows(tokens, tape.param(*p.ln1_g), tape.param(*p.ln1_b));
    Var q = linear(a, tape.param(*p.wq), tape.param(*p.bq));
    Var k = linear(a, tape.param(*p.wk), tape.param(*p.bk));
    Var v = linear(a, tape.param(*p.wv), tape.param(*p.bv));
    Var att = multihead_attention(q, k, v, heads, stats);
    Var x = add(tokens, linear(att, tape.param(*p.wo), tape.param(*p.bo)));
    Var b = layer_norm_rows(x, tape.param(*p.ln2_g), tape.param(*p.ln2_b));
    Var h = gelu(linear(b, tape.param(*p.mlp_w1), tape.param(*p.mlp_b1)));
    return add(x, linear(h, tape.param(*p.mlp_w2), tape.param(*p.mlp_b2)));
}

TokenSequence backbone_forward(Tape& tape, Var ll_pixels, Var hf_pixels,
                               const BackboneParams& p, const BackboneConfig& cfg,
                               const FuseHook& fuse, bool training, Rng* dropout_rng,
                               ad::AttentionStats* stats) {
    if (cfg.insertion_layer < 0 || cfg.insertion_layer >= cfg.depth) {
        throw ConfigError("backbone_forward: insertion_layer out of range");
    }
    auto [fs, ff] = project_domains(tape, ll_pixels, hf_pixels, p);
    TokenSequence seq = embed(tape, hcat(fs, ff), p, cfg, training, dropout_rng);
    for (int i = 0; i < cfg.insertion_layer; ++i) {
        seq.tokens = encoder_block(tape, seq.tokens, p.blocks[i], cfg.heads, stats);
    }
    if (fuse) seq = fuse(tape, seq);
    for (int i = cfg.insertion_layer; i < cfg.depth; ++i) {
        seq.tokens = encoder_block(tape, seq.tokens, p.blocks[i], cfg.heads, stats);
    }
    seq.tokens = layer_norm_rows(seq.tokens, tape.param(*p.ln_f_g), tape.param(*p.ln_f_b));
    return seq;
}

}  // namespace amsf::backbone
