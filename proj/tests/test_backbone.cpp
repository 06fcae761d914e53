#include <doctest.h>

#include "amsf/acasff.hpp"
#include "amsf/backbone.hpp"
#include "test_support.hpp"

using namespace amsf;
using namespace amsf::backbone;
using ad::Tape;
using ad::Var;
using amsf_test::max_grad_rel_error;
using amsf_test::random_matrix;

namespace {

BackboneConfig tiny_config() {
    BackboneConfig cfg;
    cfg.d_model = 8;
    cfg.depth = 2;
    cfg.heads = 2;
    cfg.patch_size = 4;
    cfg.image_size = 8;
    cfg.proj_channels = 1;
    cfg.insertion_layer = 1;
    cfg.mlp_ratio = 2;
    return cfg;
}

void zero_block(BlockParams& b) {
    for (Parameter* p : {b.wq, b.bq, b.wk, b.bk, b.wv, b.bv, b.wo, b.bo, b.mlp_w1, b.mlp_b1,
                         b.mlp_w2, b.mlp_b2}) {
        p->value.setZero();
    }
}

}  // namespace

TEST_CASE("project_domains with identity weights is the identity") {
    BackboneConfig cfg = tiny_config();
    ParamStore store;
    Rng rng(41);
    BackboneParams p = init_backbone_params(store, cfg, 1, 1, rng);
    p.proj_s_w->value = Matrix::Identity(1, 1);
    p.proj_s_b->value.setZero();
    p.proj_f_w->value.setZero();
    Tape tape;
    Matrix ll = random_matrix(64, 1, rng), hf = random_matrix(64, 1, rng);
    auto [fs, ff] = project_domains(tape, tape.leaf(ll), tape.leaf(hf), p);
    CHECK((fs.value() - ll).cwiseAbs().maxCoeff() < 1e-15);
    CHECK(ff.value().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("project_domains matches a per-pixel matrix multiply") {
    BackboneConfig cfg = tiny_config();
    cfg.proj_channels = 2;
    cfg.image_size = 2;
    cfg.patch_size = 1;
    ParamStore store;
    Rng rng(42);
    BackboneParams p = init_backbone_params(store, cfg, 1, 1, rng);
    Tape tape;
    Matrix ll = random_matrix(4, 1, rng);
    auto [fs, ff] = project_domains(tape, tape.leaf(ll), tape.leaf(random_matrix(4, 1, rng)), p);
    for (int px = 0; px < 4; ++px) {
        Eigen::RowVectorXd want = ll.row(px) * p.proj_s_w->value + p.proj_s_b->value.row(0);
        CHECK((fs.value().row(px) - want).cwiseAbs().maxCoeff() < 1e-6);
    }
}

TEST_CASE("embed produces the documented token counts and adds positions exactly") {
    BackboneConfig cfg;
    cfg.d_model = 16;
    cfg.depth = 1;
    cfg.heads = 2;
    cfg.patch_size = 8;
    cfg.image_size = 32;
    cfg.proj_channels = 2;
    cfg.insertion_layer = 0;
    ParamStore store;
    Rng rng(43);
    BackboneParams p = init_backbone_params(store, cfg, 1, 1, rng);
    Tape tape;
    Var pixels = tape.leaf(random_matrix(32 * 32, 4, rng));
    TokenSequence seq = embed(tape, pixels, p, cfg, false, nullptr);
    CHECK(seq.n_spatial == 16);
    CHECK(seq.n_freq == 16);
    CHECK(seq.total() == 33);
    CHECK(seq.tokens.rows() == 33);

    // eval mode: tokens are exactly patch embeddings plus positions
    p.pos->value.setZero();
    Tape tape2;
    Var px2 = tape2.leaf(pixels.value());
    TokenSequence no_pos = embed(tape2, px2, p, cfg, false, nullptr);
    p.pos->value = random_matrix(33, 16, rng, 0.1);
    Tape tape3;
    TokenSequence with_pos = embed(tape3, tape3.leaf(pixels.value()), p, cfg, false, nullptr);
    CHECK((with_pos.tokens.value() - (no_pos.tokens.value() + p.pos->value)).cwiseAbs().maxCoeff() <
          1e-12);
}

TEST_CASE("embed of a zero image is the embedding bias plus CLS") {
    BackboneConfig cfg = tiny_config();
    ParamStore store;
    Rng rng(44);
    BackboneParams p = init_backbone_params(store, cfg, 1, 1, rng);
    p.pos->value.setZero();
    p.embed_s_b->value = random_matrix(1, cfg.d_model, rng);
    p.embed_f_b->value = random_matrix(1, cfg.d_model, rng);
    Tape tape;
    TokenSequence seq = embed(tape, tape.leaf(Matrix::Zero(64, 2)), p, cfg, false, nullptr);
    CHECK((seq.tokens.value().row(0) - p.cls->value.row(0)).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((seq.tokens.value().row(1) - p.embed_s_b->value.row(0)).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((seq.tokens.value().row(1 + seq.n_spatial) - p.embed_f_b->value.row(0))
              .cwiseAbs()
              .maxCoeff() < 1e-15);
}

TEST_CASE("embed rejects an indivisible patch grid") {
    BackboneConfig cfg = tiny_config();
    cfg.patch_size = 3;
    ParamStore store;
    Rng rng(45);
    CHECK_THROWS_AS(init_backbone_params(store, cfg, 1, 1, rng), ConfigError);
}

TEST_CASE("encoder block with zero weights is the identity") {
    BackboneConfig cfg = tiny_config();
    ParamStore store;
    Rng rng(46);
    BackboneParams p = init_backbone_params(store, cfg, 1, 1, rng);
    zero_block(p.blocks[0]);
    Tape tape;
    Matrix x = random_matrix(5, cfg.d_model, rng);
    Var out = encoder_block(tape, tape.leaf(x), p.blocks[0], cfg.heads);
    CHECK((out.value() - x).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("encoder block on a single token matches a hand oracle") {
    BackboneConfig cfg = tiny_config();
    cfg.heads = 1;
    ParamStore store;
    Rng rng(47);
    BackboneParams p = init_backbone_params(store, cfg, 1, 1, rng);
    const BlockParams& b = p.blocks[0];
    Matrix x = random_matrix(1, cfg.d_model, rng);
    Tape tape;
    Var out = encoder_block(tape, tape.leaf(x), b, 1);

    auto layer_norm = [](const Matrix& v, const Matrix& g, const Matrix& bias) {
        const double mu = v.mean();
        const double var = (v.array() - mu).square().mean();
        Matrix xhat = (v.array() - mu) / std::sqrt(var + 1e-6);
        return ((xhat.array().rowwise() * g.row(0).array()).rowwise() + bias.row(0).array())
            .matrix();
    };
    auto gelu_fn = [](const Matrix& v) {
        return v.unaryExpr([](double t) { return 0.5 * t * (1.0 + std::erf(t * M_SQRT1_2)); });
    };
    Matrix a = layer_norm(x, b.ln1_g->value, b.ln1_b->value);
    Matrix v = a * b.wv->value + b.bv->value;  // single row: attention weight is 1
    Matrix x1 = x + (v * b.wo->value + b.bo->value);
    Matrix c = layer_norm(x1, b.ln2_g->value, b.ln2_b->value);
    Matrix h = gelu_fn((c * b.mlp_w1->value + b.mlp_b1->value).eval());
    Matrix want = x1 + (h * b.mlp_w2->value + b.mlp_b2->value);
    CHECK((out.value() - want).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("encoder block preserves shape and rejects bad head counts") {
    BackboneConfig cfg = tiny_config();
    ParamStore store;
    Rng rng(48);
    BackboneParams p = init_backbone_params(store, cfg, 1, 1, rng);
    Tape tape;
    Matrix x = random_matrix(7, cfg.d_model, rng);
    Var out = encoder_block(tape, tape.leaf(x), p.blocks[0], cfg.heads);
    CHECK(out.rows() == 7);
    CHECK(out.cols() == cfg.d_model);
    CHECK_THROWS_AS(encoder_block(tape, tape.leaf(x), p.blocks[0], 3), DimensionError);
}

TEST_CASE("backbone_forward runs blocks around the fusion hook") {
    BackboneConfig cfg = tiny_config();  // depth 2, insertion 1
    ParamStore store;
    Rng rng(49);
    BackboneParams p = init_backbone_params(store, cfg, 1, 1, rng);
    Tape tape;
    Matrix ll = random_matrix(64, 1, rng), hf = random_matrix(64, 1, rng);
    Matrix seen_at_hook;
    FuseHook hook = [&](Tape& t, const TokenSequence& seq) {
        seen_at_hook = seq.tokens.value();
        return seq;
    };
    TokenSequence out = backbone_forward(tape, tape.leaf(ll), tape.leaf(hf), p, cfg, hook,
                                         false, nullptr);
    // replay embedding and exactly one block up to the hook
    Tape replay;
    auto [fs, ff] = project_domains(replay, replay.leaf(ll), replay.leaf(hf), p);
    TokenSequence seq = embed(replay, hcat(fs, ff), p, cfg, false, nullptr);
    Var one_block = encoder_block(replay, seq.tokens, p.blocks[0], cfg.heads);
    CHECK((seen_at_hook - one_block.value()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(out.total() == 9);  // 1 + 4 + 4 tokens survive the whole stack
}

TEST_CASE("insertion at the last index with an identity-acting fusion equals the plain encoder") {
    BackboneConfig cfg = tiny_config();
    cfg.depth = 2;
    cfg.insertion_layer = 1;
    ParamStore store;
    Rng rng(50);
    BackboneParams p = init_backbone_params(store, cfg, 1, 1, rng);
    // identical domain branches: shared projections, embeddings and positions
    p.proj_f_w->value = p.proj_s_w->value;
    p.proj_f_b->value = p.proj_s_b->value;
    p.embed_f_w->value = p.embed_s_w->value;
    p.embed_f_b->value = p.embed_s_b->value;
    const int t = 4;
    p.pos->value.middleRows(1 + t, t) = p.pos->value.middleRows(1, t);

    acasff::AcasffConfig fcfg;
    ParamStore fstore;
    acasff::AcasffParams fp = acasff::init_acasff_params(fstore, cfg.d_model, fcfg, rng);
    fp.wv_f->value.setZero();
    fp.wv_s->value.setZero();
    fp.mlp_w2->value.setZero();
    fp.mlp_b2->value.setZero();

    Matrix pixels = random_matrix(64, 1, rng);
    Tape tape;
    FuseHook hook = [&](Tape& tp, const TokenSequence& seq) {
        return acasff::fuse_block(tp, seq, fp, fcfg, cfg.heads);
    };
    TokenSequence fused = backbone_forward(tape, tape.leaf(pixels), tape.leaf(pixels), p, cfg,
                                           hook, false, nullptr);
    Tape plain_tape;
    TokenSequence plain = backbone_forward(plain_tape, plain_tape.leaf(pixels),
                                           plain_tape.leaf(pixels), p, cfg, {}, false, nullptr);
    CHECK((fused.tokens.value() - plain.tokens.value()).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("backbone_forward validates the insertion index") {
    BackboneConfig cfg = tiny_config();
    cfg.insertion_layer = 2;  // == depth
    ParamStore store;
    Rng rng(51);
    CHECK_THROWS_AS(init_backbone_params(store, cfg, 1, 1, rng), ConfigError);
}

TEST_CASE("eval-mode forward passes agree bitwise") {
    BackboneConfig cfg = tiny_config();
    ParamStore store;
    Rng rng(52);
    BackboneParams p = init_backbone_params(store, cfg, 1, 1, rng);
    Matrix ll = random_matrix(64, 1, rng), hf = random_matrix(64, 1, rng);
    Tape t1, t2;
    TokenSequence a = backbone_forward(t1, t1.leaf(ll), t1.leaf(hf), p, cfg, {}, false, nullptr);
    TokenSequence b = backbone_forward(t2, t2.leaf(ll), t2.leaf(hf), p, cfg, {}, false, nullptr);
    CHECK((a.tokens.value() - b.tokens.value()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("depth-1 d_model-8 backbone passes a finite-difference check") {
    BackboneConfig cfg;
    cfg.d_model = 8;
    cfg.depth = 1;
    cfg.heads = 2;
    cfg.patch_size = 4;
    cfg.image_size = 8;
    cfg.proj_channels = 1;
    cfg.insertion_layer = 0;
    cfg.mlp_ratio = 2;
    ParamStore store;
    Rng rng(53);
    BackboneParams p = init_backbone_params(store, cfg, 1, 1, rng);
    Matrix ll = random_matrix(64, 1, rng), hf = random_matrix(64, 1, rng);
    const double err = max_grad_rel_error(store, [&](Tape& t) {
        TokenSequence seq = backbone_forward(t, t.leaf(ll), t.leaf(hf), p, cfg, {}, false,
                                             nullptr);
        return mean_all(mul(seq.tokens, seq.tokens));
    });
    CHECK(err < 1e-4);
}
