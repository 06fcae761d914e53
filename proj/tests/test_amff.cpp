#include <doctest.h>

#include "amsf/amff.hpp"
#include "test_support.hpp"

using namespace amsf;
using namespace amsf::amff;
using ad::Tape;
using ad::Var;
using amsf_test::max_grad_rel_error;
using amsf_test::random_matrix;

namespace {

GateMlp make_mlp(ParamStore& store, const std::string& base, const Matrix& w1, const Matrix& b1,
                 const Matrix& w2, const Matrix& b2) {
    GateMlp m;
    m.w1 = &store.add(base + ".w1", w1);
    m.b1 = &store.add(base + ".b1", b1);
    m.w2 = &store.add(base + ".w2", w2);
    m.b2 = &store.add(base + ".b2", b2);
    return m;
}

// plain-double replay of the gate network
Eigen::RowVectorXd gate_oracle(const Eigen::RowVectorXd& x, const Matrix& w1, const Matrix& b1,
                               const Matrix& w2, const Matrix& b2) {
    Eigen::RowVectorXd h = (x * w1 + b1).cwiseMax(0.0);
    Eigen::RowVectorXd logits = h * w2 + b2;
    Eigen::RowVectorXd e = (logits.array() - logits.maxCoeff()).exp();
    return e / e.sum();
}

}  // namespace

TEST_CASE("directional descriptors are global means") {
    wavelet::DirectionalMaps maps;
    maps.lh = Matrix::Constant(3, 3, 5.0);
    Matrix m(2, 2);
    m << 1, 3, 5, 7;
    maps.hl = m;
    Rng rng(31);
    maps.hh = random_matrix(4, 6, rng);
    CHECK(global_average(maps.lh) == doctest::Approx(5.0));
    CHECK(global_average(maps.hl) == doctest::Approx(4.0));
    double acc = 0.0;
    for (long i = 0; i < maps.hh.rows(); ++i)
        for (long j = 0; j < maps.hh.cols(); ++j) acc += maps.hh(i, j);
    CHECK(global_average(maps.hh) == doctest::Approx(acc / 24.0).epsilon(1e-9));
    CHECK_THROWS_AS(global_average(Matrix(0, 0)), DimensionError);
}

TEST_CASE("directional gate with a zeroed final layer is uniform") {
    ParamStore store;
    GateMlp mlp = make_mlp(store, "g", Matrix::Constant(3, 2, 0.4), Matrix::Zero(1, 2),
                           Matrix::Zero(2, 3), Matrix::Zero(1, 3));
    Tape tape;
    Matrix desc(1, 3);
    desc << 7.0, -1.0, 2.0;
    Var gate = directional_gate(tape, tape.leaf(desc), mlp);
    CHECK(gate.value()(0, 0) == doctest::Approx(1.0 / 3).epsilon(1e-12));
    CHECK(gate.value()(0, 2) == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("directional gate output is a distribution for any parameters") {
    Rng rng(32);
    for (int trial = 0; trial < 20; ++trial) {
        ParamStore store;
        GateMlp mlp = make_mlp(store, "g", random_matrix(3, 16, rng), random_matrix(1, 16, rng),
                               random_matrix(16, 3, rng), random_matrix(1, 3, rng));
        Tape tape;
        Var gate = directional_gate(tape, tape.leaf(random_matrix(1, 3, rng)), mlp);
        CHECK(gate.value().sum() == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(gate.value().minCoeff() > 0.0);
        CHECK(gate.value().maxCoeff() < 1.0);
    }
}

TEST_CASE("directional gate matches a hand-rolled forward pass") {
    ParamStore store;
    Matrix w1 = Matrix::Constant(3, 2, 0.1);
    Matrix b1 = Matrix::Zero(1, 2);
    Matrix w2 = Matrix::Constant(2, 3, 0.1);
    w2(0, 1) = 0.2;  // break the symmetry so the softmax is not uniform
    w2(1, 2) = -0.3;
    Matrix b2 = Matrix::Zero(1, 3);
    GateMlp mlp = make_mlp(store, "g", w1, b1, w2, b2);
    Tape tape;
    Matrix desc(1, 3);
    desc << 1.0, 2.0, 3.0;
    Var gate = directional_gate(tape, tape.leaf(desc), mlp);
    Eigen::RowVectorXd expected = gate_oracle(desc.row(0), w1, b1, w2, b2);
    CHECK((gate.value().row(0) - expected).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("fuse_directions honors one-hot gates, convexity and a loop oracle") {
    Rng rng(33);
    Matrix rlh = random_matrix(4, 4, rng), rhl = random_matrix(4, 4, rng),
           rhh = random_matrix(4, 4, rng);
    Tape tape;
    Matrix onehot(1, 3);
    onehot << 1.0, 0.0, 0.0;
    Var fused = fuse_directions(tape, tape.leaf(onehot), tape.leaf(rlh), tape.leaf(rhl),
                                tape.leaf(rhh));
    CHECK((fused.value() - rlh).cwiseAbs().maxCoeff() < 1e-12);

    Matrix any_gate(1, 3);
    any_gate << 0.2, 0.3, 0.5;
    Var same = fuse_directions(tape, tape.leaf(any_gate), tape.leaf(rlh), tape.leaf(rlh),
                               tape.leaf(rlh));
    CHECK((same.value() - rlh).cwiseAbs().maxCoeff() < 1e-12);

    Var mixed = fuse_directions(tape, tape.leaf(any_gate), tape.leaf(rlh), tape.leaf(rhl),
                                tape.leaf(rhh));
    for (long i = 0; i < 4; ++i) {
        for (long j = 0; j < 4; ++j) {
            const double want = 0.2 * rlh(i, j) + 0.3 * rhl(i, j) + 0.5 * rhh(i, j);
            CHECK(mixed.value()(i, j) == doctest::Approx(want).epsilon(1e-9));
        }
    }
}

TEST_CASE("scale gate degenerates to uniform and to 1 for a single level") {
    ParamStore store;
    GateMlp zero3 = make_mlp(store, "s3", Matrix::Constant(3, 4, 0.2), Matrix::Zero(1, 4),
                             Matrix::Zero(4, 3), Matrix::Zero(1, 3));
    GateMlp one = make_mlp(store, "s1", Matrix::Constant(1, 4, 0.2), Matrix::Zero(1, 4),
                           Matrix::Zero(4, 1), Matrix::Zero(1, 1));
    Tape tape;
    Var u = scale_gate(tape, tape.leaf(Matrix::Constant(1, 3, 2.0)), zero3);
    CHECK(u.value()(0, 1) == doctest::Approx(1.0 / 3).epsilon(1e-12));
    Var single = scale_gate(tape, tape.leaf(Matrix::Constant(1, 1, -4.0)), one);
    CHECK(single.value()(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("scale gate matches a hand-rolled forward pass at L=3") {
    ParamStore store;
    Matrix w1(3, 2), b1 = Matrix::Zero(1, 2), w2(2, 3), b2 = Matrix::Zero(1, 3);
    w1 << 0.3, -0.2, 0.1, 0.4, -0.5, 0.2;
    w2 << 0.6, -0.1, 0.2, 0.05, 0.3, -0.4;
    GateMlp mlp = make_mlp(store, "s", w1, b1, w2, b2);
    Tape tape;
    Matrix desc(1, 3);
    desc << 1.0, 0.0, -1.0;
    Var eta = scale_gate(tape, tape.leaf(desc), mlp);
    Eigen::RowVectorXd expected = gate_oracle(desc.row(0), w1, b1, w2, b2);
    CHECK((eta.value().row(0) - expected).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("fuse_scales: one-hot, zeros and a loop oracle") {
    Rng rng(34);
    Tape tape;
    std::vector<Var> maps = {tape.leaf(random_matrix(3, 3, rng)),
                             tape.leaf(random_matrix(3, 3, rng)),
                             tape.leaf(random_matrix(3, 3, rng))};
    Matrix onehot(1, 3);
    onehot << 0.0, 1.0, 0.0;
    Var picked = fuse_scales(tape, tape.leaf(onehot), maps);
    CHECK((picked.value() - maps[1].value()).cwiseAbs().maxCoeff() < 1e-12);

    std::vector<Var> zeros = {tape.leaf(Matrix::Zero(2, 2)), tape.leaf(Matrix::Zero(2, 2))};
    Var z = fuse_scales(tape, tape.leaf(Matrix::Constant(1, 2, 0.5)), zeros);
    CHECK(z.value().cwiseAbs().maxCoeff() == 0.0);

    Matrix eta(1, 3);
    eta << 0.25, 0.5, 0.25;
    Var mixed = fuse_scales(tape, tape.leaf(eta), maps);
    for (long i = 0; i < 3; ++i)
        for (long j = 0; j < 3; ++j) {
            double want = 0.0;
            for (int l = 0; l < 3; ++l) want += eta(0, l) * maps[l].value()(i, j);
            CHECK(mixed.value()(i, j) == doctest::Approx(want).epsilon(1e-9));
        }
}

TEST_CASE("amff_forward on a constant image has an all-zero high channel") {
    AmffConfig cfg;
    cfg.dwt_levels = 2;
    ParamStore store;
    Rng rng(35);
    AmffParams params = init_amff_params(store, cfg, rng);
    Tape tape;
    Matrix img = Matrix::Constant(16, 16, 0.75);
    AmffOutput out = amff_forward(tape, img, cfg, params);
    CHECK(out.high.value().cwiseAbs().maxCoeff() < 1e-12);
    CHECK((out.low.value() - img).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("amff_forward with a forced one-hot gate reproduces the LH back-projection") {
    AmffConfig cfg;
    cfg.dwt_levels = 1;
    ParamStore store;
    Rng rng(36);
    AmffParams params = init_amff_params(store, cfg, rng);
    params.directional[0].w2->value.setZero();
    params.directional[0].b2->value << 1000.0, 0.0, 0.0;  // softmax saturates to (1,0,0)
    Tape tape;
    Matrix img = random_matrix(16, 16, rng);
    AmffOutput out = amff_forward(tape, img, cfg, params);
    wavelet::SubbandPyramid pyr = wavelet::dwt_cascade(img, 1);
    Matrix expected = wavelet::idwt_single_band(pyr.coeffs[0].lh, wavelet::Band::LH, 1, 16, 16);
    CHECK((out.high.value() - expected).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("amff_forward gate invariants and determinism on a random image") {
    AmffConfig cfg;
    ParamStore store;
    Rng rng(37);
    AmffParams params = init_amff_params(store, cfg, rng);
    Matrix img = random_matrix(32, 32, rng);
    GateTrace trace;
    Tape tape;
    AmffOutput out1 = amff_forward(tape, img, cfg, params, &trace);
    REQUIRE(trace.directional.size() == 3);
    for (const auto& g : trace.directional) {
        CHECK(g.sum() == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(g.minCoeff() >= 0.0);
    }
    CHECK(trace.scale.sum() == doctest::Approx(1.0).epsilon(1e-9));
    Tape tape2;
    AmffOutput out2 = amff_forward(tape2, img, cfg, params);
    CHECK((out1.high.value() - out2.high.value()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("uniform-gate fusion is invariant to swapping LH and HL") {
    ParamStore store;
    GateMlp zero = make_mlp(store, "z", Matrix::Zero(3, 2), Matrix::Zero(1, 2),
                            Matrix::Zero(2, 3), Matrix::Zero(1, 3));
    Rng rng(38);
    Matrix rlh = random_matrix(4, 4, rng), rhl = random_matrix(4, 4, rng),
           rhh = random_matrix(4, 4, rng);
    Tape tape;
    Matrix desc(1, 3);
    desc << rlh.mean(), rhl.mean(), rhh.mean();
    Var g1 = directional_gate(tape, tape.leaf(desc), zero);
    Var fused = fuse_directions(tape, g1, tape.leaf(rlh), tape.leaf(rhl), tape.leaf(rhh));
    Matrix swapped_desc(1, 3);
    swapped_desc << rhl.mean(), rlh.mean(), rhh.mean();
    Var g2 = directional_gate(tape, tape.leaf(swapped_desc), zero);
    Var fused_swapped =
        fuse_directions(tape, g2, tape.leaf(rhl), tape.leaf(rlh), tape.leaf(rhh));
    CHECK((fused.value() - fused_swapped.value()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("gating parameters pass a finite-difference check through amff_forward") {
    AmffConfig cfg;
    cfg.dwt_levels = 2;
    cfg.gate_hidden_width = 4;
    ParamStore store;
    Rng rng(39);
    AmffParams params = init_amff_params(store, cfg, rng);
    Matrix img = random_matrix(16, 16, rng);
    const double err = max_grad_rel_error(store, [&](Tape& t) {
        AmffOutput out = amff_forward(t, img, cfg, params);
        return add(sum_all(out.high), sum_all(out.low));
    });
    CHECK(err < 1e-4);
}

TEST_CASE("non-adaptive mode freezes gates at uniform") {
    AmffConfig cfg;
    cfg.adaptive = false;
    ParamStore store;
    Rng rng(40);
    AmffParams params = init_amff_params(store, cfg, rng);
    Matrix img = random_matrix(32, 32, rng);
    GateTrace trace;
    Tape tape;
    amff_forward(tape, img, cfg, params, &trace);
    for (const auto& g : trace.directional) {
        CHECK(g.maxCoeff() == doctest::Approx(1.0 / 3).epsilon(1e-12));
    }
    CHECK(trace.scale.maxCoeff() == doctest::Approx(1.0 / 3).epsilon(1e-12));
}
