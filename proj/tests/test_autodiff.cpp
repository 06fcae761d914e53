#include <doctest.h>

#include "amsf/autodiff.hpp"
#include "test_support.hpp"

using namespace amsf;
using namespace amsf::ad;
using amsf_test::max_grad_rel_error;
using amsf_test::random_matrix;

namespace {

// finite-difference check of an arbitrary op composition over two inputs
double check_two_input(const std::function<Var(Tape&, Var, Var)>& build, long ra, long ca,
                       long rb, long cb, uint64_t seed) {
    Rng rng(seed);
    ParamStore store;
    Parameter& a = store.add("a", random_matrix(ra, ca, rng));
    Parameter& b = store.add("b", random_matrix(rb, cb, rng));
    return max_grad_rel_error(store, [&](Tape& t) {
        Var va = t.param(a), vb = t.param(b);
        Var out = build(t, va, vb);
        return mean_all(mul(out, out));  // quadratic pooling exercises all entries
    });
}

}  // namespace

TEST_CASE("tape backward on a scalar chain matches hand gradients") {
    ParamStore store;
    Parameter& x = store.add("x", Matrix::Constant(1, 1, 0.7));
    Tape tape;
    // f = (3x + 1)^2, df/dx = 6 (3x + 1)
    Var v = add_scalar(scale(tape.param(x), 3.0), 1.0);
    Var f = mul(v, v);
    store.zero_grads();
    tape.backward(f);
    CHECK(x.grad(0, 0) == doctest::Approx(6.0 * (3 * 0.7 + 1)).epsilon(1e-12));
}

TEST_CASE("gradients of elementwise and matmul ops") {
    CHECK(check_two_input([](Tape&, Var a, Var b) { return matmul(a, b); }, 3, 4, 4, 2, 1) < 1e-6);
    CHECK(check_two_input([](Tape&, Var a, Var b) { return add(a, b); }, 3, 4, 3, 4, 2) < 1e-6);
    CHECK(check_two_input([](Tape&, Var a, Var b) { return mul(a, b); }, 3, 4, 3, 4, 3) < 1e-6);
    CHECK(check_two_input([](Tape&, Var a, Var b) { return mul(a, b); }, 1, 1, 3, 4, 4) < 1e-6);
    CHECK(check_two_input([](Tape&, Var a, Var b) { return sub(transpose(a), b); }, 3, 4, 4, 3, 5) <
          1e-6);
    CHECK(check_two_input([](Tape&, Var a, Var b) { return add_rowvec(a, b); }, 3, 4, 1, 4, 6) <
          1e-6);
    CHECK(check_two_input([](Tape&, Var a, Var b) { return mul_rowvec(a, b); }, 3, 4, 1, 4, 7) <
          1e-6);
}

TEST_CASE("gradients of nonlinearities") {
    auto unary = [](auto op, uint64_t seed) {
        return check_two_input(
            [op](Tape&, Var a, Var b) { return op(add(a, b)); }, 3, 3, 3, 3, seed);
    };
    CHECK(unary([](Var v) { return gelu(v); }, 10) < 1e-6);
    CHECK(unary([](Var v) { return sigmoid(v); }, 11) < 1e-6);
    CHECK(unary([](Var v) { return softplus(v); }, 12) < 1e-6);
    CHECK(unary([](Var v) { return ad::exp(v); }, 13) < 1e-6);
    CHECK(unary([](Var v) { return softmax_rows(v); }, 14) < 1e-6);
    CHECK(unary([](Var v) { return l2_normalize_rows(v); }, 15) < 1e-6);
}

TEST_CASE("relu gradient away from the kink") {
    ParamStore store;
    Matrix init(2, 2);
    init << 1.0, -2.0, 0.5, -0.25;  // no zero entries
    Parameter& a = store.add("a", init);
    CHECK(max_grad_rel_error(store, [&](Tape& t) {
              return sum_all(relu(t.param(a)));
          }) < 1e-6);
}

TEST_CASE("layer_norm_rows gradient") {
    Rng rng(16);
    ParamStore store;
    Parameter& x = store.add("x", random_matrix(3, 5, rng));
    Parameter& g = store.add("g", random_matrix(1, 5, rng, 0.5));
    Parameter& b = store.add("b", random_matrix(1, 5, rng, 0.5));
    CHECK(max_grad_rel_error(store, [&](Tape& t) {
              return mean_all(mul(layer_norm_rows(t.param(x), t.param(g), t.param(b)),
                                  layer_norm_rows(t.param(x), t.param(g), t.param(b))));
          }) < 1e-5);
}

TEST_CASE("spd_solve value and gradient") {
    Rng rng(17);
    Matrix s = random_matrix(4, 4, rng);
    Matrix a_init = s * s.transpose() + 4.0 * Matrix::Identity(4, 4);
    ParamStore store;
    Parameter& a = store.add("a", a_init);
    Parameter& b = store.add("b", random_matrix(4, 2, rng));
    {
        Tape tape;
        Var y = spd_solve(tape.param(a), tape.param(b));
        CHECK((a_init * y.value() - b.value).cwiseAbs().maxCoeff() < 1e-10);
    }
    CHECK(max_grad_rel_error(store, [&](Tape& t) {
              Var y = spd_solve(t.param(a), t.param(b));
              return mean_all(mul(y, y));
          }) < 1e-5);
}

TEST_CASE("slicing and concatenation gradients") {
    CHECK(check_two_input(
              [](Tape&, Var a, Var b) { return vcat(rows(a, 1, 2), b); }, 4, 3, 2, 3, 20) < 1e-6);
    CHECK(check_two_input(
              [](Tape&, Var a, Var b) { return hcat(cols(a, 0, 2), b); }, 3, 4, 3, 2, 21) < 1e-6);
}

TEST_CASE("patchify is the documented permutation and inverts in backward") {
    Rng rng(22);
    ParamStore store;
    Parameter& px = store.add("px", random_matrix(16, 2, rng));  // 4x4 image, 2 channels
    Tape tape;
    Var tokens = patchify(tape.param(px), 4, 4, 2);
    CHECK(tokens.rows() == 4);
    CHECK(tokens.cols() == 8);
    // token 0 covers pixels (0,0),(0,1),(1,0),(1,1), channels fastest
    CHECK(tokens.value()(0, 0) == px.value(0, 0));
    CHECK(tokens.value()(0, 1) == px.value(0, 1));
    CHECK(tokens.value()(0, 2) == px.value(1, 0));
    CHECK(tokens.value()(0, 4) == px.value(4, 0));
    CHECK(max_grad_rel_error(store, [&](Tape& t) {
              Var tk = patchify(t.param(px), 4, 4, 2);
              return mean_all(mul(tk, tk));
          }) < 1e-6);
}

TEST_CASE("flatten_image uses row-major pixel order") {
    Matrix img(2, 3);
    img << 1, 2, 3, 4, 5, 6;
    Tape tape;
    Var flat = flatten_image(tape.leaf(img));
    CHECK(flat.rows() == 6);
    CHECK(flat.value()(0, 0) == 1);
    CHECK(flat.value()(2, 0) == 3);
    CHECK(flat.value()(3, 0) == 4);
}

TEST_CASE("multihead attention matches a per-head replay and its gradient") {
    Rng rng(23);
    const int t = 5, d = 8, heads = 2;
    ParamStore store;
    Parameter& q = store.add("q", random_matrix(t, d, rng));
    Parameter& k = store.add("k", random_matrix(t, d, rng));
    Parameter& v = store.add("v", random_matrix(t, d, rng));
    {
        Tape tape;
        AttentionStats stats;
        Var out = multihead_attention(tape.param(q), tape.param(k), tape.param(v), heads, &stats);
        CHECK(stats.rows_seen == t * heads);
        CHECK(stats.row_sum_min == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(stats.row_sum_max == doctest::Approx(1.0).epsilon(1e-9));
        // replay head 0 by hand
        const int dh = d / heads;
        Matrix qh = q.value.leftCols(dh), kh = k.value.leftCols(dh), vh = v.value.leftCols(dh);
        Matrix s = qh * kh.transpose() / std::sqrt(static_cast<double>(dh));
        Matrix p(t, t);
        for (int i = 0; i < t; ++i) {
            Eigen::RowVectorXd e = (s.row(i).array() - s.row(i).maxCoeff()).exp();
            p.row(i) = e / e.sum();
        }
        CHECK((out.value().leftCols(dh) - p * vh).cwiseAbs().maxCoeff() < 1e-12);
    }
    CHECK(max_grad_rel_error(store, [&](Tape& tp) {
              Var out = multihead_attention(tp.param(q), tp.param(k), tp.param(v), heads);
              return mean_all(mul(out, out));
          }) < 1e-5);
}

TEST_CASE("clamp passes gradient only inside the interval") {
    ParamStore store;
    Matrix init(1, 3);
    init << -2.0, 0.5, 3.0;
    Parameter& a = store.add("a", init);
    Tape tape;
    Var y = clamp(tape.param(a), 0.0, 1.0);
    store.zero_grads();
    tape.backward(sum_all(y));
    CHECK(a.grad(0, 0) == 0.0);
    CHECK(a.grad(0, 1) == 1.0);
    CHECK(a.grad(0, 2) == 0.0);
}

TEST_CASE("dropout is identity in eval mode and masks in training mode") {
    Rng rng(24);
    Tape tape;
    Matrix m = Matrix::Constant(10, 10, 1.0);
    Var a = tape.leaf(m);
    Var eval_out = dropout(a, 0.5, rng, false);
    CHECK(eval_out.idx == a.idx);
    Var train_out = dropout(a, 0.5, rng, true);
    int zeros = 0, doubled = 0;
    for (long i = 0; i < 10; ++i)
        for (long j = 0; j < 10; ++j) {
            if (train_out.value()(i, j) == 0.0) ++zeros;
            if (train_out.value()(i, j) == doctest::Approx(2.0)) ++doubled;
        }
    CHECK(zeros + doubled == 100);
    CHECK(zeros > 10);
}

TEST_CASE("tape refuses a second backward without reset") {
    Tape tape;
    Var a = tape.leaf(Matrix::Constant(1, 1, 2.0));
    Var b = mul(a, a);
    tape.backward(b);
    CHECK_THROWS(tape.backward(b));
    tape.reset();
    CHECK(tape.size() == 0);
}

TEST_CASE("leaf input gradients are readable") {
    Tape tape;
    Var a = tape.leaf(Matrix::Constant(2, 2, 3.0));
    Var loss = sum_all(mul(a, a));
    tape.backward(loss);
    CHECK(tape.grad(a)(0, 0) == doctest::Approx(6.0));
}
