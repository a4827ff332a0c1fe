#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mcl/tape.hpp"
#include "test_util.hpp"

using namespace mcl;

TEST_CASE("record_and_eval: square, relu, softplus values") {
    auto square = [](Tape& t, const std::vector<Var>& in) { return t.mul(in[0], in[0]); };
    Recorded r = record_and_eval(square, {Mat::scalar(3.0)});
    CHECK(r.value.a[0] == doctest::Approx(9.0));
    // one leaf plus exactly one mul node
    CHECK(r.tape->nodes.size() == 2);
    CHECK(r.tape->nodes[1].op == Op::Mul);

    auto relu = [](Tape& t, const std::vector<Var>& in) { return t.sum_all(t.relu(in[0])); };
    CHECK(record_and_eval(relu, {Mat::scalar(-2.0)}).value.a[0] == 0.0);

    auto sp = [](Tape& t, const std::vector<Var>& in) { return t.sum_all(t.softplus(in[0])); };
    CHECK(record_and_eval(sp, {Mat::scalar(0.0)}).value.a[0] == doctest::Approx(std::log(2.0)));
}

TEST_CASE("record_and_eval rejects non-finite inputs") {
    auto id = [](Tape& t, const std::vector<Var>& in) { return t.sum_all(in[0]); };
    CHECK_THROWS(record_and_eval(id, {Mat::scalar(std::nan(""))}));
}

TEST_CASE("backward: power rule, product rule, softplus") {
    auto square = [](Tape& t, const std::vector<Var>& in) { return t.mul(in[0], in[0]); };
    Recorded r = record_and_eval(square, {Mat::scalar(3.0)});
    r.tape->backward(r.root);
    CHECK(r.tape->adjoint(r.inputs[0])[0] == doctest::Approx(6.0));

    auto prod = [](Tape& t, const std::vector<Var>& in) { return t.mul(in[0], in[1]); };
    Recorded r2 = record_and_eval(prod, {Mat::scalar(2.0), Mat::scalar(5.0)});
    r2.tape->backward(r2.root);
    CHECK(r2.tape->adjoint(r2.inputs[0])[0] == doctest::Approx(5.0));
    CHECK(r2.tape->adjoint(r2.inputs[1])[0] == doctest::Approx(2.0));

    auto sp_sum = [](Tape& t, const std::vector<Var>& in) { return t.sum_all(t.softplus(in[0])); };
    Recorded r3 = record_and_eval(sp_sum, {Mat::row({0.0, 0.0})});
    r3.tape->backward(r3.root);
    CHECK(r3.tape->adjoint(r3.inputs[0])[0] == doctest::Approx(0.5));
    CHECK(r3.tape->adjoint(r3.inputs[0])[1] == doctest::Approx(0.5));
}

TEST_CASE("backward requires a scalar root") {
    Tape t;
    Var x = t.param(Mat::row({1.0, 2.0}));
    Var y = t.relu(x);
    CHECK_THROWS(t.backward(y));
}

TEST_CASE("unregistered primitive fails fast with its name") {
    Tape t;
    Var x = t.param(Mat::scalar(1.0));
    Var y = t.sum_all(x);
    t.nodes[y.id].op = static_cast<Op>(999);
    bool threw = false;
    try {
        t.backward(y);
    } catch (const std::runtime_error& e) {
        threw = true;
        CHECK(std::string(e.what()).find("unregistered primitive") != std::string::npos);
    }
    CHECK(threw);
}

TEST_CASE("gradcheck: quadratic exact, MLP-like, bounded projection") {
    auto quad = [](Tape& t, const std::vector<Var>& in) {
        return t.sum_all(t.add(t.mul(in[0], in[0]), t.mul_scalar(in[0], 3.0)));
    };
    Rng rng(11);
    GradCheckReport rep = gradcheck(quad, {test_util::random_mat(2, 3, rng)});
    CHECK(rep.max_rel_err < 1e-9);

    // 3 -> 4 -> 1 network with relu hidden layer
    auto mlp = [](Tape& t, const std::vector<Var>& in) {
        Var h = t.relu(t.add(t.matmul(in[0], in[1]), t.bcast_row(in[2], 5)));
        return t.sum_all(t.matmul(h, in[3]));
    };
    Rng rng2(12);
    const Mat X = test_util::random_mat(5, 3, rng2);
    const Mat W1 = test_util::random_mat(3, 4, rng2);
    const Mat b1 = test_util::random_mat(1, 4, rng2);
    const Mat W2 = test_util::random_mat(4, 1, rng2);
    GradCheckReport rep2 = gradcheck(mlp, {X, W1, b1, W2});
    CHECK(rep2.max_rel_err < 1e-6);

    // bounded projection with a strict active set, away from switch points
    auto proj = [](Tape& t, const std::vector<Var>& in) {
        Var b = t.clearing_project(in[0], {0.5, 0.5, 1.0}, 0.7, {0.0, 0.0, 0.0});
        return t.sum_all(t.mul(b, b));
    };
    GradCheckReport rep3 = gradcheck(proj, {Mat::row({-0.8, 0.9, 0.4})});
    CHECK(rep3.max_rel_err < 1e-6);
}

TEST_CASE("gradcheck throws a structured failure when asked") {
    // relu at the kink: ad says 0, fd says 1/2
    auto f = [](Tape& t, const std::vector<Var>& in) { return t.sum_all(t.relu(in[0])); };
    CHECK_THROWS_WITH_AS(gradcheck(f, {Mat::scalar(0.0)}, 1e-6, 1e-8, true),
                         doctest::Contains("gradcheck failed"), std::runtime_error);
}

TEST_CASE("primitive vjp sweep against finite differences") {
    Rng rng(99);
    auto check = [&](const Program& p, const std::vector<Mat>& in, double tol = 1e-6) {
        GradCheckReport rep = gradcheck(p, in, 1e-6, tol);
        CAPTURE(rep.describe());
        CHECK(rep.pass);
    };

    const Mat A = test_util::random_mat(3, 4, rng);
    Mat B = test_util::random_mat(3, 4, rng);
    // keep divisions and kinks well-conditioned
    for (double& v : B.a) v = 1.5 + std::fabs(v);
    Mat P = test_util::random_mat(3, 4, rng);
    for (double& v : P.a) v = 0.5 + std::fabs(v);

    check([](Tape& t, const std::vector<Var>& in) { return t.sum_all(t.add(in[0], in[1])); }, {A, B});
    check([](Tape& t, const std::vector<Var>& in) { return t.sum_all(t.sub(in[0], in[1])); }, {A, B});
    check([](Tape& t, const std::vector<Var>& in) { return t.sum_all(t.mul(in[0], in[1])); }, {A, B});
    check([](Tape& t, const std::vector<Var>& in) { return t.sum_all(t.div(in[0], in[1])); }, {A, B});
    check([](Tape& t, const std::vector<Var>& in) { return t.sum_all(t.exp(in[0])); }, {A});
    check([](Tape& t, const std::vector<Var>& in) { return t.sum_all(t.log(in[0])); }, {P});
    check([](Tape& t, const std::vector<Var>& in) { return t.sum_all(t.sqrt(in[0])); }, {P});
    check([](Tape& t, const std::vector<Var>& in) { return t.sum_all(t.pow_scalar(in[0], -2.5)); }, {P});
    check([](Tape& t, const std::vector<Var>& in) { return t.sum_all(t.softplus(in[0])); }, {A});
    check([](Tape& t, const std::vector<Var>& in) { return t.sum_all(t.relu(in[0])); }, {P});
    check([](Tape& t, const std::vector<Var>& in) { return t.sum_all(t.max_elem(in[0], in[1])); }, {A, B});
    check([](Tape& t, const std::vector<Var>& in) { return t.sum_all(t.max_scalar(in[0], 0.1)); }, {P});
    check([](Tape& t, const std::vector<Var>& in) { return t.sum_all(t.sum_cols(in[0])); }, {A});
    check([](Tape& t, const std::vector<Var>& in) { return t.sum_all(t.bcast_col(t.sum_cols(in[0]), 5)); }, {A});
    check([](Tape& t, const std::vector<Var>& in) { return t.sum_all(t.slice_cols(in[0], 1, 2)); }, {A});
    check([](Tape& t, const std::vector<Var>& in) {
        return t.sum_all(t.mul(t.concat_cols({in[0], in[1]}), t.concat_cols({in[1], in[0]})));
    }, {A, B});
    check([](Tape& t, const std::vector<Var>& in) {
        return t.sum_all(t.mul(t.clearing_simple(in[0], {1.0, 2.0, 0.5, 1.0}, 0.3), in[1]));
    }, {A, B});
    check([](Tape& t, const std::vector<Var>& in) {
        Var h = t.matmul(in[0], in[1]);
        return t.sum_all(t.mul(h, h));
    }, {A, test_util::random_mat(4, 3, rng)});
}

TEST_CASE("linearity of the gradient") {
    Rng rng(5);
    const Mat X = test_util::random_mat(2, 3, rng);
    const double a = 1.7, b = -0.4;

    auto f = [](Tape& t, const std::vector<Var>& in) { return t.sum_all(t.mul(in[0], in[0])); };
    auto g = [](Tape& t, const std::vector<Var>& in) { return t.sum_all(t.exp(in[0])); };
    auto combo = [&](Tape& t, const std::vector<Var>& in) {
        return t.add(t.mul_scalar(f(t, in), a), t.mul_scalar(g(t, in), b));
    };

    Recorded rf = record_and_eval(f, {X});
    rf.tape->backward(rf.root);
    Recorded rg = record_and_eval(g, {X});
    rg.tape->backward(rg.root);
    Recorded rc = record_and_eval(combo, {X});
    rc.tape->backward(rc.root);

    for (size_t i = 0; i < X.a.size(); ++i) {
        const double want = a * rf.tape->adjoint(rf.inputs[0])[i] + b * rg.tape->adjoint(rg.inputs[0])[i];
        CHECK(rc.tape->adjoint(rc.inputs[0])[i] == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("determinism: identical tapes give bitwise-identical gradients") {
    Rng rng(21);
    const Mat X = test_util::random_mat(4, 6, rng);
    auto f = [](Tape& t, const std::vector<Var>& in) {
        Var h = t.softplus(t.mul_scalar(in[0], 1.3));
        return t.sum_all(t.mul(h, t.exp(t.mul_scalar(in[0], -0.5))));
    };
    Recorded r1 = record_and_eval(f, {X});
    r1.tape->backward(r1.root);
    Recorded r2 = record_and_eval(f, {X});
    r2.tape->backward(r2.root);
    const auto& g1 = r1.tape->adjoint(r1.inputs[0]);
    const auto& g2 = r2.tape->adjoint(r2.inputs[0]);
    for (size_t i = 0; i < g1.size(); ++i) CHECK(g1[i] == g2[i]);
}

TEST_CASE("adjoints of unused nodes stay zero") {
    Tape t;
    Var x = t.param(Mat::scalar(2.0));
    Var unused = t.exp(x);
    Var y = t.sum_all(t.mul(x, x));
    t.backward(y);
    CHECK(t.adjoint(unused)[0] == 0.0);
    CHECK(t.adjoint(x)[0] == doctest::Approx(4.0));
}
