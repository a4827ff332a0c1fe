#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mcl/nn.hpp"
#include "test_util.hpp"

using namespace mcl;
using nn::Act;
using nn::Head;

namespace {
std::vector<Head> simple_heads(int out) { return {{"all", out, Act::Identity}}; }

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}
} // namespace

TEST_CASE("parameter counts for the shipped architectures") {
    // 21/400/400/41
    nn::Mlp a = nn::init_mlp({21, 400, 400, 41}, simple_heads(41), 1);
    CHECK(a.param_count() == 21u * 400 + 400 + 400u * 400 + 400 + 400u * 41 + 41);
    CHECK(a.param_count() == 185641u);
    // 161/400/400/158
    nn::Mlp b = nn::init_mlp({161, 400, 400, 158}, simple_heads(158), 1);
    CHECK(b.param_count() == 161u * 400 + 400 + 400u * 400 + 400 + 400u * 158 + 158);
    CHECK(b.param_count() == 288558u);
}

TEST_CASE("init is reproducible from the seed and head widths are validated") {
    nn::Mlp a = nn::init_mlp({2, 3}, simple_heads(3), 42);
    nn::Mlp b = nn::init_mlp({2, 3}, simple_heads(3), 42);
    CHECK(a.theta == b.theta);
    nn::Mlp c = nn::init_mlp({2, 3}, simple_heads(3), 43);
    CHECK(a.theta != c.theta);

    bool threw = false;
    try {
        nn::init_mlp({2, 3}, simple_heads(4), 0);
    } catch (const std::invalid_argument& e) {
        threw = true;
        const std::string msg = e.what();
        CHECK(msg.find("4") != std::string::npos);
        CHECK(msg.find("3") != std::string::npos);
    }
    CHECK(threw);
}

TEST_CASE("forward: softplus heads are positive; zero params give ln 2") {
    const std::vector<Head> heads = {{"pol", 2, Act::Identity}, {"price", 2, Act::Softplus}};
    nn::Mlp mlp = nn::init_mlp({3, 4, 4}, heads, 7);
    std::fill(mlp.theta.begin(), mlp.theta.end(), 0.0);
    Rng rng(1);
    const Mat X = test_util::random_mat(5, 3, rng);
    const Mat out = nn::forward_eval(mlp, X);
    CHECK(out.rows == 5);
    CHECK(out.cols == 4);
    for (int r = 0; r < 5; ++r) {
        CHECK(out(r, 0) == 0.0);
        CHECK(out(r, 2) == doctest::Approx(std::log(2.0)));
        CHECK(out(r, 3) == doctest::Approx(std::log(2.0)));
    }

    // positivity for random parameters
    nn::Mlp m2 = nn::init_mlp({3, 8, 4}, heads, 9);
    const Mat out2 = nn::forward_eval(m2, test_util::random_mat(64, 3, rng, 2.0));
    for (int r = 0; r < 64; ++r) {
        CHECK(out2(r, 2) > 0.0);
        CHECK(out2(r, 3) > 0.0);
    }

    CHECK_THROWS(nn::forward_eval(m2, Mat(4, 7)));
}

TEST_CASE("tape forward equals eval forward") {
    const std::vector<Head> heads = {{"pol", 3, Act::Identity}, {"price", 1, Act::Softplus}};
    nn::Mlp mlp = nn::init_mlp({5, 16, 4}, heads, 3);
    Rng rng(2);
    const Mat X = test_util::random_mat(11, 5, rng);
    const Mat want = nn::forward_eval(mlp, X);

    Tape t;
    const nn::TapeNet net = nn::make_tape_net(t, mlp);
    const Var out = nn::forward_tape(t, net, t.constant(X));
    const Mat got = t.value_mat(out);
    CHECK(test_util::max_abs_diff(want.a, got.a) == 0.0);
}

TEST_CASE("zero_nans replaces NaN only") {
    std::vector<double> g{1.0, std::nan(""), -2.0};
    nn::zero_nans(g);
    CHECK(g[0] == 1.0);
    CHECK(g[1] == 0.0);
    CHECK(g[2] == -2.0);

    std::vector<double> fine{0.5, -0.25, std::numeric_limits<double>::infinity()};
    nn::zero_nans(fine);
    CHECK(fine[0] == 0.5);
    CHECK(fine[1] == -0.25);
    CHECK(std::isinf(fine[2]));

    std::vector<double> all(4, std::nan(""));
    nn::zero_nans(all);
    for (double v : all) CHECK(v == 0.0);
}

TEST_CASE("adam: first step is ~ -lr sign(g); zero gradient is a fixed point") {
    std::vector<double> theta{1.0, -2.0, 0.5};
    nn::AdamState st = nn::make_adam(3, 1e-3);
    std::vector<double> g{0.3, -4.0, 1e-6};
    std::vector<double> before = theta;
    nn::adam_step(st, theta, g);
    CHECK(st.step == 1);
    for (int i = 0; i < 3; ++i) {
        // bias correction collapses on step one: update = -lr g/(|g| + eps)
        const double update = theta[i] - before[i];
        const double expect = -1e-3 * g[i] / (std::fabs(g[i]) + st.eps);
        CHECK(update == doctest::Approx(expect).epsilon(1e-9));
    }

    std::vector<double> zero(3, 0.0);
    std::vector<double> frozen = theta;
    nn::adam_step(st, theta, zero);
    // m decays toward zero but the update direction is zero-gradient driven
    for (int i = 0; i < 3; ++i) CHECK(theta[i] != frozen[i]); // momentum carries one step

    nn::AdamState st2 = nn::make_adam(3, 1e-3);
    std::vector<double> theta2{1.0, 2.0, 3.0};
    nn::adam_step(st2, theta2, zero);
    CHECK(theta2[0] == 1.0);
    CHECK(theta2[1] == 2.0);
    CHECK(theta2[2] == 3.0);

    // determinism
    nn::AdamState sa = nn::make_adam(3, 1e-3), sb = nn::make_adam(3, 1e-3);
    std::vector<double> ta{1.0, 1.0, 1.0}, tb{1.0, 1.0, 1.0};
    nn::adam_step(sa, ta, g);
    nn::adam_step(sb, tb, g);
    CHECK(ta == tb);
}

TEST_CASE("reset_adam zeroes moments, keeps hyperparameters, is idempotent") {
    nn::AdamState st = nn::make_adam(2, 5e-4);
    std::vector<double> theta{1.0, 1.0};
    nn::adam_step(st, theta, {1.0, -1.0});
    CHECK(st.step == 1);
    nn::reset_adam(st);
    CHECK(st.step == 0);
    CHECK(st.m == std::vector<double>{0.0, 0.0});
    CHECK(st.v == std::vector<double>{0.0, 0.0});
    CHECK(st.lr == 5e-4);
    nn::AdamState twice = st;
    nn::reset_adam(twice);
    CHECK(twice.m == st.m);
    CHECK(twice.step == st.step);
}

TEST_CASE("checkpoint round trip is bitwise; corruption and mismatch are caught") {
    const std::vector<Head> heads = {{"pol", 2, Act::Identity}, {"price", 1, Act::Softplus}};
    nn::Mlp mlp = nn::init_mlp({4, 6, 3}, heads, 11);
    nn::AdamState adam = nn::make_adam(mlp.param_count(), 1e-4);
    std::vector<double> g(mlp.param_count(), 0.25);
    nn::adam_step(adam, mlp.theta, g);

    const std::string path = temp_path("mcl_ckpt_test.bin");
    nn::save_checkpoint(mlp, adam, R"({"label":"unit"})", path);
    const nn::Checkpoint ck = nn::load_checkpoint(path);
    CHECK(ck.mlp.theta == mlp.theta);
    CHECK(ck.mlp.dims == mlp.dims);
    CHECK(ck.mlp.seed == mlp.seed);
    CHECK(ck.adam.m == adam.m);
    CHECK(ck.adam.v == adam.v);
    CHECK(ck.adam.step == adam.step);
    CHECK(ck.stage_json.find("unit") != std::string::npos);

    // truncation reports a byte offset
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    const std::string trunc_path = temp_path("mcl_ckpt_trunc.bin");
    std::ofstream out(trunc_path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    out.close();
    bool threw = false;
    try {
        nn::load_checkpoint(trunc_path);
    } catch (const std::runtime_error& e) {
        threw = true;
        CHECK(std::string(e.what()).find("byte offset") != std::string::npos);
    }
    CHECK(threw);

    std::remove(path.c_str());
    std::remove(trunc_path.c_str());
}
