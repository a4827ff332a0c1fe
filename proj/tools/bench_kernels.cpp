// Compares the serial reference kernels against the OpenMP versions, and
// times a full training step at two batch scales. Run manually:
//   build/tools/bench_kernels [threads]

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include "mcl/economy_single.hpp"
#include "mcl/kernels.hpp"
#include "mcl/nn.hpp"
#include "mcl/quadrature.hpp"
#include "mcl/rng.hpp"
#include "mcl/tape.hpp"
#include "mcl/trainer.hpp"

using namespace mcl;
using Clock = std::chrono::steady_clock;

namespace {

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

Mat random_mat(int r, int c, Rng& rng) {
    Mat m(r, c);
    for (double& v : m.a) v = rng.normal();
    return m;
}

void bench_matmul(int m, int k, int n, int reps, int threads) {
    Rng rng(7);
    const Mat A = random_mat(m, k, rng);
    const Mat B = random_mat(k, n, rng);
    Mat C(m, n);

    auto t0 = Clock::now();
    for (int i = 0; i < reps; ++i)
        kernels::ref::matmul_nn(A.a.data(), B.a.data(), C.a.data(), m, k, n);
    const double serial = ms_since(t0) / reps;

    kernels::set_threads(threads);
    t0 = Clock::now();
    for (int i = 0; i < reps; ++i)
        kernels::matmul_nn(A.a.data(), B.a.data(), C.a.data(), m, k, n);
    const double par = ms_since(t0) / reps;
    kernels::set_threads(1);

    const double mflop = 2.0 * m * k * n / 1e6; // Mflop/ms == Gflop/s
    std::printf("matmul %5dx%-4dx%-4d  serial %8.3f ms (%5.2f GF/s)  omp %8.3f ms (%5.2f GF/s)  speedup %.2fx\n",
                m, k, n, serial, mflop / serial, par, mflop / par, serial / par);
}

void bench_training_step(int batch, int hidden, int threads) {
    SingleAssetConfig cfg;
    cfg.H = 20;
    SingleModel model(cfg, gauss_hermite(8), Mode::Simple);
    nn::Mlp mlp = nn::init_mlp({cfg.input_dim(), hidden, hidden, cfg.output_dim()},
                               model.make_heads(nn::Act::Identity), 1);
    Mat states = tile_states(model.initial_state(), batch);
    model.simulate_step(mlp, states, 1);

    auto run_once = [&]() {
        Tape tape;
        const nn::TapeNet net = nn::make_tape_net(tape, mlp);
        const Var loss = model.build_loss(tape, net, tape.constant(states));
        tape.backward(loss);
        std::vector<double> g = nn::collect_grads(tape, net);
        return g[0];
    };

    kernels::set_threads(1);
    auto t0 = Clock::now();
    for (int i = 0; i < 5; ++i) run_once();
    const double serial = ms_since(t0) / 5;

    kernels::set_threads(threads);
    t0 = Clock::now();
    for (int i = 0; i < 5; ++i) run_once();
    const double par = ms_since(t0) / 5;
    kernels::set_threads(1);

    std::printf("loss+grad batch %5d hidden %3d   serial %8.2f ms   omp %8.2f ms   speedup %.2fx\n",
                batch, hidden, serial, par, serial / par);
}

} // namespace

int main(int argc, char** argv) {
    const int threads = argc > 1 ? std::atoi(argv[1]) : 0; // 0 = hardware default
    kernels::set_threads(threads);
    const int effective = kernels::threads();
    std::printf("OpenMP threads: %d\n\n", effective);

    bench_matmul(128, 64, 64, 200, effective);
    bench_matmul(128, 400, 400, 50, effective);
    bench_matmul(8192, 21, 400, 20, effective);
    bench_matmul(8192, 400, 400, 5, effective);
    std::printf("\n");
    bench_training_step(128, 64, effective);
    bench_training_step(128, 400, effective);
    bench_training_step(1024, 400, effective);
    return 0;
}
