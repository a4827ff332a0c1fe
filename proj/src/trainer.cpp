#include "mcl/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "mcl/io.hpp"
#include "mcl/kernels.hpp"
#include "mcl/rng.hpp"

namespace mcl {

namespace {
constexpr uint64_t kSimTag = 0x53494d;   // simulation draws
constexpr uint64_t kShufTag = 0x534846;  // minibatch shuffles
constexpr uint64_t kEvalTag = 0x4556;    // evaluation simulation

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}
} // namespace

void TrainRun::validate() const {
    if (episodes < 0) throw std::invalid_argument("train.episodes must be >= 0");
    if (trajectories < 1) throw std::invalid_argument("train.trajectories must be >= 1");
    if (epochs < 1) throw std::invalid_argument("train.epochs must be >= 1");
    if (minibatch < 1) throw std::invalid_argument("train.minibatch must be >= 1");
    if (minibatch > trajectories)
        throw std::invalid_argument("train.minibatch must be <= train.trajectories");
    if (!(learning_rate >= 0.0)) throw std::invalid_argument("train.learning_rate must be >= 0");
}

Mat tile_states(const Mat& src, int n) {
    Mat out(n, src.cols);
    for (int r = 0; r < n; ++r) {
        const double* s = src.row_ptr(r % src.rows);
        std::copy(s, s + src.cols, out.row_ptr(r));
    }
    return out;
}

EpisodeMetrics run_episode(const EconModel& model, nn::Mlp& mlp, nn::AdamState& adam, Mat& states,
                           const TrainRun& run, int episode_index) {
    const auto t0 = std::chrono::steady_clock::now();
    if (states.rows != run.trajectories)
        throw std::invalid_argument("run_episode: states rows " + std::to_string(states.rows) +
                                    " != trajectories " + std::to_string(run.trajectories));

    model.simulate_step(mlp, states, mix_seed(run.seed, kSimTag, static_cast<uint64_t>(episode_index)));
    nn::reset_adam(adam);

    EpisodeMetrics m;
    m.mean_loss = 0.0;
    m.max_loss = 0.0;
    long steps = 0;

    std::vector<int> perm(run.trajectories);
    Mat batch(run.minibatch, states.cols);
    for (int epoch = 0; epoch < run.epochs; ++epoch) {
        std::iota(perm.begin(), perm.end(), 0);
        Rng shuffle_rng(mix_seed(run.seed, kShufTag,
                                 (static_cast<uint64_t>(episode_index) << 16) ^ static_cast<uint64_t>(epoch)));
        shuffle_rng.shuffle(perm);
        const int batches = run.trajectories / run.minibatch;
        for (int bi = 0; bi < batches; ++bi) {
            for (int r = 0; r < run.minibatch; ++r) {
                const double* src = states.row_ptr(perm[bi * run.minibatch + r]);
                std::copy(src, src + states.cols, batch.row_ptr(r));
            }
            Tape tape;
            const nn::TapeNet net = nn::make_tape_net(tape, mlp);
            const Var loss = model.build_loss(tape, net, tape.constant(batch));
            const double value = tape.value(loss)[0];
            if (!std::isfinite(value)) {
                std::ostringstream oss;
                oss << "episode " << episode_index << " epoch " << epoch << " minibatch " << bi
                    << ": non-finite loss " << value << "; offending state rows:";
                int dumped = 0;
                for (const ValueBlock& blk : model.residuals(mlp, batch)) {
                    for (int r = 0; r < blk.values.rows && dumped < 8; ++r) {
                        bool bad = false;
                        for (int c = 0; c < blk.values.cols; ++c)
                            if (!std::isfinite(blk.values(r, c))) bad = true;
                        if (!bad) continue;
                        oss << "\n  [" << blk.family << " type " << blk.type << "] state row"
                            << " " << perm[bi * run.minibatch + r] << ":";
                        for (int c = 0; c < batch.cols; ++c) oss << ' ' << batch(r, c);
                        ++dumped;
                    }
                }
                throw TrainAbort(episode_index, oss.str());
            }
            tape.backward(loss);
            std::vector<double> grads = nn::collect_grads(tape, net);
            nn::zero_nans(grads);
            nn::adam_step(adam, mlp.theta, grads);
            m.mean_loss += value;
            m.max_loss = std::max(m.max_loss, value);
            ++steps;
        }
    }
    if (steps > 0) m.mean_loss /= static_cast<double>(steps);
    const auto t1 = std::chrono::steady_clock::now();
    m.wall_ms = run.deterministic
                    ? 0.0
                    : std::chrono::duration<double, std::milli>(t1 - t0).count();
    return m;
}

std::vector<EpisodeMetrics> train(const EconModel& model, nn::Mlp& mlp, nn::AdamState& adam,
                                  Mat& states, const TrainRun& run, const TrainOutputs& out) {
    run.validate();
    if (run.deterministic) kernels::set_threads(1);
    std::vector<EpisodeMetrics> metrics;
    metrics.reserve(run.episodes);

    auto flush = [&]() {
        if (!out.metrics_csv.empty()) write_metrics_csv(out.metrics_csv, metrics);
        if (!out.checkpoint_path.empty())
            nn::save_checkpoint(mlp, adam, out.stage_json, out.checkpoint_path);
        if (!out.states_path.empty()) save_matrix(states, out.states_path);
    };

    try {
        for (int ep = 0; ep < run.episodes; ++ep)
            metrics.push_back(run_episode(model, mlp, adam, states, run, ep));
    } catch (const TrainAbort&) {
        flush();
        throw;
    }
    flush();
    return metrics;
}

double percentile(std::vector<double> values, double p) {
    if (values.empty()) throw std::invalid_argument("percentile of empty set");
    std::sort(values.begin(), values.end());
    const double pos = (p / 100.0) * (static_cast<double>(values.size()) - 1.0);
    const size_t lo = static_cast<size_t>(std::floor(pos));
    const size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] * (1.0 - frac) + values[hi] * frac;
}

namespace {

Mat simulate_forward(const EconModel& model, const nn::Mlp& mlp, const Mat* start_states,
                     int n_states, int n_periods, uint64_t seed) {
    Mat states = start_states ? tile_states(*start_states, n_states)
                              : tile_states(model.initial_state(), n_states);
    for (int p = 0; p < n_periods; ++p)
        model.simulate_step(mlp, states, mix_seed(seed, kEvalTag, static_cast<uint64_t>(p)));
    return states;
}

// per-column stats over blocks gathered chunk-wise
struct ColumnGather {
    std::vector<std::vector<double>> cols;
};

} // namespace

std::vector<StatRow> evaluate(const EconModel& model, const nn::Mlp& mlp,
                              const Mat* start_states, int n_states, int n_periods,
                              const std::vector<double>& percentiles, uint64_t seed) {
    const Mat states = simulate_forward(model, mlp, start_states, n_states, n_periods, seed);

    std::vector<std::string> keys;
    std::vector<ColumnGather> gathered;
    const int chunk = 1024;
    for (int r0 = 0; r0 < states.rows; r0 += chunk) {
        const int rows = std::min(chunk, states.rows - r0);
        Mat part(rows, states.cols);
        std::copy(states.row_ptr(r0), states.row_ptr(r0) + static_cast<size_t>(rows) * states.cols,
                  part.a.begin());
        const std::vector<ValueBlock> blocks = model.residuals(mlp, part);
        if (keys.empty()) {
            for (const ValueBlock& b : blocks) {
                keys.push_back(b.family + "/" + std::to_string(b.type));
                gathered.emplace_back();
                gathered.back().cols.resize(b.values.cols);
            }
        }
        for (size_t bi = 0; bi < blocks.size(); ++bi)
            for (int c = 0; c < blocks[bi].values.cols; ++c)
                for (int r = 0; r < blocks[bi].values.rows; ++r)
                    gathered[bi].cols[c].push_back(std::fabs(blocks[bi].values(r, c)));
    }

    std::vector<StatRow> rows;
    for (size_t bi = 0; bi < keys.size(); ++bi) {
        const auto slash = keys[bi].find('/');
        for (size_t c = 0; c < gathered[bi].cols.size(); ++c) {
            const std::vector<double>& v = gathered[bi].cols[c];
            StatRow row;
            row.family = keys[bi].substr(0, slash);
            row.type = std::stoi(keys[bi].substr(slash + 1));
            row.age = static_cast<int>(c) + 1;
            row.min = *std::min_element(v.begin(), v.end());
            row.max = *std::max_element(v.begin(), v.end());
            row.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
            for (double p : percentiles) row.pcts.push_back(percentile(v, p));
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

std::vector<StatRow> profile_stats(const EconModel& model, const nn::Mlp& mlp,
                                   const Mat* start_states, int n_states, int n_periods,
                                   uint64_t seed) {
    const Mat states = simulate_forward(model, mlp, start_states, n_states, n_periods, seed);
    std::vector<StatRow> rows;
    for (const ValueBlock& blk : model.profiles(mlp, states)) {
        for (int c = 0; c < blk.values.cols; ++c) {
            std::vector<double> v(blk.values.rows);
            for (int r = 0; r < blk.values.rows; ++r) v[r] = blk.values(r, c);
            StatRow row;
            row.family = blk.family;
            row.type = blk.type;
            row.age = c + 1;
            row.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
            row.pcts = {percentile(v, 10.0), percentile(v, 90.0)};
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

void write_metrics_csv(const std::string& path, const std::vector<EpisodeMetrics>& rows) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f << "episode,mean_loss,max_loss,wall_ms\n";
    for (size_t i = 0; i < rows.size(); ++i)
        f << i << ',' << fmt(rows[i].mean_loss) << ',' << fmt(rows[i].max_loss) << ','
          << fmt(rows[i].wall_ms) << '\n';
}

void write_eval_csv(const std::string& path, const std::vector<StatRow>& rows,
                    const std::vector<double>& percentiles) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f << "residual_family,type,age,min";
    for (double p : percentiles) {
        if (p < 50.0) f << ",p" << static_cast<int>(p);
    }
    f << ",mean";
    for (double p : percentiles) {
        if (p >= 50.0) f << ",p" << static_cast<int>(p);
    }
    f << ",max\n";
    for (const StatRow& r : rows) {
        f << r.family << ',' << r.type << ',' << r.age << ',' << fmt(r.min);
        for (size_t i = 0; i < percentiles.size(); ++i)
            if (percentiles[i] < 50.0) f << ',' << fmt(r.pcts[i]);
        f << ',' << fmt(r.mean);
        for (size_t i = 0; i < percentiles.size(); ++i)
            if (percentiles[i] >= 50.0) f << ',' << fmt(r.pcts[i]);
        f << ',' << fmt(r.max) << '\n';
    }
}

void write_profiles_csv(const std::string& path, const std::vector<StatRow>& rows) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f << "variable,type,age,mean,p10,p90\n";
    for (const StatRow& r : rows)
        f << r.family << ',' << r.type << ',' << r.age << ',' << fmt(r.mean) << ','
          << fmt(r.pcts[0]) << ',' << fmt(r.pcts[1]) << '\n';
}

} // namespace mcl
