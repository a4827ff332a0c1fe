#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mcl/model.hpp"
#include "mcl/nn.hpp"

namespace mcl {

struct TrainRun {
    int episodes = 1;
    int trajectories = 1;
    int epochs = 1;
    int minibatch = 1;
    double learning_rate = 1e-5;
    uint64_t seed = 0;
    bool deterministic = false;

    // full minibatches per episode; a final short batch is dropped
    long steps_per_episode() const {
        return static_cast<long>(trajectories / minibatch) * epochs;
    }
    void validate() const;
};

struct EpisodeMetrics {
    double mean_loss = 0.0;
    double max_loss = 0.0;
    double wall_ms = 0.0;
};

// thrown when an episode produces a non-finite loss
struct TrainAbort : std::runtime_error {
    int episode;
    TrainAbort(int ep, const std::string& what) : std::runtime_error(what), episode(ep) {}
};

// One episode: simulate every trajectory one period forward, reset Adam, then
// run `epochs` shuffled minibatch passes over the fresh states.
EpisodeMetrics run_episode(const EconModel& model, nn::Mlp& mlp, nn::AdamState& adam, Mat& states,
                           const TrainRun& run, int episode_index);

struct TrainOutputs {
    std::string metrics_csv;     // per-episode rows, empty = don't write
    std::string checkpoint_path; // written at the end and on abort
    std::string states_path;     // final simulated batch
    std::string stage_json;      // stored in the checkpoint header
};

std::vector<EpisodeMetrics> train(const EconModel& model, nn::Mlp& mlp, nn::AdamState& adam,
                                  Mat& states, const TrainRun& run, const TrainOutputs& out);

struct StatRow {
    std::string family;
    int type = 1;
    int age = 1;
    double min = 0.0, mean = 0.0, max = 0.0;
    std::vector<double> pcts; // one per requested percentile
};

// Simulates n_periods forward without updates, then reports per-family,
// per-type, per-age statistics of the absolute residuals.
std::vector<StatRow> evaluate(const EconModel& model, const nn::Mlp& mlp,
                              const Mat* start_states, int n_states, int n_periods,
                              const std::vector<double>& percentiles, uint64_t seed);

// Per-variable age profiles (mean, p10, p90) over a simulated batch.
std::vector<StatRow> profile_stats(const EconModel& model, const nn::Mlp& mlp,
                                   const Mat* start_states, int n_states, int n_periods,
                                   uint64_t seed);

double percentile(std::vector<double> values, double p);

void write_metrics_csv(const std::string& path, const std::vector<EpisodeMetrics>& rows);
void write_eval_csv(const std::string& path, const std::vector<StatRow>& rows,
                    const std::vector<double>& percentiles);
void write_profiles_csv(const std::string& path, const std::vector<StatRow>& rows);

// Replicates a single state (or an existing batch, cycled) to n rows.
Mat tile_states(const Mat& src, int n);

} // namespace mcl
