#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "mproto/episode.hpp"
#include "mproto/model.hpp"
#include "mproto/prediction.hpp"

namespace mproto {

struct LossConfig {
    double lambda = 0.01;  // weight of each intermediate-level term
    double eps = 1e-8;     // log clamp floor

    void validate() const;
};

/// Mean over pixels of -log(max(p_target, eps)). Targets are class indices.
double cross_entropy(const ClassProbMap& probs, const std::vector<int>& target, double eps);

/// CE(final) + lambda * sum_l CE(level_l).
double total_loss(const ClassProbMap& final, const std::vector<ClassProbMap>& intermediates,
                  const std::vector<int>& target, const LossConfig& cfg);

double episode_loss(const PreparedEpisode& episode, const ModelParams& params, const LossConfig& cfg);

struct LossAndGradient {
    double loss = 0.0;
    /// Flattened in ModelParams::layout order.
    std::vector<double> gradient;
};

/// Loss and its analytic gradient with respect to every learnable.
LossAndGradient episode_loss_and_gradient(const PreparedEpisode& episode, const ModelParams& params,
                                          const LossConfig& cfg);

struct TrainState {
    ModelParams params;
    long long step = 0;
    double lr = 1e-3;
    std::uint64_t seed = 0;
};

/// params <- params - lr * grads. Non-finite gradients are rejected with a
/// DivergenceError and leave the state untouched.
TrainState sgd_step(const TrainState& state, std::span<const double> grads);

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h per coordinate.
std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& loss_fn,
                                     std::span<const double> params, double h);

/// Draws training episodes: a seen foreground class uniformly, then one support
/// and one query scene containing it. The support annotates every seen class it
/// shows and supplies visual prototypes for those covering at least n pixels.
/// Every seen class with an embedding contributes textual prototypes. Query
/// pixels of non-seen classes count as background.
class EpisodeSampler {
public:
    EpisodeSampler(const Dataset& dataset, int n, std::uint64_t seed);

    Episode next();

private:
    const Dataset& dataset_;
    std::mt19937_64 rng_;
    int n_;
    std::vector<ClassId> foreground_;
};

struct TrainConfig {
    ModelShape shape;
    LossConfig loss;
    double lr = 1e-3;
    int steps = 500;
    std::uint64_t seed = 0;
};

struct TrainResult {
    TrainState state;
    std::vector<double> losses;  // loss of each step's episode before the update
};

/// Sequential SGD over sampled episodes. `on_step` (optional) sees each step's
/// index and loss.
TrainResult train(const Dataset& dataset, const TrainConfig& cfg,
                  const std::function<void(long long, double)>& on_step = {});

}  // namespace mproto
