#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "qncd/denoiser.hpp"

namespace qncd {

struct TrainOptions {
    double learning_rate = 0.02;
    double momentum = 0.9;
    /// Learning rate at the last iteration as a fraction of the initial one
    /// (cosine decay); 1 keeps it constant.
    double final_lr_fraction = 0.02;
    std::size_t batch_size = 256;
    std::size_t iterations = 4000;
    std::uint64_t seed = 1;
};

struct TrainResult {
    DenoiserModel model;
    std::vector<double> losses;
};

class TrainingDiverged : public std::runtime_error {
public:
    TrainingDiverged(std::size_t iteration, double loss);
    std::size_t iteration() const noexcept { return iteration_; }

private:
    std::size_t iteration_;
};

/// Mean squared eps-prediction error over all batch entries, with manual
/// gradients written into `grads` (same architecture as `model`, overwritten).
double loss_and_gradients(const DenoiserModel &model, const Tensor &x_t, std::span<const int> ts,
                          const Tensor &target, DenoiserModel &grads);

/// Mean squared error of a predictor on a batch that shares one timestep.
double eps_mse(const NoisePredictor &net, const Tensor &x_t, int t, const Tensor &target);

/// SGD with momentum on the simple eps-prediction objective with t drawn
/// uniformly from 1..T.
TrainResult train(DenoiserModel model, const GaussianMixture &gmm, const NoiseSchedule &s, const TrainOptions &opts);

}  // namespace qncd
