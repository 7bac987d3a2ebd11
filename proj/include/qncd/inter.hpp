#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qncd/denoiser.hpp"
#include "qncd/rng.hpp"
#include "qncd/schedule.hpp"

namespace qncd {

/// Sampling steps split into contiguous stages; the noise estimate is
/// refreshed at the first step of every stage.
struct StagePlan {
    std::vector<std::size_t> estimation_steps;  ///< indices into the step sequence, increasing
    std::size_t num_steps = 0;

    std::size_t num_stages() const noexcept { return estimation_steps.size(); }
    bool is_estimation_step(std::size_t index) const;
    /// Stage containing step `index`, or nullopt before the first estimation.
    std::optional<std::size_t> stage_of(std::size_t index) const;
};

/// num_stages == 0 yields an empty plan (correction disabled); otherwise
/// 1 <= num_stages <= num_steps and stage k starts at floor(k * n / num_stages).
StagePlan stage_plan(std::size_t num_steps, std::size_t num_stages);

/// Distribution of the estimated quantization noise at one stage boundary.
struct NoiseEstimate {
    std::vector<double> mu;
    std::vector<double> sigma;
    std::size_t stage = 0;
    std::size_t batch = 0;

    static NoiseEstimate zero(std::size_t dim);
};

enum class CorrectionMode { MeanOnly, MeanVar };

std::string to_string(CorrectionMode mode);
CorrectionMode parse_correction_mode(const std::string &text);

/// Probe: x_hat = sqrt(alpha) x_prev + sqrt(1 - alpha) z1, q = qnet(x_hat, t) - z1;
/// returns per-dimension batch mean and std of q (pooled over dimensions for
/// a batch of one). `alpha` is the schedule's alpha_t for consecutive steps.
NoiseEstimate estimate_noise(const NoisePredictor &qnet, const Tensor &x_prev, int t, double alpha, Rng &rng);
NoiseEstimate estimate_noise(const NoisePredictor &qnet, const Tensor &x_prev, int t, const NoiseSchedule &s,
                             Rng &rng);

/// MeanOnly: eps - mu_q. MeanVar: additionally rescales the centered batch by
/// sqrt(max(sigma_obs^2 - sigma_q^2, 1e-12)) / sigma_obs per dimension.
Tensor apply_correction(const Tensor &eps_tilde, const NoiseEstimate &est, CorrectionMode mode);

/// Counts calls into a wrapped predictor.
class CountingPredictor : public NoisePredictor {
public:
    explicit CountingPredictor(const NoisePredictor &inner) : inner_(inner) {}
    Tensor predict(const Tensor &x, int t) const override
    {
        ++count_;
        return inner_.predict(x, t);
    }
    std::uint64_t count() const noexcept { return count_; }

private:
    const NoisePredictor &inner_;
    mutable std::uint64_t count_ = 0;
};

struct StepRecord {
    int t = 0;
    std::vector<double> mean;  ///< batch mean of the sample after this step
    std::vector<double> std;
    bool estimation = false;
};

struct SampleResult {
    Tensor samples;
    std::vector<StepRecord> steps;
    std::vector<Tensor> eps;  ///< eps used at every step (after correction), when kept
    std::vector<NoiseEstimate> estimates;
    std::uint64_t evaluations = 0;
};

struct LoopOptions {
    SamplerKind sampler = SamplerKind::Ddpm;
    CorrectionMode mode = CorrectionMode::MeanOnly;
    bool keep_eps = false;
};

/// Reverse sampling over `timesteps` starting from x_T. Step i draws its
/// sampler noise from noise_rng.fork("step", i) and its probe noise from
/// probe_rng.fork("probe", i), so paired runs share every draw. At an
/// estimation step the sampler update is taken, the probe runs on the result,
/// and the update is redone with the corrected eps; the estimate then applies
/// until the next estimation step.
SampleResult corrected_sample_loop(const NoisePredictor &qnet, const NoiseSchedule &s, std::span<const int> timesteps,
                                   const StagePlan &plan, const Tensor &x_T, const Rng &noise_rng,
                                   const Rng &probe_rng, const LoopOptions &options = {});

}  // namespace qncd
