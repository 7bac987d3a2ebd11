#pragma once

#include <span>
#include <string>
#include <vector>

#include "qncd/tensor.hpp"

namespace qncd {

/// Choice of the per-step reverse noise scale sigma_t.
enum class SigmaKind {
    SqrtBeta,   ///< sigma_t = sqrt(beta_t)
    Posterior,  ///< sigma_t = sqrt(beta_t (1 - abar_{t-1}) / (1 - abar_t))
};

std::string to_string(SigmaKind kind);
SigmaKind parse_sigma_kind(const std::string &text);

/// Diffusion coefficient tables over t = 1..T. Accessors take the 1-based
/// timestep; alpha_bar(0) is defined as 1.
class NoiseSchedule {
public:
    static NoiseSchedule from_betas(std::vector<double> betas, SigmaKind sigma = SigmaKind::SqrtBeta);

    int steps() const noexcept { return static_cast<int>(beta_.size()); }
    double beta(int t) const { return beta_.at(index(t)); }
    double alpha(int t) const { return alpha_.at(index(t)); }
    double alpha_bar(int t) const { return t == 0 ? 1.0 : alpha_bar_.at(index(t)); }
    double sigma(int t) const { return sigma_.at(index(t)); }
    SigmaKind sigma_kind() const noexcept { return sigma_kind_; }

    std::span<const double> betas() const noexcept { return beta_; }
    std::span<const double> alpha_bars() const noexcept { return alpha_bar_; }

private:
    std::size_t index(int t) const;

    std::vector<double> beta_;
    std::vector<double> alpha_;
    std::vector<double> alpha_bar_;
    std::vector<double> sigma_;
    SigmaKind sigma_kind_ = SigmaKind::SqrtBeta;
};

NoiseSchedule linear_schedule(int steps, double beta_start, double beta_end, SigmaKind sigma = SigmaKind::SqrtBeta);

/// sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
Tensor marginal_diffuse(const Tensor &x0, int t, const NoiseSchedule &s, const Tensor &eps);

/// sqrt(alpha_t) x_prev + sqrt(1 - alpha_t) z1
Tensor single_step_diffuse(const Tensor &x_prev, int t, const NoiseSchedule &s, const Tensor &z1);

/// Same as single_step_diffuse with an explicit signal coefficient; used when
/// the sampler skips timesteps and the effective per-step alpha is
/// abar_t / abar_{t_prev}.
Tensor diffuse_with_alpha(const Tensor &x_prev, double alpha, const Tensor &z1);

/// Ancestral DDPM update x_t -> x_{t-1}. z must be all zeros at t == 1.
Tensor ddpm_step(const Tensor &x_t, const Tensor &eps_pred, int t, const NoiseSchedule &s, const Tensor &z);

/// Deterministic (eta = 0) DDIM update x_t -> x_{t_prev}; t_prev == 0 yields the x0 estimate.
Tensor ddim_step(const Tensor &x_t, const Tensor &eps_pred, int t, int t_prev, const NoiseSchedule &s);

/// x0 estimate implied by an eps prediction at step t.
Tensor predict_x0(const Tensor &x_t, const Tensor &eps_pred, int t, const NoiseSchedule &s);

enum class SamplerKind { Ddpm, Ddim };

struct SamplerSpec {
    SamplerKind kind = SamplerKind::Ddpm;
    int ddim_steps = 0;  ///< only for Ddim

    /// "ddpm" or "ddim:k"
    static SamplerSpec parse(const std::string &text);
    std::string to_string() const;
};

/// One reverse update t -> t_prev with the chosen sampler. DDPM requires
/// t_prev == t - 1 and consumes z (ignored, and may be anything, at t == 1);
/// DDIM ignores z.
Tensor sampler_update(SamplerKind kind, const Tensor &x_t, const Tensor &eps_pred, int t, int t_prev,
                      const NoiseSchedule &s, const Tensor &z);

/// Descending timesteps visited by the sampler. DDPM visits T..1; DDIM visits
/// k evenly spaced timesteps that include T and 1.
std::vector<int> sampling_timesteps(const NoiseSchedule &s, const SamplerSpec &spec);

}  // namespace qncd
