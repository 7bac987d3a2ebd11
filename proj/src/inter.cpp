#include "qncd/inter.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace qncd {

bool StagePlan::is_estimation_step(std::size_t index) const
{
    return std::binary_search(estimation_steps.begin(), estimation_steps.end(), index);
}

std::optional<std::size_t> StagePlan::stage_of(std::size_t index) const
{
    auto it = std::upper_bound(estimation_steps.begin(), estimation_steps.end(), index);
    if (it == estimation_steps.begin())
        return std::nullopt;
    return static_cast<std::size_t>(it - estimation_steps.begin()) - 1;
}

StagePlan stage_plan(std::size_t num_steps, std::size_t num_stages)
{
    StagePlan plan;
    plan.num_steps = num_steps;
    if (num_stages == 0)
        return plan;
    if (num_stages > num_steps)
        throw std::invalid_argument("stage_plan: " + std::to_string(num_stages) + " stages over " +
                                    std::to_string(num_steps) + " steps");
    for (std::size_t k = 0; k < num_stages; ++k)
        plan.estimation_steps.push_back(k * num_steps / num_stages);
    return plan;
}

NoiseEstimate NoiseEstimate::zero(std::size_t dim)
{
    return {std::vector<double>(dim, 0.0), std::vector<double>(dim, 0.0), 0, 0};
}

std::string to_string(CorrectionMode mode)
{
    return mode == CorrectionMode::MeanOnly ? "mean" : "mean_var";
}

CorrectionMode parse_correction_mode(const std::string &text)
{
    if (text == "mean")
        return CorrectionMode::MeanOnly;
    if (text == "mean_var")
        return CorrectionMode::MeanVar;
    throw std::invalid_argument("unknown correction mode '" + text + "' (expected mean or mean_var)");
}

NoiseEstimate estimate_noise(const NoisePredictor &qnet, const Tensor &x_prev, int t, double alpha, Rng &rng)
{
    if (x_prev.rank() != 2 || x_prev.rows() == 0)
        throw ShapeError("estimate_noise: nonempty [batch, dim] tensor required, got " + to_string(x_prev.shape()));
    const Tensor z1 = randn(rng, x_prev.shape());
    const Tensor x_hat = diffuse_with_alpha(x_prev, alpha, z1);
    const Tensor q = sub(qnet.predict(x_hat, t), z1);

    NoiseEstimate est;
    est.batch = x_prev.rows();
    if (x_prev.rows() == 1) {
        est.mu.assign(q.cols(), mean(q));
        est.sigma.assign(q.cols(), stddev(q));
    } else {
        est.mu = column_mean(q);
        est.sigma = column_std(q);
    }
    return est;
}

NoiseEstimate estimate_noise(const NoisePredictor &qnet, const Tensor &x_prev, int t, const NoiseSchedule &s, Rng &rng)
{
    return estimate_noise(qnet, x_prev, t, s.alpha(t), rng);
}

Tensor apply_correction(const Tensor &eps_tilde, const NoiseEstimate &est, CorrectionMode mode)
{
    if (eps_tilde.rank() != 2 || eps_tilde.cols() != est.mu.size() || est.sigma.size() != est.mu.size())
        throw ShapeError("apply_correction", eps_tilde.shape(), Shape{est.mu.size()});
    const std::size_t d = eps_tilde.cols();
    Tensor out = eps_tilde;
    if (mode == CorrectionMode::MeanVar && eps_tilde.rows() > 1) {
        const auto m = column_mean(eps_tilde);
        const auto sd = column_std(eps_tilde);
        for (std::size_t j = 0; j < d; ++j) {
            if (sd[j] == 0.0)
                continue;
            const double target = std::sqrt(std::max(sd[j] * sd[j] - est.sigma[j] * est.sigma[j], 1e-12));
            const double ratio = target / sd[j];
            for (std::size_t r = 0; r < out.rows(); ++r)
                out.at(r, j) = m[j] + (out.at(r, j) - m[j]) * ratio;
        }
    }
    for (std::size_t r = 0; r < out.rows(); ++r)
        for (std::size_t j = 0; j < d; ++j)
            out.at(r, j) -= est.mu[j];
    return out;
}

SampleResult corrected_sample_loop(const NoisePredictor &qnet, const NoiseSchedule &s, std::span<const int> timesteps,
                                   const StagePlan &plan, const Tensor &x_T, const Rng &noise_rng,
                                   const Rng &probe_rng, const LoopOptions &options)
{
    if (plan.num_stages() > 0 && plan.num_steps != timesteps.size())
        throw std::invalid_argument("corrected_sample_loop: stage plan covers " + std::to_string(plan.num_steps) +
                                    " steps, sequence has " + std::to_string(timesteps.size()));
    CountingPredictor net(qnet);
    SampleResult result;
    Tensor x = x_T;
    std::optional<NoiseEstimate> active;
    for (std::size_t i = 0; i < timesteps.size(); ++i) {
        const int t = timesteps[i];
        const int t_prev = i + 1 < timesteps.size() ? timesteps[i + 1] : 0;
        Rng step_rng = noise_rng.fork("step", i);
        const Tensor z = randn(step_rng, x.shape());

        const Tensor eps_tilde = net.predict(x, t);
        Tensor eps = active ? apply_correction(eps_tilde, *active, options.mode) : eps_tilde;
        Tensor next = sampler_update(options.sampler, x, eps, t, t_prev, s, z);

        const bool estimation = plan.is_estimation_step(i);
        if (estimation) {
            Rng probe = probe_rng.fork("probe", i);
            // Effective one-step alpha between the visited timesteps.
            const double alpha = s.alpha_bar(t) / s.alpha_bar(t_prev);
            NoiseEstimate est = estimate_noise(net, next, t, alpha, probe);
            est.stage = *plan.stage_of(i);
            result.estimates.push_back(est);
            active = std::move(est);
            eps = apply_correction(eps_tilde, *active, options.mode);
            next = sampler_update(options.sampler, x, eps, t, t_prev, s, z);
        }
        x = std::move(next);

        StepRecord rec;
        rec.t = t;
        rec.mean = column_mean(x);
        rec.std = column_std(x);
        rec.estimation = estimation;
        result.steps.push_back(std::move(rec));
        if (options.keep_eps)
            result.eps.push_back(std::move(eps));
    }
    result.samples = std::move(x);
    result.evaluations = net.count();
    return result;
}

}  // namespace qncd
