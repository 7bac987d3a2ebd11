#include "qncd/schedule.hpp"

#include <cmath>
#include <stdexcept>

namespace qncd {

std::string to_string(SigmaKind kind)
{
    return kind == SigmaKind::SqrtBeta ? "sqrt_beta" : "posterior";
}

SigmaKind parse_sigma_kind(const std::string &text)
{
    if (text == "sqrt_beta")
        return SigmaKind::SqrtBeta;
    if (text == "posterior")
        return SigmaKind::Posterior;
    throw std::invalid_argument("unknown sigma kind '" + text + "' (expected sqrt_beta or posterior)");
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas, SigmaKind sigma)
{
    if (betas.empty())
        throw std::invalid_argument("NoiseSchedule: no steps");
    NoiseSchedule s;
    s.sigma_kind_ = sigma;
    s.beta_ = std::move(betas);
    const std::size_t n = s.beta_.size();
    s.alpha_.resize(n);
    s.alpha_bar_.resize(n);
    s.sigma_.resize(n);
    double running = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double b = s.beta_[i];
        if (!(b > 0.0 && b < 1.0))
            throw std::invalid_argument("NoiseSchedule: beta[" + std::to_string(i + 1) + "] = " + std::to_string(b) +
                                        " outside (0,1)");
        s.alpha_[i] = 1.0 - b;
        const double prev = running;
        running *= s.alpha_[i];
        s.alpha_bar_[i] = running;
        s.sigma_[i] = sigma == SigmaKind::SqrtBeta ? std::sqrt(b) : std::sqrt(b * (1.0 - prev) / (1.0 - running));
    }
    return s;
}

std::size_t NoiseSchedule::index(int t) const
{
    if (t < 1 || t > steps())
        throw std::out_of_range("timestep " + std::to_string(t) + " outside 1.." + std::to_string(steps()));
    return static_cast<std::size_t>(t - 1);
}

NoiseSchedule linear_schedule(int steps, double beta_start, double beta_end, SigmaKind sigma)
{
    if (steps < 2)
        throw std::invalid_argument("linear_schedule: need at least 2 steps");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw std::invalid_argument("linear_schedule: require 0 < beta_start <= beta_end < 1");
    std::vector<double> betas(static_cast<std::size_t>(steps));
    for (int i = 0; i < steps; ++i)
        betas[i] = beta_start + (beta_end - beta_start) * static_cast<double>(i) / static_cast<double>(steps - 1);
    betas.back() = beta_end;
    return NoiseSchedule::from_betas(std::move(betas), sigma);
}

namespace {

Tensor axpby(double a, const Tensor &x, double b, const Tensor &y, const char *op)
{
    if (x.shape() != y.shape())
        throw ShapeError(op, x.shape(), y.shape());
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = a * x[i] + b * y[i];
    return out;
}

}  // namespace

Tensor marginal_diffuse(const Tensor &x0, int t, const NoiseSchedule &s, const Tensor &eps)
{
    const double ab = s.alpha_bar(t);
    return axpby(std::sqrt(ab), x0, std::sqrt(1.0 - ab), eps, "marginal_diffuse");
}

Tensor single_step_diffuse(const Tensor &x_prev, int t, const NoiseSchedule &s, const Tensor &z1)
{
    return diffuse_with_alpha(x_prev, s.alpha(t), z1);
}

Tensor diffuse_with_alpha(const Tensor &x_prev, double alpha, const Tensor &z1)
{
    return axpby(std::sqrt(alpha), x_prev, std::sqrt(1.0 - alpha), z1, "single_step_diffuse");
}

Tensor ddpm_step(const Tensor &x_t, const Tensor &eps_pred, int t, const NoiseSchedule &s, const Tensor &z)
{
    if (x_t.shape() != eps_pred.shape())
        throw ShapeError("ddpm_step", x_t.shape(), eps_pred.shape());
    if (x_t.shape() != z.shape())
        throw ShapeError("ddpm_step", x_t.shape(), z.shape());
    if (t == 1)
        for (double v : z.values())
            if (v != 0.0)
                throw std::invalid_argument("ddpm_step: the final step (t = 1) takes no noise");
    const double inv_sqrt_alpha = 1.0 / std::sqrt(s.alpha(t));
    const double eps_coef = s.beta(t) / std::sqrt(1.0 - s.alpha_bar(t));
    const double sigma = s.sigma(t);
    Tensor out(x_t.shape());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = inv_sqrt_alpha * (x_t[i] - eps_coef * eps_pred[i]) + sigma * z[i];
    return out;
}

Tensor predict_x0(const Tensor &x_t, const Tensor &eps_pred, int t, const NoiseSchedule &s)
{
    const double ab = s.alpha_bar(t);
    return axpby(1.0 / std::sqrt(ab), x_t, -std::sqrt(1.0 - ab) / std::sqrt(ab), eps_pred, "predict_x0");
}

Tensor ddim_step(const Tensor &x_t, const Tensor &eps_pred, int t, int t_prev, const NoiseSchedule &s)
{
    if (x_t.shape() != eps_pred.shape())
        throw ShapeError("ddim_step", x_t.shape(), eps_pred.shape());
    if (t_prev > t || t_prev < 0)
        throw std::invalid_argument("ddim_step: t_prev = " + std::to_string(t_prev) + " must lie in [0, t = " +
                                    std::to_string(t) + "]");
    if (t_prev == t)
        return x_t;
    const Tensor x0 = predict_x0(x_t, eps_pred, t, s);
    const double ab_prev = s.alpha_bar(t_prev);
    return axpby(std::sqrt(ab_prev), x0, std::sqrt(1.0 - ab_prev), eps_pred, "ddim_step");
}

SamplerSpec SamplerSpec::parse(const std::string &text)
{
    if (text == "ddpm")
        return {SamplerKind::Ddpm, 0};
    if (text.rfind("ddim:", 0) == 0) {
        std::size_t pos = 0;
        const int k = std::stoi(text.substr(5), &pos);
        if (pos != text.size() - 5 || k < 1)
            throw std::invalid_argument("bad sampler '" + text + "'");
        return {SamplerKind::Ddim, k};
    }
    throw std::invalid_argument("unknown sampler '" + text + "' (expected ddpm or ddim:k)");
}

std::string SamplerSpec::to_string() const
{
    return kind == SamplerKind::Ddpm ? "ddpm" : "ddim:" + std::to_string(ddim_steps);
}

Tensor sampler_update(SamplerKind kind, const Tensor &x_t, const Tensor &eps_pred, int t, int t_prev,
                      const NoiseSchedule &s, const Tensor &z)
{
    if (kind == SamplerKind::Ddim)
        return ddim_step(x_t, eps_pred, t, t_prev, s);
    if (t_prev != t - 1)
        throw std::invalid_argument("sampler_update: DDPM steps one timestep at a time");
    if (t == 1)
        return ddpm_step(x_t, eps_pred, t, s, Tensor(x_t.shape()));
    return ddpm_step(x_t, eps_pred, t, s, z);
}

std::vector<int> sampling_timesteps(const NoiseSchedule &s, const SamplerSpec &spec)
{
    const int T = s.steps();
    std::vector<int> steps;
    if (spec.kind == SamplerKind::Ddpm || spec.ddim_steps >= T) {
        for (int t = T; t >= 1; --t)
            steps.push_back(t);
        return steps;
    }
    const int k = spec.ddim_steps;
    if (k == 1)
        return {T};
    for (int i = k - 1; i >= 0; --i)
        steps.push_back(1 + static_cast<int>(std::lround(static_cast<double>(T - 1) * i / (k - 1))));
    return steps;
}

}  // namespace qncd
