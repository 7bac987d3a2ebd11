#include <gtest/gtest.h>

#include <cmath>

#include "qncd/inter.hpp"

using namespace qncd;

namespace {

const NoiseSchedule &sched()
{
    static const NoiseSchedule s = linear_schedule(100, 1e-4, 0.02);
    return s;
}

const GaussianMixture &data()
{
    static const GaussianMixture g{{0.5, 0.5}, Tensor::matrix({{-2.0, 0.0}, {2.0, 0.0}}), {0.3, 0.3}};
    return g;
}

/// Recovers the probe noise exactly from a known x_prev, then adds a bias and
/// optional Gaussian jitter: q = bias + N(0, jitter^2) by construction.
class ProbeOracle : public NoisePredictor {
public:
    ProbeOracle(Tensor x_prev, double alpha, double bias, double jitter, std::uint64_t seed)
        : x_prev_(std::move(x_prev)), alpha_(alpha), bias_(bias), jitter_(jitter), rng_(seed)
    {
    }
    Tensor predict(const Tensor &x_hat, int) const override
    {
        Tensor z(x_hat.shape());
        for (std::size_t i = 0; i < z.size(); ++i)
            z[i] = (x_hat[i] - std::sqrt(alpha_) * x_prev_[i]) / std::sqrt(1.0 - alpha_) + bias_ +
                   jitter_ * rng_.normal();
        return z;
    }

private:
    Tensor x_prev_;
    double alpha_, bias_, jitter_;
    mutable Rng rng_;
};

class Biased : public NoisePredictor {
public:
    Biased(const NoisePredictor &inner, std::vector<double> bias) : inner_(inner), bias_(std::move(bias)) {}
    Tensor predict(const Tensor &x, int t) const override
    {
        Tensor e = inner_.predict(x, t);
        for (std::size_t r = 0; r < e.rows(); ++r)
            for (std::size_t j = 0; j < e.cols(); ++j)
                e.at(r, j) += bias_[j];
        return e;
    }

private:
    const NoisePredictor &inner_;
    std::vector<double> bias_;
};

std::vector<int> ddpm_steps()
{
    return sampling_timesteps(sched(), SamplerSpec{});
}

}  // namespace

TEST(StagePlan, EvenSplit)
{
    const StagePlan p = stage_plan(100, 4);
    EXPECT_EQ(p.estimation_steps, (std::vector<std::size_t>{0, 25, 50, 75}));
    EXPECT_TRUE(p.is_estimation_step(25));
    EXPECT_FALSE(p.is_estimation_step(26));
    EXPECT_EQ(p.stage_of(0), 0u);
    EXPECT_EQ(p.stage_of(49), 1u);
    EXPECT_EQ(p.stage_of(99), 3u);
    EXPECT_EQ(stage_plan(7, 3).estimation_steps, (std::vector<std::size_t>{0, 2, 4}));
}

TEST(StagePlan, Extremes)
{
    EXPECT_EQ(stage_plan(100, 1).estimation_steps, (std::vector<std::size_t>{0}));
    const StagePlan every = stage_plan(10, 10);
    for (std::size_t i = 0; i < 10; ++i)
        EXPECT_TRUE(every.is_estimation_step(i));
    const StagePlan none = stage_plan(100, 0);
    EXPECT_EQ(none.num_stages(), 0u);
    EXPECT_FALSE(none.stage_of(50).has_value());
    EXPECT_THROW(stage_plan(3, 4), std::invalid_argument);
}

TEST(Estimator, RecoversZeroAndBias)
{
    Rng rng(1);
    const Tensor x_prev = randn(rng, {4096, 2});
    const double alpha = 0.98;
    for (double bias : {0.0, 0.1}) {
        const ProbeOracle net(x_prev, alpha, bias, 0.0, 2);
        Rng probe(3);
        const NoiseEstimate est = estimate_noise(net, x_prev, 40, alpha, probe);
        EXPECT_EQ(est.batch, 4096u);
        for (std::size_t j = 0; j < 2; ++j) {
            EXPECT_NEAR(est.mu[j], bias, 1e-9);
            EXPECT_NEAR(est.sigma[j], 0.0, 1e-9);
        }
    }
}

TEST(Estimator, RecoversJitterDistribution)
{
    Rng rng(4);
    const std::size_t n = 4096;
    const Tensor x_prev = randn(rng, {n, 2});
    const double alpha = 0.95;
    const ProbeOracle net(x_prev, alpha, 0.0, 0.2, 5);
    Rng probe(6);
    const NoiseEstimate est = estimate_noise(net, x_prev, 10, alpha, probe);
    for (std::size_t j = 0; j < 2; ++j) {
        EXPECT_NEAR(est.mu[j], 0.0, 4 * 0.2 / std::sqrt(n));
        EXPECT_NEAR(est.sigma[j], 0.2, 4 * 0.2 / std::sqrt(2.0 * n));
    }
}

TEST(Estimator, ErrorShrinksAsInverseSquareRootOfBatch)
{
    auto rms_error = [](std::size_t batch) {
        double sq = 0;
        const int trials = 400;
        for (int k = 0; k < trials; ++k) {
            Rng rng(100 + k);
            const Tensor x_prev = randn(rng, {batch, 1});
            const ProbeOracle net(x_prev, 0.9, 0.1, 0.5, 1000 + k);
            const NoiseEstimate est = estimate_noise(net, x_prev, 1, 0.9, rng);
            sq += (est.mu[0] - 0.1) * (est.mu[0] - 0.1);
        }
        return std::sqrt(sq / trials);
    };
    const double small = rms_error(64), large = rms_error(1024);
    EXPECT_NEAR(small, 0.5 / 8, 0.5 / 8 * 0.2);
    EXPECT_NEAR(small / large, 4.0, 1.0);
}

TEST(Estimator, ScheduleOverloadUsesStepAlpha)
{
    Rng rng(7);
    const Tensor x_prev = randn(rng, {16, 2});
    const ProbeOracle net(x_prev, sched().alpha(30), 0.25, 0.0, 8);
    Rng probe(9);
    const NoiseEstimate est = estimate_noise(net, x_prev, 30, sched(), probe);
    EXPECT_NEAR(est.mu[0], 0.25, 1e-9);
    Rng probe2(9);
    EXPECT_THROW(estimate_noise(net, Tensor({0, 2}), 30, sched(), probe2), ShapeError);
}

TEST(Correction, MeanOnlySubtracts)
{
    const Tensor eps = Tensor::matrix({{1.0, 2.0}, {3.0, 4.0}});
    NoiseEstimate est{{0.5, -1.0}, {0.3, 0.3}, 0, 2};
    EXPECT_EQ(apply_correction(eps, est, CorrectionMode::MeanOnly), Tensor::matrix({{0.5, 3.0}, {2.5, 5.0}}));
    EXPECT_EQ(apply_correction(eps, NoiseEstimate::zero(2), CorrectionMode::MeanVar), eps);
    EXPECT_THROW(apply_correction(eps, NoiseEstimate::zero(3), CorrectionMode::MeanOnly), ShapeError);
}

TEST(Correction, MeanVarShrinksSpread)
{
    Rng rng(10);
    const Tensor eps = add_row(scale(randn(rng, {5000, 2}), 1.3), std::vector<double>{0.4, -0.2});
    NoiseEstimate est{{0.1, 0.1}, {0.5, 2.0}, 0, 5000};
    const Tensor out = apply_correction(eps, est, CorrectionMode::MeanVar);
    const auto m0 = column_mean(eps), s0 = column_std(eps);
    const auto m1 = column_mean(out), s1 = column_std(out);
    EXPECT_NEAR(m1[0], m0[0] - 0.1, 1e-12);
    EXPECT_NEAR(s1[0], std::sqrt(s0[0] * s0[0] - 0.25), 1e-12);
    // sigma_q above the observed spread collapses to the 1e-6 floor
    EXPECT_NEAR(s1[1], 1e-6, 1e-12);
    EXPECT_EQ(to_string(CorrectionMode::MeanVar), "mean_var");
    EXPECT_EQ(parse_correction_mode("mean"), CorrectionMode::MeanOnly);
    EXPECT_THROW(parse_correction_mode("var"), std::invalid_argument);
}

TEST(SampleLoop, ZeroStagesIsPlainSampling)
{
    const AnalyticDenoiser net(data(), sched());
    const auto steps = ddpm_steps();
    Rng xr(11);
    const Tensor x_T = randn(xr, {64, 2});
    const Rng noise(12), probe(13);
    const SampleResult r = corrected_sample_loop(net, sched(), steps, stage_plan(100, 0), x_T, noise, probe);
    Tensor x = x_T;
    for (std::size_t i = 0; i < steps.size(); ++i) {
        Rng step = noise.fork("step", i);
        const Tensor z = randn(step, x.shape());
        x = sampler_update(SamplerKind::Ddpm, x, net.predict(x, steps[i]), steps[i],
                           i + 1 < steps.size() ? steps[i + 1] : 0, sched(), z);
    }
    EXPECT_EQ(r.samples, x);
    EXPECT_EQ(r.evaluations, 100u);
    EXPECT_TRUE(r.estimates.empty());
}

TEST(SampleLoop, OneExtraEvaluationPerStage)
{
    const AnalyticDenoiser net(data(), sched());
    const auto steps = ddpm_steps();
    Rng xr(14);
    const Tensor x_T = randn(xr, {32, 2});
    for (std::size_t k : {1, 4, 10}) {
        const SampleResult r =
            corrected_sample_loop(net, sched(), steps, stage_plan(100, k), x_T, Rng(15), Rng(16));
        EXPECT_EQ(r.evaluations, 100u + k);
        ASSERT_EQ(r.estimates.size(), k);
        for (std::size_t i = 0; i < k; ++i)
            EXPECT_EQ(r.estimates[i].stage, i);
        std::size_t flagged = 0;
        for (std::size_t i = 0; i < r.steps.size(); ++i)
            if (r.steps[i].estimation) {
                EXPECT_EQ(i, r.estimates[flagged].stage * 100 / k);
                ++flagged;
            }
        EXPECT_EQ(flagged, k);
    }
    EXPECT_THROW(corrected_sample_loop(net, sched(), steps, stage_plan(50, 2), x_T, Rng(15), Rng(16)),
                 std::invalid_argument);
}

TEST(SampleLoop, CorrectionAppliesFromItsStageOnward)
{
    const AnalyticDenoiser net(data(), sched());
    const Biased biased(net, {0.3, -0.2});
    const auto steps = ddpm_steps();
    Rng xr(17);
    const Tensor x_T = randn(xr, {256, 2});
    LoopOptions keep;
    keep.keep_eps = true;
    const SampleResult plain = corrected_sample_loop(biased, sched(), steps, stage_plan(100, 0), x_T, Rng(18),
                                                     Rng(19), keep);
    const SampleResult staged = corrected_sample_loop(biased, sched(), steps, StagePlan{{50}, 100}, x_T, Rng(18),
                                                      Rng(19), keep);
    for (std::size_t i = 0; i < 50; ++i)
        EXPECT_EQ(staged.eps[i], plain.eps[i]) << "step " << i;
    EXPECT_NE(staged.eps[50], plain.eps[50]);
}

TEST(SampleLoop, ConstantBiasIsRemoved)
{
    const AnalyticDenoiser net(data(), sched());
    const Biased biased(net, {0.05, -0.05});
    const auto steps = ddpm_steps();
    Rng xr(20);
    const Tensor x_T = randn(xr, {4096, 2});
    const Rng noise(21), probe(22);
    const auto fp = corrected_sample_loop(net, sched(), steps, stage_plan(100, 0), x_T, noise, probe);
    const auto raw = corrected_sample_loop(biased, sched(), steps, stage_plan(100, 0), x_T, noise, probe);
    const auto fixed = corrected_sample_loop(biased, sched(), steps, stage_plan(100, 4), x_T, noise, probe);
    const auto dist = [&](const SampleResult &r) {
        const auto a = column_mean(r.samples), b = column_mean(fp.samples);
        return std::hypot(a[0] - b[0], a[1] - b[1]);
    };
    EXPECT_LT(dist(fixed), 0.5 * dist(raw));
}
