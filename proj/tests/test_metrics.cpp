#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "qncd/metrics.hpp"

using namespace qncd;

namespace {

/// Quantile-coupling form of W1 for equal sizes: mean |a_(i) - b_(i)|.
double sorted_pair_w1(std::vector<double> a, std::vector<double> b)
{
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    long double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        s += std::abs(a[i] - b[i]);
    return static_cast<double>(s / a.size());
}

struct Quantized {
    NoiseSchedule s = linear_schedule(100, 1e-4, 0.02);
    DenoiserModel model;
    std::shared_ptr<const CalibrationSet> calib;

    Quantized()
    {
        ModelSpec spec;
        spec.hidden = 16;
        spec.emb_dim = 8;
        Rng rng(1);
        model = DenoiserModel::create(spec, rng);
        Rng crng(2);
        calib = std::make_shared<const CalibrationSet>(collect_calibration(model, s, {}, 100, crng));
    }
};

}  // namespace

TEST(Snr, Examples)
{
    Rng rng(1);
    const Tensor fp = randn(rng, {50, 2});
    EXPECT_EQ(snr_db(fp, fp), kInfiniteSnr);
    EXPECT_NEAR(snr_db(fp, Tensor(fp.shape())), 0.0, 1e-12);
    EXPECT_NEAR(snr_db(fp, scale(fp, 1.1)), 20.0, 1e-9);
    EXPECT_NEAR(snr_db(fp, scale(fp, 0.99)), 40.0, 1e-9);
    EXPECT_THROW(snr_db(Tensor(fp.shape()), fp), std::domain_error);
    EXPECT_THROW(snr_db(fp, Tensor({50, 3})), ShapeError);
}

TEST(Snr, MonotoneInNoise)
{
    Rng rng(2);
    const Tensor fp = randn(rng, {100, 2});
    const Tensor noise = randn(rng, {100, 2});
    double prev = kInfiniteSnr;
    for (double k : {0.001, 0.01, 0.1, 1.0}) {
        const double v = snr_db(fp, add(fp, scale(noise, k)));
        EXPECT_LT(v, prev);
        prev = v;
    }
}

TEST(CosineSimilarity, Examples)
{
    const Tensor a = Tensor::matrix({{1.0, 0.0}});
    EXPECT_EQ(cosine_similarity(a, a), 1.0);
    EXPECT_EQ(cosine_similarity(a, Tensor::matrix({{0.0, 3.0}})), 0.0);
    EXPECT_NEAR(cosine_similarity(a, Tensor::matrix({{1.0, 1.0}})), std::sqrt(0.5), 1e-15);
    EXPECT_EQ(cosine_similarity(a, Tensor::matrix({{-2.0, 0.0}})), -1.0);
    EXPECT_THROW(cosine_similarity(a, Tensor({1, 2})), std::domain_error);
}

TEST(Wasserstein1d, Examples)
{
    EXPECT_NEAR(wasserstein_1d({0.0, 1.0}, {0.5, 1.5}), 0.5, 1e-15);
    EXPECT_NEAR(wasserstein_1d({0.0}, {0.0, 1.0}), 0.5, 1e-15);
    EXPECT_NEAR(wasserstein_1d({3.0, 3.0, 3.0}, {-1.0}), 4.0, 1e-15);
    EXPECT_EQ(wasserstein_1d({1.0, 2.0}, {2.0, 1.0}), 0.0);
    EXPECT_THROW(wasserstein_1d({}, {1.0}), std::invalid_argument);
}

TEST(Wasserstein1d, MatchesSortedCouplingAndIsSymmetric)
{
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor a = randn(rng, {300});
        const Tensor b = rand_uniform(rng, {300}, -1.0, 2.0);
        const double w = wasserstein_1d(a.data(), b.data());
        EXPECT_NEAR(w, sorted_pair_w1(a.data(), b.data()), 1e-12);
        EXPECT_NEAR(w, wasserstein_1d(b.data(), a.data()), 1e-12);
    }
}

TEST(SlicedWasserstein, ZeroForIdenticalSets)
{
    Rng rng(4);
    const Tensor a = randn(rng, {200, 2});
    EXPECT_EQ(sliced_wasserstein(a, a, 64, rng), 0.0);
}

TEST(SlicedWasserstein, PointMassesMatchTwoOverPi)
{
    // Two point masses at distance c in the plane: E|<c, theta>| = 2c / pi.
    const double c = 1.7;
    const Tensor a({10, 2});
    Tensor b({10, 2});
    for (std::size_t r = 0; r < 10; ++r)
        b.at(r, 0) = c;
    Rng rng(5);
    const Tensor dirs = random_directions(2, 200000, rng);
    EXPECT_NEAR(sliced_wasserstein(a, b, dirs), 2 * c / std::numbers::pi, 0.005);
    for (std::size_t r = 0; r < 50; ++r)
        EXPECT_NEAR(std::hypot(dirs.at(r, 0), dirs.at(r, 1)), 1.0, 1e-15);
}

TEST(SlicedWasserstein, AgreesWithIndependentImplementation)
{
    Rng rng(6);
    const Tensor a = randn(rng, {500, 2});
    const Tensor b = add_row(scale(randn(rng, {500, 2}), 0.7), std::vector<double>{0.5, -0.3});
    Rng dir_rng(7);
    const Tensor dirs = random_directions(2, 256, dir_rng);
    // Reference: angle grid on the half circle (|<x, -theta>| projections give the same W1).
    long double ref = 0;
    const int k = 2000;
    for (int i = 0; i < k; ++i) {
        const double th = std::numbers::pi * (i + 0.5) / k;
        std::vector<double> pa(500), pb(500);
        for (std::size_t r = 0; r < 500; ++r) {
            pa[r] = a.at(r, 0) * std::cos(th) + a.at(r, 1) * std::sin(th);
            pb[r] = b.at(r, 0) * std::cos(th) + b.at(r, 1) * std::sin(th);
        }
        ref += sorted_pair_w1(pa, pb);
    }
    ref /= k;
    const double got = sliced_wasserstein(a, b, dirs);
    EXPECT_NEAR(got, static_cast<double>(ref), 0.05 * static_cast<double>(ref));
    EXPECT_NEAR(got, sliced_wasserstein(b, a, dirs), 1e-12);
    EXPECT_THROW(sliced_wasserstein(a, Tensor({5, 3}), dirs), ShapeError);
}

TEST(LayerProfile, FullPrecisionIsExact)
{
    const Quantized f;
    const QuantizedDenoiser fp = quantize_model(f.model, f.calib, BitConfig::parse("WfpAfp"));
    Rng rng(8);
    const auto prof = layer_error_profile(f.model, fp, randn(rng, {64, 2}), 50);
    ASSERT_EQ(prof.size(), 12u);
    for (const auto &e : prof) {
        EXPECT_EQ(e.cosine, 1.0) << e.hook;
        EXPECT_EQ(e.mse, 0.0) << e.hook;
    }
    EXPECT_EQ(prof[3].hook, "blocks.0.fusion");
}

TEST(LayerProfile, ErrorIsCausal)
{
    const Quantized f;
    Rng rng(9);
    const Tensor probe = randn(rng, {64, 2});
    const auto hooks = f.model.hook_points();
    for (std::size_t k : {1u, 3u, 6u, 11u}) {
        QuantizedDenoiser q = quantize_model(f.model, f.calib, BitConfig::parse("W4A4"));
        for (const auto &wp : f.model.weight_points())
            q.set_weight_enabled(wp, false);
        for (std::size_t i = 0; i < hooks.size(); ++i)
            q.set_activation_enabled(hooks[i], i == k);
        const auto prof = layer_error_profile(f.model, q, probe, 50);
        for (std::size_t i = 0; i < k; ++i)
            EXPECT_EQ(prof[i].mse, 0.0) << "upstream of " << hooks[k].path() << ": " << prof[i].hook;
        EXPECT_GT(prof[k].mse, 0.0);
    }
}

TEST(LayerProfile, RejectsForeignModel)
{
    const Quantized f;
    const QuantizedDenoiser q = quantize_model(f.model, f.calib, BitConfig::parse("W8A8"));
    ModelSpec other;
    Rng rng(10);
    EXPECT_THROW(layer_error_profile(DenoiserModel::create(other, rng), q, randn(rng, {4, 2}), 5),
                 std::invalid_argument);
}

TEST(Trajectory, PairsRunWithReference)
{
    SampleResult ref, run;
    for (int i = 0; i < 3; ++i) {
        ref.steps.push_back({3 - i, {0.0, 0.0}, {1.0, 1.0}, false});
        run.steps.push_back({3 - i, {0.1, 0.0}, {1.0, 1.2}, i == 1});
        ref.eps.push_back(Tensor::matrix({{1.0, 0.0}}));
        run.eps.push_back(Tensor::matrix({{1.0, 0.1 * i}}));
    }
    const TrajectoryRecord rec = make_trajectory("r", run, ref);
    ASSERT_EQ(rec.rows.size(), 3u);
    EXPECT_EQ(rec.rows[0].snr_db, kInfiniteSnr);
    EXPECT_NEAR(rec.rows[1].snr_db, 20.0, 1e-9);
    EXPECT_TRUE(rec.rows[1].estimation);
    run.eps.pop_back();
    EXPECT_THROW(make_trajectory("r", run, ref), std::invalid_argument);
}

TEST(Csv, HeadersAndGoldenRows)
{
    TrajectoryRecord rec{"abc-ptq-s0", {{0, 100, {0.5, -0.25}, {1.0, 2.0}, kInfiniteSnr, 1.0, true}}};
    EXPECT_EQ(trajectory_csv({rec}),
              "run_id,step_index,t,mean_0,mean_1,std_0,std_1,snr_db,cosine,is_estimation_step\n"
              "abc-ptq-s0,0,100,0.5,-0.25,1,2,inf,1,1\n");
    EXPECT_EQ(layers_csv({{"x", {"blocks.0.in", 0.999, 1e-5}}}),
              "run_id,hook_path,cosine,mse\nx,blocks.0.in,0.999,1e-05\n");
    const SummaryRow row{"abc-qncd-s3", "W4A6", true, 4, "mean", 3, 0.1 + 0.2, 0.9987654321, 104};
    const std::string text = summary_csv({row});
    EXPECT_EQ(text, "run_id,config_label,intra_enabled,inter_stages,correction_mode,seed,swd_to_fp,final_cosine,"
                    "eval_count\nabc-qncd-s3,W4A6,1,4,mean,3,0.30000000000000004,0.9987654321,104\n");
    const auto back = parse_summary_csv(text);
    ASSERT_EQ(back.size(), 1u);
    EXPECT_EQ(back[0].swd_to_fp, row.swd_to_fp);
    EXPECT_EQ(back[0].final_cosine, row.final_cosine);
    EXPECT_EQ(back[0].eval_count, 104u);
    EXPECT_TRUE(back[0].intra_enabled);
    EXPECT_EQ(summary_csv(back), text);
    EXPECT_THROW(parse_summary_csv("bad,header\n"), std::invalid_argument);
}

TEST(Csv, FormatRealRoundTrips)
{
    Rng rng(11);
    for (int i = 0; i < 1000; ++i) {
        const double v = rng.normal() * std::pow(10.0, rng.uniform_int(-12, 12));
        EXPECT_EQ(std::stod(format_real(v)), v);
    }
    EXPECT_EQ(format_real(kInfiniteSnr), "inf");
}
