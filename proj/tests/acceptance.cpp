// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>

#include "qncd/harness.hpp"

using namespace qncd;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
    bool pass = false;
    std::string detail;
};

int failures = 0;

void report(int id, const std::string &name, double seconds, double limit, const Outcome &o)
{
    const bool in_time = limit <= 0 || seconds < limit;
    const bool ok = o.pass && in_time;
    failures += !ok;
    std::printf("%s %2d %-28s %s (%.1fs%s)\n", ok ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str(), seconds,
                in_time ? "" : ", over time limit");
    std::fflush(stdout);
}

void criterion(int id, const std::string &name, double limit, const std::function<Outcome()> &body)
{
    const auto start = Clock::now();
    Outcome o;
    try {
        o = body();
    } catch (const std::exception &e) {
        o = {false, std::string("threw: ") + e.what()};
    }
    report(id, name, std::chrono::duration<double>(Clock::now() - start).count(), limit, o);
}

std::string fmt(const char *f, double a, double b = 0, double c = 0, double d = 0)
{
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c, d);
    return buf;
}

double median(std::vector<double> v)
{
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double rel_diff(const Tensor &a, const Tensor &b)
{
    return std::sqrt(squared_norm(sub(a, b)) / std::max(squared_norm(a), 1e-300));
}

// 1
Outcome smoothing_equivalence()
{
    Rng rng(101);
    const NoiseSchedule s = linear_schedule(100, 1e-4, 0.02);
    double worst = 0;
    for (auto style : {FusionStyle::ScaleShift, FusionStyle::AddGroupNorm})
        for (int k = 0; k < 100; ++k) {
            const std::size_t groups = 1 + rng.uniform_int(0, 3);
            const std::size_t c = groups * (1 + rng.uniform_int(1, 8));
            const std::size_t in = 1 + rng.uniform_int(0, 5), out = 1 + rng.uniform_int(0, 5);
            const std::size_t emb = 2 * (1 + rng.uniform_int(0, 7));
            ResBlock b = make_resblock(in, c, out, emb, style, false, groups, rng);
            for (auto &[name, p] : b.parameters())
                for (auto &v : p->values())
                    v += 0.5 * rng.normal();
            const auto factors = style == FusionStyle::ScaleShift ? compute_s_scaleshift(b, s)
                                                                  : compute_s_groupnorm(b, s);
            const ResBlock f = fold(factors, b);
            const Tensor h = randn(rng, {16, in});
            std::vector<int> ts(16);
            for (auto &t : ts)
                t = static_cast<int>(rng.uniform_int(1, 100));
            const Tensor e = embedding_rows(ts, emb);
            worst = std::max(worst, rel_diff(resblock_forward(b, h, e), resblock_forward(f, h, e)));
        }
    return {worst <= 1e-10, fmt("max relative difference %.2e over 200 blocks (limit 1e-10)", worst)};
}

// 2
Outcome quantizer_oracle()
{
    Rng rng(202);
    int agree = 0;
    for (int k = 0; k < 50; ++k) {
        const std::size_t rows = 20 + rng.uniform_int(0, 100);
        Tensor x = scale(randn(rng, {rows, 8}), std::exp(rng.normal()));
        x[rng.uniform_int(0, static_cast<std::int64_t>(x.size()) - 1)] *= 10.0;
        const bool sym = k % 2 == 0;
        const int bits = k % 3 == 0 ? 4 : (k % 3 == 1 ? 6 : 8);
        const std::vector<Tensor> samples{x};
        const QuantParams got = mse_calibrate(samples, bits, Granularity::PerTensor, sym, 100);
        double lo = INFINITY, hi = -INFINITY;
        for (double v : x.values()) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        double best = INFINITY;
        int arg = 0;
        for (int g = 1; g <= 100; ++g) {
            const QuantParams p = params_for_range(bits, sym, std::span(&lo, 1), std::span(&hi, 1), g / 100.0);
            double sse = 0;
            for (double v : x.values()) {
                const double q = std::clamp(std::round(v / p.scale[0]) + p.zero_point[0], double(p.qmin),
                                            double(p.qmax));
                sse += std::pow((q - p.zero_point[0]) * p.scale[0] - v, 2);
            }
            if (sse < best) {
                best = sse;
                arg = g;
            }
        }
        agree += std::abs(got.clip_ratio[0] - arg / 100.0) < 1e-12;
    }
    std::size_t bound_violations = 0, idem_violations = 0;
    const std::size_t n = 1000000;
    for (std::size_t i = 0; i < n; ++i) {
        const double scale = std::exp(rng.normal());
        const std::int64_t zp = rng.uniform_int(0, 255);
        const double v = (rng.uniform() * 255.0 - static_cast<double>(zp)) * scale;
        const double q = quant_dequant(v, scale, zp, 0, 255);
        bound_violations += std::abs(q - v) > scale / 2 * (1 + 1e-12);
        idem_violations += quant_dequant(q, scale, zp, 0, 255) != q;
    }
    const bool ok = agree == 50 && bound_violations == 0 && idem_violations == 0;
    return {ok, fmt("argmin agreement %g/50, bound violations %g, idempotence violations %g over 1e6 values", agree,
                    static_cast<double>(bound_violations), static_cast<double>(idem_violations))};
}

// 3
Outcome gradient_check()
{
    double worst = 0;
    std::string worst_name;
    for (auto style : {FusionStyle::ScaleShift, FusionStyle::AddGroupNorm}) {
        ModelSpec spec;
        spec.hidden = 8;
        spec.emb_dim = 6;
        spec.blocks = 2;
        spec.groups = 2;
        spec.style = style;
        Rng rng(303);
        DenoiserModel m = DenoiserModel::create(spec, rng);
        for (auto &[name, p] : m.parameters())
            for (auto &v : p->values())
                v += 0.1 * rng.normal();
        const Tensor x = randn(rng, {6, 2}), target = randn(rng, {6, 2});
        const std::vector<int> ts{1, 9, 33, 50, 77, 100};
        DenoiserModel grads = m, scratch = m;
        loss_and_gradients(m, x, ts, target, grads);
        auto params = m.parameters();
        auto gp = grads.parameters();
        for (std::size_t p = 0; p < params.size(); ++p) {
            Tensor &w = *params[p].second;
            double num = 0, den = 0;
            for (std::size_t i = 0; i < w.size(); ++i) {
                const double keep = w[i], h = 1e-6;
                w[i] = keep + h;
                const double up = loss_and_gradients(m, x, ts, target, scratch);
                w[i] = keep - h;
                const double down = loss_and_gradients(m, x, ts, target, scratch);
                w[i] = keep;
                const double fd = (up - down) / (2 * h);
                num += std::pow(fd - (*gp[p].second)[i], 2);
                den += fd * fd;
            }
            const double rel = std::sqrt(num / std::max(den, 1e-30));
            if (rel > worst) {
                worst = rel;
                worst_name = to_string(style) + " " + params[p].first;
            }
        }
    }
    return {worst <= 1e-4, fmt("worst relative error %.2e", worst) + " (" + worst_name + ", limit 1e-4)"};
}

// 4
Outcome denoiser_quality(const DenoiserModel &trained, const ExperimentConfig &config)
{
    const NoiseSchedule s = config.schedule();
    const AnalyticDenoiser oracle(config.data, s);
    Rng rng(404);
    std::ostringstream os;
    bool ok = true;
    for (int t : {10, 50, 90}) {
        const Tensor x0 = config.data.sample(rng, 20000);
        const Tensor eps = randn(rng, x0.shape());
        const Tensor x_t = marginal_diffuse(x0, t, s, eps);
        const double ratio = eps_mse(trained, x_t, t, eps) / eps_mse(oracle, x_t, t, eps);
        ok = ok && ratio <= 1.15;
        os << "t=" << t << " ratio " << fmt("%.4f", ratio) << "; ";
    }
    os << "limit 1.15";
    return {ok, os.str()};
}

// 5
class ProbeOracle : public NoisePredictor {
public:
    ProbeOracle(Tensor x_prev, double alpha, double bias, double jitter)
        : x_prev_(std::move(x_prev)), alpha_(alpha), bias_(bias), jitter_(jitter), rng_(505)
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

Outcome estimator_recovery()
{
    const NoiseSchedule s = linear_schedule(100, 1e-4, 0.02);
    Rng rng(506);
    const Tensor x_prev = randn(rng, {4096, 2});
    Rng p1(507), p2(508);
    const NoiseEstimate plain = estimate_noise(ProbeOracle(x_prev, s.alpha(50), 0.1, 0.0), x_prev, 50, s, p1);
    const NoiseEstimate noisy = estimate_noise(ProbeOracle(x_prev, s.alpha(50), 0.1, 0.2), x_prev, 50, s, p2);
    bool ok = true;
    for (std::size_t j = 0; j < 2; ++j) {
        ok = ok && std::abs(plain.mu[j] - 0.1) <= 0.01 && std::abs(noisy.mu[j] - 0.1) <= 0.01;
        ok = ok && noisy.sigma[j] >= 0.18 && noisy.sigma[j] <= 0.22;
    }
    return {ok, fmt("mu %.5f %.5f; with jitter mu %.5f, sigma %.5f", plain.mu[0], plain.mu[1], noisy.mu[0],
                    noisy.sigma[0]) +
                    fmt(" %.5f (want mu within 0.1 +- 0.01, sigma in [0.18, 0.22])", noisy.sigma[1])};
}

// 6
Outcome intra_effect(const DenoiserModel &model, const std::shared_ptr<const CalibrationSet> &calib,
                     const ExperimentConfig &config)
{
    ExperimentConfig c = config;
    c.bits = BitConfig::parse("W8A8");
    const QuantizedDenoiser ptq = build_variant(model, calib, c, Variant::Ptq);
    const QuantizedDenoiser smooth = build_variant(model, calib, c, Variant::Intra);
    const auto &plan = *smooth.smoothing();
    bool ok = true;
    std::ostringstream os;
    for (std::size_t blk = 0; blk < model.blocks().size(); ++blk) {
        const HookPoint hp{static_cast<int>(blk), HookKind::Fusion};
        const auto &acts = calib->activations.at(hp);
        const auto &s = plan.factors[blk];
        std::size_t wins = 0;
        std::vector<double> range_raw(s.size(), 0.0), range_smooth(s.size(), 0.0);
        for (const Tensor &a : acts) {
            Tensor scaled = a;
            for (std::size_t r = 0; r < a.rows(); ++r)
                for (std::size_t j = 0; j < a.cols(); ++j) {
                    scaled.at(r, j) /= s[j];
                    range_raw[j] = std::max(range_raw[j], std::abs(a.at(r, j)));
                    range_smooth[j] = std::max(range_smooth[j], std::abs(scaled.at(r, j)));
                }
            const double raw_mse = squared_norm(sub(quant_dequant(a, ptq.activation_params().at(hp)), a));
            Tensor back = quant_dequant(scaled, smooth.activation_params().at(hp));
            for (std::size_t r = 0; r < a.rows(); ++r)
                for (std::size_t j = 0; j < a.cols(); ++j)
                    back.at(r, j) *= s[j];
            wins += squared_norm(sub(back, a)) < raw_mse;
        }
        auto ratio = [](std::vector<double> v) {
            std::vector<double> w = v;
            std::nth_element(w.begin(), w.begin() + w.size() / 2, w.end());
            return *std::max_element(v.begin(), v.end()) / w[w.size() / 2];
        };
        const double frac = static_cast<double>(wins) / acts.size();
        const double before = ratio(range_raw), after = ratio(range_smooth);
        ok = ok && frac >= 0.9 && after < before;
        os << "block " << blk << ": mse lower on " << fmt("%.0f%%", 100 * frac) << " of " << acts.size()
           << " batches, max/median range " << fmt("%.2f -> %.2f", before, after) << "; ";
    }
    return {ok, os.str()};
}

struct Ablation {
    RunOutputs out;
    std::vector<std::uint64_t> seeds;

    const TrajectoryRecord &trajectory(Variant v, std::uint64_t seed) const
    {
        const std::string tag = "-" + to_string(v) + "-s" + std::to_string(seed);
        for (const auto &t : out.trajectories)
            if (t.run_id.size() > tag.size() && t.run_id.ends_with(tag))
                return t;
        throw std::runtime_error("no trajectory for" + tag);
    }
    const SummaryRow &summary(Variant v, std::uint64_t seed) const
    {
        const std::string tag = "-" + to_string(v) + "-s" + std::to_string(seed);
        for (const auto &r : out.summary)
            if (r.run_id.ends_with(tag))
                return r;
        throw std::runtime_error("no summary for" + tag);
    }
    std::vector<double> swd(Variant v) const
    {
        std::vector<double> out_v;
        for (auto seed : seeds)
            out_v.push_back(summary(v, seed).swd_to_fp);
        return out_v;
    }
};

double mean_gap(const TrajectoryRow &a, const TrajectoryRow &b, std::size_t j)
{
    return std::abs(a.mean[j] - b.mean[j]);
}

// 7
Outcome inter_effect(const Ablation &w8)
{
    const std::size_t dim = w8.trajectory(Variant::Fp, w8.seeds[0]).rows.front().mean.size();
    const std::size_t n = w8.trajectory(Variant::Fp, w8.seeds[0]).rows.size();
    bool ok = true;
    std::ostringstream os;
    os << "final |mean gap| corrected vs uncorrected:";
    for (std::size_t j = 0; j < dim; ++j) {
        std::vector<double> corr, raw;
        for (auto seed : w8.seeds) {
            const auto &fp = w8.trajectory(Variant::Fp, seed).rows.back();
            corr.push_back(mean_gap(w8.trajectory(Variant::Inter, seed).rows.back(), fp, j));
            raw.push_back(mean_gap(w8.trajectory(Variant::Ptq, seed).rows.back(), fp, j));
        }
        ok = ok && median(corr) < median(raw);
        os << " dim" << j << fmt(" %.5f vs %.5f", median(corr), median(raw));
    }
    // L1 gap over dimensions per step, median over seeds.
    std::vector<double> gap(n + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> per_seed;
        for (auto seed : w8.seeds) {
            const auto &a = w8.trajectory(Variant::Inter, seed).rows[i];
            const auto &b = w8.trajectory(Variant::Fp, seed).rows[i];
            double g = 0;
            for (std::size_t j = 0; j < dim; ++j)
                g += mean_gap(a, b, j);
            per_seed.push_back(g);
        }
        gap[i + 1] = median(per_seed);  // gap[0]: shared x_T
    }
    const auto plan = stage_plan(n, 4);
    int shrinking = 0;
    os << "; gap at estimation steps (before -> after):";
    for (std::size_t k : plan.estimation_steps) {
        shrinking += gap[k + 1] < gap[k];
        os << fmt(" %.5f->%.5f", gap[k], gap[k + 1]);
    }
    ok = ok && shrinking >= 3;
    os << "; shrinking in " << shrinking << "/4 stages (need 3)";
    return {ok, os.str()};
}

// 8
Outcome ordering(const Ablation &w8, const Ablation &w4)
{
    const double qncd = median(w8.swd(Variant::Qncd)), intra = median(w8.swd(Variant::Intra)),
                 inter = median(w8.swd(Variant::Inter)), ptq = median(w8.swd(Variant::Ptq));
    bool ok = qncd <= std::min(intra, inter) && std::min(intra, inter) <= ptq;
    std::ostringstream os;
    os << fmt("W8A8 median swd qncd %.5f intra %.5f inter %.5f ptq %.5f", qncd, intra, inter, ptq);
    os << fmt("; W4A6 median swd qncd %.5f intra %.5f inter %.5f ptq %.5f", median(w4.swd(Variant::Qncd)),
              median(w4.swd(Variant::Intra)), median(w4.swd(Variant::Inter)), median(w4.swd(Variant::Ptq)));
    os << "; W4A6 qncd - ptq per seed:";
    for (auto seed : w4.seeds) {
        const double margin = w4.summary(Variant::Ptq, seed).swd_to_fp - w4.summary(Variant::Qncd, seed).swd_to_fp;
        ok = ok && margin > 0;
        os << fmt(" %+.5f", -margin);
    }
    return {ok, os.str()};
}

// 9
Outcome snr_cosine(const Ablation &w8)
{
    std::vector<double> cq, cp;
    for (auto seed : w8.seeds) {
        cq.push_back(w8.summary(Variant::Qncd, seed).final_cosine);
        cp.push_back(w8.summary(Variant::Ptq, seed).final_cosine);
    }
    bool ok = median(cq) >= median(cp);
    std::ostringstream os;
    os << fmt("median final cosine qncd %.6f vs ptq %.6f", median(cq), median(cp));
    os << "; median snr at estimation steps qncd vs intra:";
    const auto &rows0 = w8.trajectory(Variant::Qncd, w8.seeds[0]).rows;
    for (std::size_t i = 0; i < rows0.size(); ++i) {
        if (!rows0[i].estimation)
            continue;
        std::vector<double> a, b;
        for (auto seed : w8.seeds) {
            a.push_back(w8.trajectory(Variant::Qncd, seed).rows[i].snr_db);
            b.push_back(w8.trajectory(Variant::Intra, seed).rows[i].snr_db);
        }
        ok = ok && median(a) >= median(b);
        os << " t=" << rows0[i].t << fmt(" %.2f vs %.2f dB", median(a), median(b));
    }
    return {ok, os.str()};
}

// 10
Outcome cost(const Ablation &w8, const DenoiserModel &model, const ExperimentConfig &config)
{
    const NoiseSchedule s = config.schedule();
    const auto steps = sampling_timesteps(s, config.sampler);
    Rng rng(1010);
    const SampleResult r =
        corrected_sample_loop(model, s, steps, stage_plan(steps.size(), 4), randn(rng, {64, 2}), Rng(1), Rng(2));
    bool ok = steps.size() == 100 && r.evaluations == 104;
    std::uint64_t logged = 0;
    for (auto seed : w8.seeds) {
        logged = w8.summary(Variant::Qncd, seed).eval_count;
        ok = ok && logged == 104 && w8.summary(Variant::Ptq, seed).eval_count == 100;
    }
    return {ok, "direct loop " + std::to_string(r.evaluations) + " evaluations per batch, logged eval_count " +
                    std::to_string(logged) + " (want 104)"};
}

// 11
Outcome determinism(const ExperimentConfig &config, const std::string &weights)
{
    const fs::path root = fs::temp_directory_path() / "qncd_acceptance_det";
    fs::remove_all(root);
    fs::create_directories(root);
    ExperimentConfig c = config;
    c.weights_path = weights;
    c.out_dir = (root / "out").string();
    write_text_file((root / "config.toml").string(), serialize_config(c));
    std::vector<std::map<std::string, std::string>> runs;
    for (const char *dir : {"a", "b"}) {
        const std::string cmd = std::string(QNCD_CLI) + " run --config " + (root / "config.toml").string() +
                                " --seed 0 --out " + (root / dir).string() + " > /dev/null 2>&1";
        if (std::system(cmd.c_str()) != 0)
            return {false, "qncd run failed"};
        std::map<std::string, std::string> files;
        for (const auto &e : fs::directory_iterator(root / dir))
            if (e.path().extension() == ".csv")
                files[e.path().filename().string()] = read_text_file(e.path().string());
        runs.push_back(std::move(files));
    }
    const bool ok = runs[0] == runs[1] && runs[0].size() == 4;
    return {ok, std::to_string(runs[0].size()) + " CSV files, " + (ok ? "byte-identical" : "differ")};
}

}  // namespace

int main()
{
    criterion(1, "smoothing equivalence", 5, smoothing_equivalence);
    criterion(2, "quantizer oracle", 30, quantizer_oracle);
    criterion(3, "gradient correctness", 60, gradient_check);

    ExperimentConfig config = load_config(QNCD_TOY_CONFIG);
    const fs::path work = fs::temp_directory_path() / "qncd_acceptance";
    fs::create_directories(work);
    DenoiserModel trained;
    criterion(4, "denoiser quality", 300, [&] {
        trained = obtain_model(config);
        return denoiser_quality(trained, config);
    });
    const std::string weights = (work / "weights.bin").string();
    save_weights(trained, weights);

    criterion(5, "noise estimator recovery", 10, estimator_recovery);

    const DenoiserModel model = prepare_model(trained, config);
    const auto calib = calibrate(model, config);
    criterion(6, "intra effect", 0, [&] { return intra_effect(model, calib, config); });

    const std::vector<Variant> variants(std::begin(kAblationVariants), std::end(kAblationVariants));
    const auto start = Clock::now();
    Ablation w8{{}, config.seeds}, w4{{}, config.seeds};
    ExperimentConfig c8 = config, c4 = config;
    c8.bits = BitConfig::parse("W8A8");
    c4.bits = BitConfig::parse("W4A6");
    std::string ablation_error;
    try {
        w8.out = run_variants(c8, model, calib, variants);
        w4.out = run_variants(c4, model, calib, variants);
    } catch (const std::exception &e) {
        ablation_error = e.what();
    }
    const double ablation_s = std::chrono::duration<double>(Clock::now() - start).count();
    auto guarded = [&](auto &&fn) {
        return [&, fn] { return ablation_error.empty() ? fn() : Outcome{false, "ablation failed: " + ablation_error}; };
    };

    criterion(7, "inter effect", 0, guarded([&] { return inter_effect(w8); }));
    const auto t8 = Clock::now();
    Outcome o8 = ablation_error.empty() ? ordering(w8, w4) : Outcome{false, "ablation failed: " + ablation_error};
    report(8, "end-to-end ordering", ablation_s + std::chrono::duration<double>(Clock::now() - t8).count(), 600, o8);
    criterion(9, "snr/cosine ordering", 0, guarded([&] { return snr_cosine(w8); }));
    criterion(10, "cost accounting", 0, guarded([&] { return cost(w8, model, config); }));
    criterion(11, "determinism", 0, [&] { return determinism(config, weights); });

    std::printf("%d of 11 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
