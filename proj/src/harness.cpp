#include "qncd/harness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <future>
#include <ostream>
#include <sstream>

#include "qncd/train.hpp"

namespace qncd {

namespace fs = std::filesystem;

std::string to_string(Variant v)
{
    switch (v) {
    case Variant::Fp:
        return "fp";
    case Variant::Ptq:
        return "ptq";
    case Variant::Intra:
        return "intra";
    case Variant::Inter:
        return "inter";
    case Variant::Qncd:
        return "qncd";
    }
    return "?";
}

Variant parse_variant(const std::string &text)
{
    for (Variant v : {Variant::Fp, Variant::Ptq, Variant::Intra, Variant::Inter, Variant::Qncd})
        if (to_string(v) == text)
            return v;
    throw std::invalid_argument("unknown variant '" + text + "' (expected fp, ptq, intra, inter or qncd)");
}

Variant variant_of(const ExperimentConfig &config)
{
    const bool inter = config.inter_stages > 0;
    if (config.intra && inter)
        return Variant::Qncd;
    if (config.intra)
        return Variant::Intra;
    if (inter)
        return Variant::Inter;
    return config.bits.full_precision() ? Variant::Fp : Variant::Ptq;
}

ExperimentConfig with_variant(const ExperimentConfig &config, Variant v)
{
    ExperimentConfig out = config;
    const bool inter = v == Variant::Inter || v == Variant::Qncd;
    if (inter && config.inter_stages == 0)
        throw ConfigError("variant " + to_string(v) + " needs correction.inter_stages > 0");
    out.intra = v == Variant::Intra || v == Variant::Qncd;
    out.inter_stages = inter ? config.inter_stages : 0;
    if (v == Variant::Fp)
        out.bits = BitConfig{};
    return out;
}

StageError::StageError(std::string stage, const std::string &what)
    : std::runtime_error(stage + ": " + what), stage_(std::move(stage))
{
}

DenoiserModel obtain_model(const ExperimentConfig &config, std::ostream *log)
{
    if (!config.weights_path.empty()) {
        DenoiserModel m = load_weights(config.weights_path);
        if (m.data_dim() != config.model.data_dim)
            throw std::invalid_argument("weights in '" + config.weights_path + "' have data dimension " +
                                        std::to_string(m.data_dim()) + ", config has " +
                                        std::to_string(config.model.data_dim));
        if (log)
            *log << "[train] loaded " << config.weights_path << '\n';
        return m;
    }
    Rng init(config.train.seed, fnv1a("init"));
    DenoiserModel m = DenoiserModel::create(config.model, init);
    TrainResult r = train(std::move(m), config.data, config.schedule(), config.train);
    if (log)
        *log << "[train] " << config.train.iterations << " iterations, final loss " << r.losses.back() << '\n';
    return std::move(r.model);
}

DenoiserModel prepare_model(const DenoiserModel &trained, const ExperimentConfig &config)
{
    DenoiserModel m = trained;
    if (config.inject_factor != 1.0 && !config.inject_channels.empty())
        inject_channel_imbalance(m, config.inject_factor, config.inject_channels);
    return m;
}

std::shared_ptr<const CalibrationSet> calibrate(const DenoiserModel &model, const ExperimentConfig &config)
{
    Rng rng(config.calibration_seed, fnv1a("calibration"));
    return std::make_shared<const CalibrationSet>(
        collect_calibration(model, config.schedule(), config.sampler, config.calibration_samples, rng,
                            config.stratified));
}

QuantizedDenoiser build_variant(const DenoiserModel &model, std::shared_ptr<const CalibrationSet> calibration,
                                const ExperimentConfig &config, Variant v)
{
    QuantizeOptions opts;
    opts.grid_size = config.grid_size;
    opts.quantize_emb_out = config.quantize_emb_out;
    const BitConfig bits = v == Variant::Fp ? BitConfig{} : config.bits;
    QuantizedDenoiser q = quantize_model(model, std::move(calibration), bits, opts);
    if (v == Variant::Intra || v == Variant::Qncd)
        return apply_intra(q, config.schedule());
    return q;
}

std::string run_id(const ExperimentConfig &config, Variant v, std::uint64_t seed)
{
    return config.hash8() + "-" + to_string(v) + "-s" + std::to_string(seed);
}

Tensor swd_directions(const ExperimentConfig &config, std::uint64_t seed)
{
    Rng rng(seed, fnv1a("swd"));
    return random_directions(config.model.data_dim, config.projections, rng);
}

namespace {

/// Concatenates per-batch results; step statistics are pooled exactly.
SampleResult merge_batches(std::vector<SampleResult> parts)
{
    if (parts.size() == 1)
        return std::move(parts.front());
    SampleResult out;
    std::size_t total = 0;
    for (const auto &p : parts)
        total += p.samples.rows();
    const std::size_t d = parts.front().samples.cols();
    const std::size_t n_steps = parts.front().steps.size();

    auto concat = [&](auto rows_of) {
        Tensor t({total, d});
        std::size_t at = 0;
        for (const auto &p : parts) {
            const Tensor &src = rows_of(p);
            std::copy(src.values().begin(), src.values().end(), t.values().begin() + static_cast<std::ptrdiff_t>(at * d));
            at += src.rows();
        }
        return t;
    };
    out.samples = concat([](const SampleResult &p) -> const Tensor & { return p.samples; });
    for (std::size_t i = 0; i < n_steps; ++i) {
        StepRecord rec = parts.front().steps[i];
        std::vector<double> m(d, 0.0), sq(d, 0.0);
        for (const auto &p : parts) {
            const double w = static_cast<double>(p.samples.rows()) / static_cast<double>(total);
            for (std::size_t j = 0; j < d; ++j) {
                m[j] += w * p.steps[i].mean[j];
                sq[j] += w * (p.steps[i].std[j] * p.steps[i].std[j] + p.steps[i].mean[j] * p.steps[i].mean[j]);
            }
        }
        for (std::size_t j = 0; j < d; ++j)
            sq[j] = std::sqrt(std::max(sq[j] - m[j] * m[j], 0.0));
        rec.mean = std::move(m);
        rec.std = std::move(sq);
        out.steps.push_back(std::move(rec));
        if (!parts.front().eps.empty())
            out.eps.push_back(concat([i](const SampleResult &p) -> const Tensor & { return p.eps[i]; }));
    }
    out.estimates = parts.front().estimates;
    out.evaluations = parts.front().evaluations;
    for (const auto &p : parts)
        if (p.evaluations != out.evaluations)
            throw std::logic_error("merge_batches: batches disagree on evaluation count");
    return out;
}

SampleResult sample_all(const NoisePredictor &net, const ExperimentConfig &config, std::size_t stages,
                        std::uint64_t seed)
{
    const NoiseSchedule s = config.schedule();
    const auto steps = sampling_timesteps(s, config.sampler);
    const StagePlan plan = stage_plan(steps.size(), stages);
    const Rng base(seed, fnv1a("sample"));
    LoopOptions opts;
    opts.sampler = config.sampler.kind;
    opts.mode = config.mode;
    opts.keep_eps = true;
    std::vector<SampleResult> parts;
    for (std::size_t b = 0, done = 0; done < config.n_samples; ++b) {
        const std::size_t size = std::min(config.batch, config.n_samples - done);
        Rng xr = base.fork("x_T", b);
        const Tensor x_T = randn(xr, {size, config.model.data_dim});
        parts.push_back(corrected_sample_loop(net, s, steps, plan, x_T, base.fork("noise", b), base.fork("probe", b),
                                              opts));
        done += size;
    }
    return merge_batches(std::move(parts));
}

struct SeedOutputs {
    std::vector<SummaryRow> summary;
    std::vector<TrajectoryRecord> trajectories;
    std::vector<LayerRow> layers;
    std::vector<std::pair<std::string, Tensor>> samples;
};

SeedOutputs run_seed(const ExperimentConfig &config, const DenoiserModel &model,
                     const std::vector<std::pair<Variant, const QuantizedDenoiser *>> &nets, std::uint64_t seed)
{
    SeedOutputs out;
    const SampleResult fp = sample_all(model, config, 0, seed);
    const std::string fp_id = run_id(config, Variant::Fp, seed);
    out.trajectories.push_back(make_trajectory(fp_id, fp, fp));
    out.samples.emplace_back(fp_id, fp.samples);
    const Tensor directions = swd_directions(config, seed);

    Rng lr(seed, fnv1a("layers"));
    const NoiseSchedule s = config.schedule();
    const Tensor x0 = config.data.sample(lr, std::min<std::size_t>(config.batch, 512));
    const Tensor probe = marginal_diffuse(x0, config.probe_t, s, randn(lr, x0.shape()));

    for (const auto &[v, net] : nets) {
        const ExperimentConfig vc = with_variant(config, v);
        const std::string id = run_id(config, v, seed);
        const SampleResult r = v == Variant::Fp ? fp : sample_all(*net, vc, vc.inter_stages, seed);
        if (v != Variant::Fp) {
            out.trajectories.push_back(make_trajectory(id, r, fp));
            out.samples.emplace_back(id, r.samples);
        }
        SummaryRow row;
        row.run_id = id;
        row.config_label = vc.bits.label();
        row.intra_enabled = vc.intra;
        row.inter_stages = vc.inter_stages;
        row.correction_mode = to_string(vc.mode);
        row.seed = seed;
        row.swd_to_fp = sliced_wasserstein(r.samples, fp.samples, directions);
        row.final_cosine = cosine_similarity(fp.eps.back(), r.eps.back());
        row.eval_count = r.evaluations;
        out.summary.push_back(row);
        for (auto &e : layer_error_profile(model, *net, probe, config.probe_t))
            out.layers.push_back({id, std::move(e)});
    }
    return out;
}

template <class F>
auto in_stage(const char *stage, F &&f)
{
    try {
        return f();
    } catch (const StageError &) {
        throw;
    } catch (const ConfigError &) {
        throw;
    } catch (const std::exception &e) {
        throw StageError(stage, e.what());
    }
}

}  // namespace

RunOutputs run_variants(const ExperimentConfig &config, const DenoiserModel &model,
                        std::shared_ptr<const CalibrationSet> calibration, const std::vector<Variant> &variants)
{
    config.validate();
    RunOutputs outputs;
    for (Variant v : variants)
        if (!outputs.networks.count(v))
            outputs.networks.emplace(v, in_stage("quantize", [&] { return build_variant(model, calibration, config, v); }));
    std::vector<std::pair<Variant, const QuantizedDenoiser *>> nets;
    for (Variant v : variants)
        nets.emplace_back(v, &outputs.networks.at(v));

    std::vector<std::future<SeedOutputs>> jobs;
    for (auto seed : config.seeds)
        jobs.push_back(std::async(std::launch::async, [&, seed] { return run_seed(config, model, nets, seed); }));
    std::vector<SeedOutputs> per_seed;
    for (auto &j : jobs)
        per_seed.push_back(in_stage("sample", [&] { return j.get(); }));

    for (auto &so : per_seed) {
        for (auto &r : so.summary)
            outputs.summary.push_back(std::move(r));
        for (auto &t : so.trajectories)
            outputs.trajectories.push_back(std::move(t));
        for (auto &l : so.layers)
            outputs.layers.push_back(std::move(l));
        for (auto &[id, x] : so.samples)
            outputs.samples.emplace(id, std::move(x));
    }
    return outputs;
}

std::string samples_csv(const std::map<std::string, Tensor> &samples)
{
    std::ostringstream os;
    const std::size_t d = samples.empty() ? 0 : samples.begin()->second.cols();
    os << "run_id,sample_index";
    for (std::size_t j = 0; j < d; ++j)
        os << ",x_" << j;
    os << '\n';
    for (const auto &[id, x] : samples)
        for (std::size_t r = 0; r < x.rows(); ++r) {
            os << id << ',' << r;
            for (double v : x.row(r))
                os << ',' << format_real(v);
            os << '\n';
        }
    return os.str();
}

std::map<std::string, Tensor> parse_samples_csv(const std::string &text)
{
    std::istringstream is(text);
    std::string line;
    std::getline(is, line);
    const auto d = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) - 1;
    if (line.rfind("run_id,sample_index", 0) != 0 || d == 0)
        throw std::invalid_argument("samples.csv: unexpected header '" + line + "'");
    std::map<std::string, std::vector<double>> flat;
    while (std::getline(is, line)) {
        if (line.empty())
            continue;
        std::stringstream ls(line);
        std::string id, idx, cell;
        std::getline(ls, id, ',');
        std::getline(ls, idx, ',');
        auto &dst = flat[id];
        std::size_t n = 0;
        while (std::getline(ls, cell, ',')) {
            dst.push_back(std::stod(cell));
            ++n;
        }
        if (n != d)
            throw std::invalid_argument("samples.csv: malformed row '" + line + "'");
    }
    std::map<std::string, Tensor> out;
    for (auto &[id, v] : flat) {
        Tensor t({v.size() / d, d});
        std::copy(v.begin(), v.end(), t.values().begin());
        out.emplace(id, std::move(t));
    }
    return out;
}

std::string plot_script(const std::vector<TrajectoryRecord> &records)
{
    std::ostringstream os;
    os << "# gnuplot -persist plot.gp\n"
       << "set datafile separator ','\n"
       << "set key outside right\n"
       << "set xlabel 'step index'\n"
       << "runs = \"";
    for (std::size_t i = 0; i < records.size(); ++i)
        os << (i ? " " : "") << records[i].run_id;
    const std::size_t d = records.empty() || records.front().rows.empty() ? 1 : records.front().rows.front().mean.size();
    os << "\"\n"
       << "set multiplot layout 2,2\n"
       << "set ylabel 'batch mean x_0'\n"
       << "plot for [id in runs] 'trajectory.csv' using 2:(strcol(1) eq id ? $4 : NaN) with lines title id\n"
       << "set ylabel 'batch std x_0'\n"
       << "plot for [id in runs] 'trajectory.csv' using 2:(strcol(1) eq id ? $" << 4 + d
       << " : NaN) with lines title id\n"
       << "set ylabel 'eps SNR (dB)'\n"
       << "plot for [id in runs] 'trajectory.csv' using 2:(strcol(1) eq id ? $" << 4 + 2 * d
       << " : NaN) with lines title id\n"
       << "set ylabel 'eps cosine'\n"
       << "plot for [id in runs] 'trajectory.csv' using 2:(strcol(1) eq id ? $" << 5 + 2 * d
       << " : NaN) with lines title id\n"
       << "unset multiplot\n";
    return os.str();
}

void write_outputs(const ExperimentConfig &config, const RunOutputs &outputs)
{
    const fs::path dir(config.out_dir);
    fs::create_directories(dir);
    auto at = [&](const std::string &name) { return (dir / name).string(); };
    write_text_file(at("config.toml"), serialize_config(config));
    write_text_file(at("summary.csv"), summary_csv(outputs.summary));
    write_text_file(at("trajectory.csv"), trajectory_csv(outputs.trajectories));
    write_text_file(at("layers.csv"), layers_csv(outputs.layers));
    write_text_file(at("samples.csv"), samples_csv(outputs.samples));
    write_text_file(at("plot.gp"), plot_script(outputs.trajectories));
    for (const auto &[v, net] : outputs.networks) {
        write_text_file(at("quant_params_" + to_string(v) + ".json"), quant_params_json(net));
        if (net.smoothing())
            write_text_file(at("smoothing_" + to_string(v) + ".json"), smoothing_plan_json(*net.smoothing()));
    }
}

RunOutputs run_experiment(const ExperimentConfig &config, const std::vector<Variant> &variants, std::ostream *log)
{
    config.validate();
    const fs::path dir(config.out_dir);
    fs::create_directories(dir);
    const fs::path marker = dir / "FAILED";
    fs::remove(marker);
    try {
        const DenoiserModel trained = in_stage("train", [&] {
            DenoiserModel m = obtain_model(config, log);
            save_weights(m, (dir / "weights.bin").string());
            return m;
        });
        const DenoiserModel model = prepare_model(trained, config);
        auto calibration = in_stage("calibrate", [&] { return calibrate(model, config); });
        if (log)
            *log << "[calibrate] " << calibration->samples() << " samples over " << calibration->batch_timesteps.size()
                 << " timesteps\n";
        RunOutputs outputs = run_variants(config, model, calibration, variants);
        if (log)
            *log << "[sample] " << outputs.summary.size() << " runs\n";
        in_stage("write", [&] {
            write_outputs(config, outputs);
            return 0;
        });
        return outputs;
    } catch (const StageError &e) {
        try {
            write_text_file(marker.string(), std::string("stage: ") + e.stage() + "\n" + e.what() + "\n");
        } catch (const std::exception &) {
        }
        throw;
    }
}

std::vector<ReportCheck> verify_report(const std::string &dir)
{
    const fs::path d(dir);
    const ExperimentConfig config = load_config((d / "config.toml").string());
    const auto rows = parse_summary_csv(read_text_file((d / "summary.csv").string()));
    const auto samples = parse_samples_csv(read_text_file((d / "samples.csv").string()));
    std::vector<ReportCheck> checks;
    for (const auto &r : rows) {
        const std::string fp_id = r.run_id.substr(0, r.run_id.find('-')) + "-fp-s" + std::to_string(r.seed);
        auto run = samples.find(r.run_id);
        if (run == samples.end())
            run = samples.find(fp_id);
        const auto ref = samples.find(fp_id);
        if (run == samples.end() || ref == samples.end())
            throw std::runtime_error("samples.csv has no samples for " + r.run_id);
        ReportCheck c;
        c.run_id = r.run_id;
        c.stored = r.swd_to_fp;
        c.recomputed = sliced_wasserstein(run->second, ref->second, swd_directions(config, r.seed));
        c.match = c.recomputed == c.stored;
        checks.push_back(c);
    }
    return checks;
}

std::string report_table(const std::vector<SummaryRow> &rows)
{
    std::map<std::pair<std::string, std::string>, std::vector<const SummaryRow *>> groups;
    for (const auto &r : rows) {
        const auto a = r.run_id.find('-'), b = r.run_id.rfind('-');
        groups[{r.config_label, r.run_id.substr(a + 1, b - a - 1)}].push_back(&r);
    }
    auto median = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        const std::size_t n = v.size();
        return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    };
    std::ostringstream os;
    os << "# distance: sliced Wasserstein (W1) to full-precision samples, stand-in for FID\n";
    char line[160];
    std::snprintf(line, sizeof line, "%-8s %-8s %6s %14s %14s %6s\n", "bits", "variant", "seeds", "median_swd",
                  "median_cosine", "evals");
    os << line;
    for (const auto &[key, group] : groups) {
        std::vector<double> swd, cosv;
        for (const auto *r : group) {
            swd.push_back(r->swd_to_fp);
            cosv.push_back(r->final_cosine);
        }
        std::snprintf(line, sizeof line, "%-8s %-8s %6zu %14.6f %14.6f %6llu\n", key.first.c_str(), key.second.c_str(),
                      group.size(), median(swd), median(cosv),
                      static_cast<unsigned long long>(group.front()->eval_count));
        os << line;
    }
    return os.str();
}

}  // namespace qncd
