// qncd: train, calibrate, run and report quantized toy diffusion experiments.

#include <filesystem>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "qncd/harness.hpp"

using namespace qncd;

namespace {

enum Exit { kOk = 0, kConfigError = 1, kRuntimeError = 2 };

struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out;
};

ExperimentConfig resolve(const Common &c)
{
    ExperimentConfig config = c.config_path.empty() ? ExperimentConfig{} : load_config(c.config_path);
    if (c.seed)
        config.seeds = {*c.seed};
    if (!c.out.empty())
        config.out_dir = c.out;
    config.validate();
    return config;
}

void add_common(CLI::App *cmd, Common &c, bool need_config)
{
    auto *opt = cmd->add_option("--config", c.config_path, "experiment config file");
    if (need_config)
        opt->required()->check(CLI::ExistingFile);
    else
        opt->check(CLI::ExistingFile);
    cmd->add_option("--seed", c.seed, "run a single seed instead of the configured list");
    cmd->add_option("--out", c.out, "output directory (overrides output.dir)");
}

int cmd_train(const Common &c)
{
    ExperimentConfig config = resolve(c);
    std::filesystem::create_directories(config.out_dir);
    const DenoiserModel m = obtain_model(config, &std::cerr);
    const std::string path = (std::filesystem::path(config.out_dir) / "weights.bin").string();
    save_weights(m, path);
    std::cout << path << '\n';
    return kOk;
}

int cmd_calibrate(const Common &c)
{
    ExperimentConfig config = resolve(c);
    const auto dir = std::filesystem::path(config.out_dir);
    std::filesystem::create_directories(dir);
    const DenoiserModel model = prepare_model(obtain_model(config, &std::cerr), config);
    auto calibration = calibrate(model, config);
    const Variant v = variant_of(config);
    const QuantizedDenoiser q = build_variant(model, calibration, config, v);
    write_text_file((dir / "quant_params.json").string(), quant_params_json(q));
    if (q.smoothing())
        write_text_file((dir / "smoothing.json").string(), smoothing_plan_json(*q.smoothing()));
    std::cout << config.bits.label() << ' ' << to_string(v) << ": " << calibration->samples()
              << " calibration samples, " << q.activation_params().size() << " activation quantizers, "
              << q.weight_params().size() << " weight quantizers\n";
    return kOk;
}

int cmd_run(const Common &c, const std::vector<Variant> &variants)
{
    ExperimentConfig config = resolve(c);
    const RunOutputs out = run_experiment(config, variants, &std::cerr);
    std::cout << summary_csv(out.summary);
    return kOk;
}

int cmd_report(const Common &c)
{
    const std::string dir = !c.out.empty() ? c.out : resolve(c).out_dir;
    const auto rows = parse_summary_csv(read_text_file((std::filesystem::path(dir) / "summary.csv").string()));
    std::cout << report_table(rows) << '\n';
    bool ok = true;
    for (const auto &check : verify_report(dir)) {
        ok = ok && check.match;
        if (!check.match)
            std::cout << "MISMATCH " << check.run_id << " stored " << format_real(check.stored) << " recomputed "
                      << format_real(check.recomputed) << '\n';
    }
    std::cout << (ok ? "all summary rows reproduce from samples.csv\n" : "summary rows do not reproduce\n");
    std::cout << "\n# defaults\n" << serialize_config(ExperimentConfig{});
    return ok ? kOk : kRuntimeError;
}

}  // namespace

int main(int argc, char **argv)
{
    CLI::App app{"Quantization noise correction experiments on a toy diffusion model"};
    app.require_subcommand(1);
    Common train_o, cal_o, run_o, ablate_o, report_o;
    auto *train = app.add_subcommand("train", "train the toy denoiser and write weights.bin");
    add_common(train, train_o, false);
    auto *cal = app.add_subcommand("calibrate", "collect calibration data and write quantizer sidecars");
    add_common(cal, cal_o, false);
    auto *run = app.add_subcommand("run", "run the configured variant against full precision");
    add_common(run, run_o, true);
    auto *ablate = app.add_subcommand("ablate", "run ptq, intra, inter and qncd against full precision");
    add_common(ablate, ablate_o, true);
    auto *report = app.add_subcommand("report", "summarize and verify a finished run directory");
    add_common(report, report_o, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp &e) {
        return app.exit(e);
    } catch (const CLI::ParseError &e) {
        app.exit(e);
        return kConfigError;
    }

    try {
        if (*train)
            return cmd_train(train_o);
        if (*cal)
            return cmd_calibrate(cal_o);
        if (*run) {
            const ExperimentConfig config = resolve(run_o);
            return cmd_run(run_o, {variant_of(config)});
        }
        if (*ablate)
            return cmd_run(ablate_o, std::vector<Variant>(std::begin(kAblationVariants), std::end(kAblationVariants)));
        return cmd_report(report_o);
    } catch (const ConfigError &e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << '\n';
        return kRuntimeError;
    }
}
