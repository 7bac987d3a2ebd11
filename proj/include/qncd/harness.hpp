#pragma once

#include <iosfwd>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "qncd/config.hpp"
#include "qncd/intra.hpp"
#include "qncd/metrics.hpp"

namespace qncd {

/// The canonical runs: full precision, naive PTQ, PTQ + smoothing, PTQ +
/// run-time correction, both.
enum class Variant { Fp, Ptq, Intra, Inter, Qncd };

inline constexpr Variant kAblationVariants[] = {Variant::Ptq, Variant::Intra, Variant::Inter, Variant::Qncd};

std::string to_string(Variant v);
Variant parse_variant(const std::string &text);

/// Variant implied by the bit config and the correction switches.
Variant variant_of(const ExperimentConfig &config);
/// Copy of `config` with the correction switches set for `v`. Variants with
/// run-time correction keep config.inter_stages, which must be positive.
ExperimentConfig with_variant(const ExperimentConfig &config, Variant v);

/// Failure inside one pipeline stage (train, calibrate, quantize, sample, write).
class StageError : public std::runtime_error {
public:
    StageError(std::string stage, const std::string &what);
    const std::string &stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

/// Loads config.weights_path or trains from scratch. No imbalance injected.
DenoiserModel obtain_model(const ExperimentConfig &config, std::ostream *log = nullptr);

/// Trained model with the configured channel imbalance injected.
DenoiserModel prepare_model(const DenoiserModel &trained, const ExperimentConfig &config);

std::shared_ptr<const CalibrationSet> calibrate(const DenoiserModel &model, const ExperimentConfig &config);

/// Quantized network for a variant; smoothing applied for Intra and Qncd.
QuantizedDenoiser build_variant(const DenoiserModel &model, std::shared_ptr<const CalibrationSet> calibration,
                                const ExperimentConfig &config, Variant v);

struct RunOutputs {
    std::vector<SummaryRow> summary;
    std::vector<TrajectoryRecord> trajectories;
    std::vector<LayerRow> layers;
    std::map<std::string, Tensor> samples;  ///< by run_id, full-precision runs included
    std::map<Variant, QuantizedDenoiser> networks;
};

/// "<config hash>-<variant>-s<seed>"
std::string run_id(const ExperimentConfig &config, Variant v, std::uint64_t seed);

/// Samples every seed with the full-precision model and each variant under
/// common random numbers. Seeds run concurrently; results are ordered by
/// seed, then variant.
RunOutputs run_variants(const ExperimentConfig &config, const DenoiserModel &model,
                        std::shared_ptr<const CalibrationSet> calibration, const std::vector<Variant> &variants);

/// Writes config.toml, summary.csv, trajectory.csv, layers.csv, samples.csv,
/// plot.gp and the quantizer/smoothing sidecars into config.out_dir.
void write_outputs(const ExperimentConfig &config, const RunOutputs &outputs);

/// Whole pipeline. Weights go to <out>/weights.bin. On failure a FAILED
/// marker naming the stage is left in the output directory.
RunOutputs run_experiment(const ExperimentConfig &config, const std::vector<Variant> &variants,
                          std::ostream *log = nullptr);

std::string samples_csv(const std::map<std::string, Tensor> &samples);
std::map<std::string, Tensor> parse_samples_csv(const std::string &text);
std::string plot_script(const std::vector<TrajectoryRecord> &records);

/// Directions used for swd_to_fp at a seed.
Tensor swd_directions(const ExperimentConfig &config, std::uint64_t seed);

struct ReportCheck {
    std::string run_id;
    double stored = 0.0;
    double recomputed = 0.0;
    bool match = false;
};

/// Recomputes swd_to_fp of every summary row in `dir` from samples.csv.
std::vector<ReportCheck> verify_report(const std::string &dir);
/// Median of swd_to_fp and final_cosine per variant and bit config.
std::string report_table(const std::vector<SummaryRow> &rows);

}  // namespace qncd
