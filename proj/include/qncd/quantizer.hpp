#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "qncd/denoiser.hpp"
#include "qncd/rng.hpp"
#include "qncd/schedule.hpp"

namespace qncd {

enum class Granularity { PerTensor, PerChannel };

inline constexpr double kZeroRangeScale = 1e-8;

/// Uniform affine quantizer. Per-channel parameters index the last axis.
struct QuantParams {
    int bitwidth = 8;
    Granularity granularity = Granularity::PerTensor;
    bool symmetric = false;
    std::vector<double> scale;
    std::vector<std::int64_t> zero_point;
    std::int64_t qmin = 0;
    std::int64_t qmax = 255;
    /// Clip ratio picked by calibration, per channel (diagnostic only).
    std::vector<double> clip_ratio;

    std::size_t channels() const noexcept { return scale.size(); }
    /// Throws std::invalid_argument on non-positive scales or a bad integer range.
    void validate() const;

    bool operator==(const QuantParams &) const = default;
};

/// Integer range of a grid: symmetric grids are signed, asymmetric unsigned.
std::pair<std::int64_t, std::int64_t> integer_range(int bitwidth, bool symmetric);

/// clamp(round(x / scale) + zero_point, qmin, qmax), back to reals; ties round
/// away from zero.
double quant_dequant(double x, double scale, std::int64_t zero_point, std::int64_t qmin, std::int64_t qmax) noexcept;
Tensor quant_dequant(const Tensor &x, const QuantParams &p);

/// Parameters for a clip range given as a ratio of the observed range.
/// Symmetric: [-r max|x|, r max|x|]; asymmetric: [r min(x,0), r max(x,0)].
QuantParams params_for_range(int bitwidth, bool symmetric, std::span<const double> lo, std::span<const double> hi,
                             double ratio);

/// Sum over samples of ||quant_dequant(x) - x||^2.
double quantization_sse(std::span<const Tensor> samples, const QuantParams &p);

/// MSE range setting: scan clip ratios r = k / grid_size, k = 1..grid_size, and
/// keep the one with the smallest reconstruction error (first on ties).
/// Per-channel calibration scans each channel independently.
QuantParams mse_calibrate(std::span<const Tensor> samples, int bitwidth, Granularity granularity, bool symmetric,
                          int grid_size = 100);

/// "WnAm" bit configuration; an empty optional means full precision ("fp").
struct BitConfig {
    std::optional<int> weight_bits;
    std::optional<int> act_bits;

    /// Grammar W(4|6|8|fp)A(4|6|8|fp).
    static BitConfig parse(const std::string &label);
    std::string label() const;
    bool full_precision() const noexcept { return !weight_bits && !act_bits; }
    bool operator==(const BitConfig &) const = default;
};

/// Activations recorded at every hook point from full-precision sampling
/// trajectories. Entry i of every hook's list comes from the same forward
/// pass at timestep batch_timesteps[i].
struct CalibrationSet {
    std::map<HookPoint, std::vector<Tensor>> activations;
    std::vector<int> batch_timesteps;
    std::vector<int> sample_timesteps;  ///< drawn timestep of every calibration sample

    std::size_t samples() const noexcept { return sample_timesteps.size(); }
    /// Throws unless every hook of the model has at least one recorded tensor.
    void require_coverage(const DenoiserModel &model) const;
};

/// Timesteps for calibration samples, drawn uniformly from `steps`. The
/// stratified draw cycles through a shuffled copy of `steps`, so n == |steps|
/// visits every timestep exactly once.
std::vector<int> draw_calibration_timesteps(std::span<const int> steps, std::size_t n, Rng &rng, bool stratified);

CalibrationSet collect_calibration(const DenoiserModel &model, const NoiseSchedule &s, const SamplerSpec &sampler,
                                   std::size_t n_samples, Rng &rng, bool stratified = true);

struct QuantizeOptions {
    int grid_size = 100;
    /// Quantize the emb_layer output (scale/shift) like any other activation.
    bool quantize_emb_out = true;
};

struct SmoothingPlan;

/// The fake-quantized network: the base model with quant_dequant inserted on
/// every weight matrix and activation hook. Individual quantizers can be
/// switched off to attribute error to layers.
class QuantizedDenoiser : public NoisePredictor {
public:
    QuantizedDenoiser(DenoiserModel base, BitConfig bits, std::map<WeightPoint, QuantParams> weight_params,
                      std::map<HookPoint, QuantParams> act_params, std::shared_ptr<const CalibrationSet> calibration,
                      QuantizeOptions options);

    Tensor predict(const Tensor &x, int t) const override { return forward(x, t); }
    /// `observer` sees every hook activation after fake quantization.
    Tensor forward(const Tensor &x, int t, const ForwardHooks *observer = nullptr) const;

    const DenoiserModel &base() const noexcept { return base_; }
    const BitConfig &bits() const noexcept { return bits_; }
    const QuantizeOptions &options() const noexcept { return options_; }
    const std::map<WeightPoint, QuantParams> &weight_params() const noexcept { return weight_params_; }
    const std::map<HookPoint, QuantParams> &activation_params() const noexcept { return act_params_; }
    const std::shared_ptr<const CalibrationSet> &calibration() const noexcept { return calibration_; }

    const std::shared_ptr<const SmoothingPlan> &smoothing() const noexcept { return smoothing_; }
    void set_smoothing(std::shared_ptr<const SmoothingPlan> plan) { smoothing_ = std::move(plan); }

    void set_activation_enabled(const HookPoint &hp, bool enabled);
    void set_weight_enabled(const WeightPoint &wp, bool enabled);

private:
    void rebuild();

    DenoiserModel base_;
    DenoiserModel quantized_;  // base with fake-quantized weights where enabled
    BitConfig bits_;
    std::map<WeightPoint, QuantParams> weight_params_;
    std::map<HookPoint, QuantParams> act_params_;
    std::set<WeightPoint> disabled_weights_;
    std::set<HookPoint> disabled_acts_;
    std::shared_ptr<const CalibrationSet> calibration_;
    std::shared_ptr<const SmoothingPlan> smoothing_;
    QuantizeOptions options_;
};

/// Per-channel symmetric weight parameters and per-tensor asymmetric
/// activation parameters, both by MSE range setting.
QuantizedDenoiser quantize_model(const DenoiserModel &model, std::shared_ptr<const CalibrationSet> calibration,
                                 const BitConfig &bits, const QuantizeOptions &options = {});

/// JSON sidecar keyed by hook/weight path.
std::string quant_params_json(const QuantizedDenoiser &qnet);

}  // namespace qncd
