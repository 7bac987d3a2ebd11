#include "qncd/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "qncd/intra.hpp"

namespace qncd {

void QuantParams::validate() const
{
    if (scale.empty() || scale.size() != zero_point.size())
        throw std::invalid_argument("QuantParams: scale and zero_point must have the same nonzero length");
    if (granularity == Granularity::PerTensor && scale.size() != 1)
        throw std::invalid_argument("QuantParams: per-tensor params carry exactly one scale");
    for (double s : scale)
        if (!(s > 0.0) || !std::isfinite(s))
            throw std::invalid_argument("QuantParams: scales must be positive and finite");
    if (!(qmin < qmax) || qmax - qmin != (std::int64_t{1} << bitwidth) - 1)
        throw std::invalid_argument("QuantParams: integer range does not match bitwidth");
}

std::pair<std::int64_t, std::int64_t> integer_range(int bitwidth, bool symmetric)
{
    if (bitwidth < 2 || bitwidth > 30)
        throw std::invalid_argument("unsupported bitwidth " + std::to_string(bitwidth));
    const std::int64_t levels = std::int64_t{1} << bitwidth;
    if (symmetric)
        return {-levels / 2, levels / 2 - 1};
    return {0, levels - 1};
}

double quant_dequant(double x, double scale, std::int64_t zero_point, std::int64_t qmin, std::int64_t qmax) noexcept
{
    double q = std::round(x / scale) + static_cast<double>(zero_point);
    q = std::clamp(q, static_cast<double>(qmin), static_cast<double>(qmax));
    return (q - static_cast<double>(zero_point)) * scale;
}

Tensor quant_dequant(const Tensor &x, const QuantParams &p)
{
    Tensor out(x.shape());
    if (p.granularity == Granularity::PerTensor) {
        for (std::size_t i = 0; i < x.size(); ++i)
            out[i] = quant_dequant(x[i], p.scale[0], p.zero_point[0], p.qmin, p.qmax);
        return out;
    }
    const std::size_t c = x.shape().back();
    if (c != p.channels())
        throw ShapeError("quant_dequant: channel count", x.shape(), Shape{p.channels()});
    for (std::size_t i = 0; i < x.size(); ++i) {
        const std::size_t ch = i % c;
        out[i] = quant_dequant(x[i], p.scale[ch], p.zero_point[ch], p.qmin, p.qmax);
    }
    return out;
}

QuantParams params_for_range(int bitwidth, bool symmetric, std::span<const double> lo, std::span<const double> hi,
                             double ratio)
{
    QuantParams p;
    p.bitwidth = bitwidth;
    p.symmetric = symmetric;
    p.granularity = lo.size() == 1 ? Granularity::PerTensor : Granularity::PerChannel;
    std::tie(p.qmin, p.qmax) = integer_range(bitwidth, symmetric);
    for (std::size_t ch = 0; ch < lo.size(); ++ch) {
        double scale = 0.0;
        std::int64_t zp = 0;
        if (symmetric) {
            const double clip = ratio * std::max(std::abs(lo[ch]), std::abs(hi[ch]));
            scale = clip / static_cast<double>(p.qmax);
        } else {
            const double l = ratio * std::min(lo[ch], 0.0);
            const double h = ratio * std::max(hi[ch], 0.0);
            scale = (h - l) / static_cast<double>(p.qmax - p.qmin);
            if (scale > 0.0)
                zp = std::clamp(static_cast<std::int64_t>(std::round(-l / scale)) + p.qmin, p.qmin, p.qmax);
        }
        if (!(scale > 0.0)) {
            scale = kZeroRangeScale;
            zp = symmetric ? 0 : p.qmin;
        }
        p.scale.push_back(scale);
        p.zero_point.push_back(zp);
        p.clip_ratio.push_back(ratio);
    }
    return p;
}

double quantization_sse(std::span<const Tensor> samples, const QuantParams &p)
{
    double sse = 0.0;
    for (const auto &x : samples) {
        const Tensor q = quant_dequant(x, p);
        for (std::size_t i = 0; i < x.size(); ++i)
            sse += (q[i] - x[i]) * (q[i] - x[i]);
    }
    return sse;
}

namespace {

struct ChannelView {
    std::span<const Tensor> samples;
    std::size_t channels;  // 1 for per-tensor

    template <typename F>
    void for_each(std::size_t ch, F &&f) const
    {
        for (const auto &x : samples) {
            if (channels == 1) {
                for (double v : x.values())
                    f(v);
            } else {
                const std::size_t c = x.shape().back();
                for (std::size_t i = ch; i < x.size(); i += c)
                    f(x[i]);
            }
        }
    }
};

}  // namespace

QuantParams mse_calibrate(std::span<const Tensor> samples, int bitwidth, Granularity granularity, bool symmetric,
                          int grid_size)
{
    if (samples.empty())
        throw std::invalid_argument("mse_calibrate: no samples");
    if (grid_size < 2)
        throw std::invalid_argument("mse_calibrate: grid_size must be at least 2");
    const std::size_t channels = granularity == Granularity::PerTensor ? 1 : samples.front().shape().back();
    for (const auto &x : samples)
        if (granularity == Granularity::PerChannel && x.shape().back() != channels)
            throw ShapeError("mse_calibrate: channel count", samples.front().shape(), x.shape());
    const ChannelView view{samples, channels};

    std::vector<double> lo(channels, std::numeric_limits<double>::infinity());
    std::vector<double> hi(channels, -std::numeric_limits<double>::infinity());
    for (std::size_t ch = 0; ch < channels; ++ch)
        view.for_each(ch, [&](double v) {
            lo[ch] = std::min(lo[ch], v);
            hi[ch] = std::max(hi[ch], v);
        });

    QuantParams best;
    best.bitwidth = bitwidth;
    best.symmetric = symmetric;
    best.granularity = granularity;
    std::tie(best.qmin, best.qmax) = integer_range(bitwidth, symmetric);
    for (std::size_t ch = 0; ch < channels; ++ch) {
        const std::span<const double> l(&lo[ch], 1), h(&hi[ch], 1);
        double best_err = std::numeric_limits<double>::infinity();
        QuantParams chosen;
        for (int k = 1; k <= grid_size; ++k) {
            const double ratio = static_cast<double>(k) / grid_size;
            const QuantParams cand = params_for_range(bitwidth, symmetric, l, h, ratio);
            double err = 0.0;
            view.for_each(ch, [&](double v) {
                const double d = quant_dequant(v, cand.scale[0], cand.zero_point[0], cand.qmin, cand.qmax) - v;
                err += d * d;
            });
            if (err < best_err) {
                best_err = err;
                chosen = cand;
            }
        }
        best.scale.push_back(chosen.scale[0]);
        best.zero_point.push_back(chosen.zero_point[0]);
        best.clip_ratio.push_back(chosen.clip_ratio[0]);
    }
    return best;
}

BitConfig BitConfig::parse(const std::string &label)
{
    auto bad = [&] {
        return std::invalid_argument("bad bit configuration '" + label + "' (expected W(4|6|8|fp)A(4|6|8|fp))");
    };
    const auto a = label.find('A');
    if (label.empty() || label[0] != 'W' || a == std::string::npos)
        throw bad();
    auto field = [&](const std::string &text) -> std::optional<int> {
        if (text == "fp")
            return std::nullopt;
        if (text == "4" || text == "6" || text == "8")
            return std::stoi(text);
        throw bad();
    };
    return {field(label.substr(1, a - 1)), field(label.substr(a + 1))};
}

std::string BitConfig::label() const
{
    auto field = [](const std::optional<int> &b) { return b ? std::to_string(*b) : std::string("fp"); };
    return "W" + field(weight_bits) + "A" + field(act_bits);
}

void CalibrationSet::require_coverage(const DenoiserModel &model) const
{
    for (const auto &hp : model.hook_points()) {
        auto it = activations.find(hp);
        if (it == activations.end() || it->second.empty())
            throw std::invalid_argument("calibration set has no activations for hook " + hp.path());
    }
}

std::vector<int> draw_calibration_timesteps(std::span<const int> steps, std::size_t n, Rng &rng, bool stratified)
{
    if (steps.empty())
        throw std::invalid_argument("draw_calibration_timesteps: no timesteps");
    std::vector<int> out;
    out.reserve(n);
    if (!stratified) {
        for (std::size_t i = 0; i < n; ++i)
            out.push_back(steps[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(steps.size()) - 1))]);
        return out;
    }
    std::vector<int> pool;
    while (out.size() < n) {
        if (pool.empty()) {
            pool.assign(steps.begin(), steps.end());
            for (std::size_t i = pool.size(); i > 1; --i)
                std::swap(pool[i - 1], pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
        }
        out.push_back(pool.back());
        pool.pop_back();
    }
    return out;
}

CalibrationSet collect_calibration(const DenoiserModel &model, const NoiseSchedule &s, const SamplerSpec &sampler,
                                   std::size_t n_samples, Rng &rng, bool stratified)
{
    if (n_samples < 1)
        throw std::invalid_argument("collect_calibration: n_samples must be at least 1");
    const auto steps = sampling_timesteps(s, sampler);
    CalibrationSet calib;
    calib.sample_timesteps = draw_calibration_timesteps(steps, n_samples, rng, stratified);

    const std::size_t d = model.data_dim();
    Tensor x = randn(rng, {n_samples, d});
    ForwardHooks recorder;
    recorder.observe = [&](const HookPoint &hp, const Tensor &act, std::span<const double>) {
        calib.activations[hp].push_back(act);
    };
    for (std::size_t i = 0; i < steps.size(); ++i) {
        const int t = steps[i];
        const int t_prev = i + 1 < steps.size() ? steps[i + 1] : 0;
        std::vector<std::size_t> rows;
        for (std::size_t r = 0; r < n_samples; ++r)
            if (calib.sample_timesteps[r] == t)
                rows.push_back(r);
        if (!rows.empty()) {
            Tensor picked({rows.size(), d});
            for (std::size_t k = 0; k < rows.size(); ++k)
                std::copy(x.row(rows[k]).begin(), x.row(rows[k]).end(), picked.row(k).begin());
            model.forward(picked, t, &recorder);
            calib.batch_timesteps.push_back(t);
        }
        const Tensor eps = model.forward(x, t);
        const Tensor z = randn(rng, x.shape());
        x = sampler_update(sampler.kind, x, eps, t, t_prev, s, z);
    }
    calib.require_coverage(model);
    return calib;
}

QuantizedDenoiser::QuantizedDenoiser(DenoiserModel base, BitConfig bits, std::map<WeightPoint, QuantParams> weight_params,
                                     std::map<HookPoint, QuantParams> act_params,
                                     std::shared_ptr<const CalibrationSet> calibration, QuantizeOptions options)
    : base_(std::move(base)), bits_(bits), weight_params_(std::move(weight_params)), act_params_(std::move(act_params)),
      calibration_(std::move(calibration)), options_(options)
{
    for (const auto &[wp, p] : weight_params_)
        p.validate();
    for (const auto &[hp, p] : act_params_)
        p.validate();
    rebuild();
}

void QuantizedDenoiser::rebuild()
{
    quantized_ = base_;
    for (const auto &[wp, p] : weight_params_) {
        if (disabled_weights_.count(wp))
            continue;
        Tensor &w = quantized_.blocks().at(static_cast<std::size_t>(wp.block)).weight(wp.kind);
        w = quant_dequant(w, p);
    }
}

void QuantizedDenoiser::set_activation_enabled(const HookPoint &hp, bool enabled)
{
    if (enabled)
        disabled_acts_.erase(hp);
    else
        disabled_acts_.insert(hp);
}

void QuantizedDenoiser::set_weight_enabled(const WeightPoint &wp, bool enabled)
{
    if (enabled)
        disabled_weights_.erase(wp);
    else
        disabled_weights_.insert(wp);
    rebuild();
}

Tensor QuantizedDenoiser::forward(const Tensor &x, int t, const ForwardHooks *observer) const
{
    ForwardHooks hooks;
    if (!act_params_.empty())
        hooks.transform = [this](const HookPoint &hp, Tensor &act) {
            auto it = act_params_.find(hp);
            if (it == act_params_.end() || disabled_acts_.count(hp))
                return;
            act = quant_dequant(act, it->second);
        };
    if (observer)
        hooks.observe = observer->observe;
    return quantized_.forward(x, t, &hooks);
}

QuantizedDenoiser quantize_model(const DenoiserModel &model, std::shared_ptr<const CalibrationSet> calibration,
                                 const BitConfig &bits, const QuantizeOptions &options)
{
    std::map<WeightPoint, QuantParams> wparams;
    std::map<HookPoint, QuantParams> aparams;
    if (bits.weight_bits)
        for (const auto &wp : model.weight_points()) {
            const Tensor &w = model.blocks()[static_cast<std::size_t>(wp.block)].weight(wp.kind);
            wparams[wp] = mse_calibrate(std::span(&w, 1), *bits.weight_bits, Granularity::PerChannel, true,
                                        options.grid_size);
        }
    if (bits.act_bits) {
        if (!calibration)
            throw std::invalid_argument("quantize_model: activation quantization needs a calibration set");
        calibration->require_coverage(model);
        for (const auto &hp : model.hook_points()) {
            if (hp.kind == HookKind::EmbeddingOut && !options.quantize_emb_out)
                continue;
            const auto &samples = calibration->activations.at(hp);
            aparams[hp] = mse_calibrate(samples, *bits.act_bits, Granularity::PerTensor, false, options.grid_size);
        }
    }
    return QuantizedDenoiser(model, bits, std::move(wparams), std::move(aparams), std::move(calibration), options);
}

std::string quant_params_json(const QuantizedDenoiser &qnet)
{
    auto encode = [](const QuantParams &p) {
        return nlohmann::json{{"bitwidth", p.bitwidth},
                              {"granularity", p.granularity == Granularity::PerTensor ? "per_tensor" : "per_channel"},
                              {"symmetric", p.symmetric},
                              {"scale", p.scale},
                              {"zero_point", p.zero_point},
                              {"qmin", p.qmin},
                              {"qmax", p.qmax},
                              {"clip_ratio", p.clip_ratio}};
    };
    nlohmann::json j;
    j["config"] = qnet.bits().label();
    j["quantize_emb_out"] = qnet.options().quantize_emb_out;
    j["grid_size"] = qnet.options().grid_size;
    auto &w = j["weights"] = nlohmann::json::object();
    for (const auto &[wp, p] : qnet.weight_params())
        w[wp.path()] = encode(p);
    auto &a = j["activations"] = nlohmann::json::object();
    for (const auto &[hp, p] : qnet.activation_params())
        a[hp.path()] = encode(p);
    if (qnet.smoothing())
        j["smoothing"] = nlohmann::json::parse(smoothing_plan_json(*qnet.smoothing()));
    return j.dump(2);
}

}  // namespace qncd
