#include "qncd/intra.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

#include <json.hpp>

namespace qncd {

namespace {

Tensor embedding_projection(const ResBlock &block, int t, double max_period)
{
    const Tensor e = sinusoidal_embedding(t, block.emb_dim(), max_period);
    return add_row(matmul(e, block.w_emb), block.b_emb.values());
}

void apply_floor(std::vector<double> &s, double floor)
{
    for (auto &v : s)
        v = std::max(v, floor);
}

}  // namespace

std::vector<double> compute_s_scaleshift(const ResBlock &block, const NoiseSchedule &s, double max_period, double floor)
{
    if (block.style != FusionStyle::ScaleShift)
        throw std::invalid_argument("compute_s_scaleshift: block does not use scale/shift fusion");
    const std::size_t c = block.hidden();
    std::vector<double> acc(c, 0.0);
    for (int t = 1; t <= s.steps(); ++t) {
        const Tensor p = embedding_projection(block, t, max_period);
        for (std::size_t j = 0; j < c; ++j)
            acc[j] += std::abs(1.0 + p[j]);
    }
    for (auto &v : acc)
        v /= s.steps();
    apply_floor(acc, floor);
    return acc;
}

std::vector<double> compute_s_groupnorm(const ResBlock &block, const NoiseSchedule &s, double max_period, double floor)
{
    if (block.style != FusionStyle::AddGroupNorm)
        throw std::invalid_argument("compute_s_groupnorm: block does not use add/group-norm fusion");
    const std::size_t c = block.hidden();
    std::vector<double> acc(c, 0.0);
    for (int t = 1; t <= s.steps(); ++t) {
        const Tensor normed = group_normalize(embedding_projection(block, t, max_period), block.groups);
        for (std::size_t j = 0; j < c; ++j)
            acc[j] += std::abs(normed[j] * block.norm_gamma[j]);
    }
    for (auto &v : acc)
        v /= s.steps();
    apply_floor(acc, floor);
    return acc;
}

SmoothingPlan compute_smoothing_plan(const DenoiserModel &model, const NoiseSchedule &s, double floor)
{
    SmoothingPlan plan;
    plan.floor = floor;
    for (const auto &b : model.blocks()) {
        plan.styles.push_back(b.style);
        plan.factors.push_back(b.style == FusionStyle::ScaleShift
                                   ? compute_s_scaleshift(b, s, model.max_period(), floor)
                                   : compute_s_groupnorm(b, s, model.max_period(), floor));
    }
    return plan;
}

ResBlock fold(std::span<const double> factors, const ResBlock &block)
{
    if (factors.size() != block.hidden())
        throw ShapeError("fold", Shape{factors.size()}, block.w_out.shape());
    if (!block.smooth.empty())
        throw std::invalid_argument("fold: block is already smoothed");
    ResBlock out = block;
    out.smooth.assign(factors.begin(), factors.end());
    for (std::size_t i = 0; i < block.hidden(); ++i)
        for (std::size_t j = 0; j < block.out_dim(); ++j)
            out.w_out.at(i, j) *= factors[i];
    return out;
}

ResBlock unfold(std::span<const double> factors, const ResBlock &block)
{
    if (factors.size() != block.hidden())
        throw ShapeError("unfold", Shape{factors.size()}, block.w_out.shape());
    if (block.smooth.empty())
        throw std::invalid_argument("unfold: block is not smoothed");
    ResBlock out = block;
    out.smooth.clear();
    for (std::size_t i = 0; i < block.hidden(); ++i)
        for (std::size_t j = 0; j < block.out_dim(); ++j)
            out.w_out.at(i, j) /= factors[i];
    return out;
}

DenoiserModel fold_model(const SmoothingPlan &plan, const DenoiserModel &model)
{
    if (plan.factors.size() != model.blocks().size())
        throw std::invalid_argument("fold_model: plan covers " + std::to_string(plan.factors.size()) +
                                    " blocks, model has " + std::to_string(model.blocks().size()));
    DenoiserModel out = model;
    for (std::size_t i = 0; i < plan.factors.size(); ++i)
        out.blocks()[i] = fold(plan.factors[i], model.blocks()[i]);
    return out;
}

QuantizedDenoiser apply_intra(const QuantizedDenoiser &qnet, const NoiseSchedule &s)
{
    if (qnet.smoothing())
        throw std::invalid_argument("apply_intra: model is already smoothed");
    for (const auto &b : qnet.base().blocks())
        if (!b.smooth.empty())
            throw std::invalid_argument("apply_intra: model is already smoothed");

    auto plan = std::make_shared<SmoothingPlan>(compute_smoothing_plan(qnet.base(), s));
    const DenoiserModel folded = fold_model(*plan, qnet.base());
    plan->folded = true;

    std::shared_ptr<const CalibrationSet> calib = qnet.calibration();
    if (calib) {
        auto smoothed = std::make_shared<CalibrationSet>(*calib);
        for (auto &[hp, tensors] : smoothed->activations) {
            if (hp.kind != HookKind::Fusion)
                continue;
            const auto &factors = plan->factors.at(static_cast<std::size_t>(hp.block));
            for (auto &t : tensors)
                for (std::size_t r = 0; r < t.rows(); ++r) {
                    auto row = t.row(r);
                    for (std::size_t j = 0; j < row.size(); ++j)
                        row[j] /= factors[j];
                }
        }
        calib = std::move(smoothed);
    }
    QuantizedDenoiser out = quantize_model(folded, calib, qnet.bits(), qnet.options());
    out.set_smoothing(std::move(plan));
    return out;
}

std::string smoothing_plan_json(const SmoothingPlan &plan)
{
    nlohmann::json j;
    j["floor"] = plan.floor;
    j["folded"] = plan.folded;
    auto &blocks = j["blocks"] = nlohmann::json::array();
    for (std::size_t i = 0; i < plan.factors.size(); ++i)
        blocks.push_back({{"style", to_string(plan.styles.at(i))}, {"S", plan.factors[i]}});
    return j.dump(2);
}

}  // namespace qncd
