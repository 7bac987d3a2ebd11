#pragma once

#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "qncd/rng.hpp"
#include "qncd/schedule.hpp"
#include "qncd/tensor.hpp"

namespace qncd {

/// How a resblock merges the timestep embedding into its features.
enum class FusionStyle {
    ScaleShift,    ///< norm(h) * (1 + scale_t) + shift_t
    AddGroupNorm,  ///< groupnorm(h + emb_t) * gamma + beta
};

std::string to_string(FusionStyle style);
FusionStyle parse_fusion_style(const std::string &text);

inline constexpr double kNormEpsilon = 1e-5;

/// Activation quantization points inside one resblock, in execution order.
enum class HookKind {
    Input,         ///< input of the w_in matmul
    Embedding,     ///< input of the emb_layer matmul
    EmbeddingOut,  ///< emb_layer output (scale/shift or the additive projection)
    Fusion,        ///< fused activation feeding w_out (after any smoothing divisor)
};

inline constexpr HookKind kHookKinds[] = {HookKind::Input, HookKind::Embedding, HookKind::EmbeddingOut,
                                          HookKind::Fusion};

struct HookPoint {
    int block = 0;
    HookKind kind = HookKind::Input;

    std::string path() const;
    auto operator<=>(const HookPoint &) const = default;
};

/// Weight matrices that take part in quantization.
enum class WeightKind { In, Emb, Out };
inline constexpr WeightKind kWeightKinds[] = {WeightKind::In, WeightKind::Emb, WeightKind::Out};

struct WeightPoint {
    int block = 0;
    WeightKind kind = WeightKind::In;

    std::string path() const;
    auto operator<=>(const WeightPoint &) const = default;
};

/// Optional callbacks threaded through a forward pass. `transform` may rewrite
/// the activation at a hook (fake quantization); `observe` sees the value the
/// following matmul consumes, plus the per-channel divisor that maps it back to
/// unsmoothed units (empty when no divisor applies).
struct ForwardHooks {
    std::function<void(const HookPoint &, Tensor &)> transform;
    std::function<void(const HookPoint &, const Tensor &, std::span<const double>)> observe;
};

struct ResBlock {
    FusionStyle style = FusionStyle::ScaleShift;
    bool skip = false;
    std::size_t groups = 4;

    Tensor w_in;        // [c_in, c]
    Tensor b_in;        // [c]
    Tensor w_emb;       // [emb_dim, 2c] (ScaleShift) or [emb_dim, c]
    Tensor b_emb;       // [2c] or [c]
    Tensor norm_gamma;  // [c]
    Tensor norm_beta;   // [c]
    Tensor w_out;       // [c, c_out]
    Tensor b_out;       // [c_out]

    /// Per-channel divisor applied to the fused activation before w_out.
    /// Empty unless a smoothing plan has been folded in.
    std::vector<double> smooth;

    std::size_t in_dim() const { return w_in.dim(0); }
    std::size_t hidden() const { return w_in.dim(1); }
    std::size_t out_dim() const { return w_out.dim(1); }
    std::size_t emb_dim() const { return w_emb.dim(0); }

    Tensor &weight(WeightKind kind);
    const Tensor &weight(WeightKind kind) const;

    std::vector<std::pair<std::string, Tensor *>> parameters();
    std::vector<std::pair<std::string, const Tensor *>> parameters() const;

    /// Throws ShapeError unless all parameter shapes agree with each other.
    void validate() const;
};

/// Randomly initialized block (scaled normal weights, unit gamma).
ResBlock make_resblock(std::size_t in_dim, std::size_t hidden, std::size_t out_dim, std::size_t emb_dim,
                       FusionStyle style, bool skip, std::size_t groups, Rng &rng);

/// Group normalization of every row: per (row, group) zero mean and unit
/// population std, with the std floored at kNormEpsilon.
Tensor group_normalize(const Tensor &v, std::size_t groups);

/// One resblock applied to a batch. `emb` holds one embedding row per batch
/// row, or a single row shared by the whole batch.
Tensor resblock_forward(const ResBlock &block, const Tensor &h, const Tensor &emb, int block_index = 0,
                        const ForwardHooks *hooks = nullptr);

/// Sinusoidal timestep embedding: sin terms then cos terms at geometrically
/// spaced frequencies.
Tensor sinusoidal_embedding(int t, std::size_t emb_dim, double max_period = 10000.0);
Tensor embedding_rows(std::span<const int> ts, std::size_t emb_dim, double max_period = 10000.0);

/// Anything that predicts eps from (x_t, t) for a batch sharing one timestep.
class NoisePredictor {
public:
    virtual ~NoisePredictor() = default;
    virtual Tensor predict(const Tensor &x, int t) const = 0;
};

struct ModelSpec {
    std::size_t data_dim = 2;
    std::size_t hidden = 64;
    std::size_t emb_dim = 32;
    std::size_t blocks = 3;
    std::size_t groups = 4;
    FusionStyle style = FusionStyle::ScaleShift;
};

class DenoiserModel : public NoisePredictor {
public:
    DenoiserModel() = default;
    DenoiserModel(std::vector<ResBlock> blocks, std::size_t emb_dim, double max_period = 10000.0);

    /// Residual stack: data_dim -> hidden, (blocks - 2) x hidden -> hidden with
    /// skip, hidden -> data_dim.
    static DenoiserModel create(const ModelSpec &spec, Rng &rng);

    Tensor predict(const Tensor &x, int t) const override { return forward(x, t); }

    Tensor forward(const Tensor &x, int t, const ForwardHooks *hooks = nullptr) const;
    /// Per-row timesteps (training batches).
    Tensor forward(const Tensor &x, std::span<const int> ts, const ForwardHooks *hooks = nullptr) const;

    std::vector<ResBlock> &blocks() noexcept { return blocks_; }
    const std::vector<ResBlock> &blocks() const noexcept { return blocks_; }
    std::size_t emb_dim() const noexcept { return emb_dim_; }
    double max_period() const noexcept { return max_period_; }
    std::size_t data_dim() const { return blocks_.front().in_dim(); }

    std::vector<std::pair<std::string, Tensor *>> parameters();
    std::vector<std::pair<std::string, const Tensor *>> parameters() const;

    std::vector<HookPoint> hook_points() const;
    std::vector<WeightPoint> weight_points() const;

    /// Canonical description of the architecture (dims, styles, skips).
    std::string architecture() const;
    std::uint64_t architecture_hash() const;

private:
    Tensor run(const Tensor &x, const Tensor &emb, const ForwardHooks *hooks) const;

    std::vector<ResBlock> blocks_;
    std::size_t emb_dim_ = 0;
    double max_period_ = 10000.0;
};

/// Multiplies the fused activation of the selected channels in every block by
/// `factor` through the embedding path (ScaleShift: 1 + scale_t and shift_t;
/// AddGroupNorm: the affine gamma and beta) and divides the matching w_out rows
/// by the same factor, so the network function is unchanged while the fusion
/// activation acquires embedding-driven outlier channels.
void inject_channel_imbalance(DenoiserModel &model, double factor, std::span<const std::size_t> channels);

/// Little-endian container: magic, JSON header (version, architecture hash,
/// dims, styles, parameter table), then raw float64 parameter arrays in
/// declaration order.
void save_weights(const DenoiserModel &model, const std::string &path);
DenoiserModel load_weights(const std::string &path);

struct GaussianMixture {
    std::vector<double> weights;
    Tensor means;  // [K, d]
    std::vector<double> stds;

    std::size_t components() const { return weights.size(); }
    std::size_t dim() const { return means.dim(1); }

    /// Throws std::invalid_argument unless weights are positive and sum to 1
    /// and all stds are positive.
    void validate() const;
    Tensor sample(Rng &rng, std::size_t n) const;
};

/// Per-row component responsibilities under the t-step pushforward of the mixture.
Tensor mixture_responsibilities(const Tensor &x_t, int t, const GaussianMixture &gmm, const NoiseSchedule &s);

/// E[x0 | x_t] under the mixture prior.
Tensor posterior_mean_x0(const Tensor &x_t, int t, const GaussianMixture &gmm, const NoiseSchedule &s);

/// Closed-form optimal eps predictor for mixture data.
Tensor analytic_eps(const Tensor &x_t, int t, const GaussianMixture &gmm, const NoiseSchedule &s);

class AnalyticDenoiser : public NoisePredictor {
public:
    AnalyticDenoiser(GaussianMixture gmm, NoiseSchedule schedule)
        : gmm_(std::move(gmm)), schedule_(std::move(schedule))
    {
    }
    Tensor predict(const Tensor &x, int t) const override { return analytic_eps(x, t, gmm_, schedule_); }

private:
    GaussianMixture gmm_;
    NoiseSchedule schedule_;
};

}  // namespace qncd
