#include "qncd/denoiser.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace qncd {

std::string to_string(FusionStyle style)
{
    return style == FusionStyle::ScaleShift ? "scale_shift" : "add_group_norm";
}

FusionStyle parse_fusion_style(const std::string &text)
{
    if (text == "scale_shift")
        return FusionStyle::ScaleShift;
    if (text == "add_group_norm")
        return FusionStyle::AddGroupNorm;
    throw std::invalid_argument("unknown fusion style '" + text + "' (expected scale_shift or add_group_norm)");
}

std::string HookPoint::path() const
{
    static constexpr const char *names[] = {"in", "emb", "emb_out", "fusion"};
    return "blocks." + std::to_string(block) + "." + names[static_cast<int>(kind)];
}

std::string WeightPoint::path() const
{
    static constexpr const char *names[] = {"w_in", "w_emb", "w_out"};
    return "blocks." + std::to_string(block) + "." + names[static_cast<int>(kind)];
}

Tensor &ResBlock::weight(WeightKind kind)
{
    switch (kind) {
    case WeightKind::In:
        return w_in;
    case WeightKind::Emb:
        return w_emb;
    case WeightKind::Out:
        break;
    }
    return w_out;
}

const Tensor &ResBlock::weight(WeightKind kind) const
{
    return const_cast<ResBlock *>(this)->weight(kind);
}

std::vector<std::pair<std::string, Tensor *>> ResBlock::parameters()
{
    return {{"w_in", &w_in},           {"b_in", &b_in},           {"w_emb", &w_emb}, {"b_emb", &b_emb},
            {"norm_gamma", &norm_gamma}, {"norm_beta", &norm_beta}, {"w_out", &w_out}, {"b_out", &b_out}};
}

std::vector<std::pair<std::string, const Tensor *>> ResBlock::parameters() const
{
    std::vector<std::pair<std::string, const Tensor *>> out;
    for (auto &[name, p] : const_cast<ResBlock *>(this)->parameters())
        out.emplace_back(name, p);
    return out;
}

void ResBlock::validate() const
{
    const std::size_t c = hidden();
    const std::size_t emb_width = style == FusionStyle::ScaleShift ? 2 * c : c;
    auto expect = [](const Tensor &t, const Shape &shape, const char *name) {
        if (t.shape() != shape)
            throw ShapeError(std::string("ResBlock.") + name, t.shape(), shape);
    };
    expect(b_in, {c}, "b_in");
    expect(w_emb, {emb_dim(), emb_width}, "w_emb");
    expect(b_emb, {emb_width}, "b_emb");
    expect(norm_gamma, {c}, "norm_gamma");
    expect(norm_beta, {c}, "norm_beta");
    expect(w_out, {c, out_dim()}, "w_out");
    expect(b_out, {out_dim()}, "b_out");
    if (groups == 0 || c % groups != 0)
        throw ShapeError("ResBlock: " + std::to_string(groups) + " groups do not divide width " + std::to_string(c));
    if (skip && in_dim() != out_dim())
        throw ShapeError("ResBlock: skip requires equal input/output widths", {in_dim()}, {out_dim()});
    if (!smooth.empty() && smooth.size() != c)
        throw ShapeError("ResBlock.smooth", {smooth.size()}, {c});
}

ResBlock make_resblock(std::size_t in_dim, std::size_t hidden, std::size_t out_dim, std::size_t emb_dim,
                       FusionStyle style, bool skip, std::size_t groups, Rng &rng)
{
    auto scaled = [&](Shape shape, double std) {
        Tensor t = randn(rng, shape);
        for (auto &v : t.values())
            v *= std;
        return t;
    };
    const std::size_t emb_width = style == FusionStyle::ScaleShift ? 2 * hidden : hidden;
    ResBlock b;
    b.style = style;
    b.skip = skip;
    b.groups = groups;
    b.w_in = scaled({in_dim, hidden}, 1.0 / std::sqrt(static_cast<double>(in_dim)));
    b.b_in = Tensor({hidden});
    b.w_emb = scaled({emb_dim, emb_width}, 0.5 / std::sqrt(static_cast<double>(emb_dim)));
    b.b_emb = Tensor({emb_width});
    b.norm_gamma = Tensor({hidden}, 1.0);
    b.norm_beta = Tensor({hidden});
    b.w_out = scaled({hidden, out_dim}, 1.0 / std::sqrt(static_cast<double>(hidden)));
    b.b_out = Tensor({out_dim});
    b.validate();
    return b;
}

Tensor group_normalize(const Tensor &v, std::size_t groups)
{
    const std::size_t c = v.cols();
    if (groups == 0 || c % groups != 0)
        throw ShapeError("group_normalize: " + std::to_string(groups) + " groups over width " + std::to_string(c));
    const std::size_t gs = c / groups;
    Tensor n(v.shape());
    for (std::size_t r = 0; r < v.rows(); ++r) {
        auto in = v.row(r);
        auto out = n.row(r);
        for (std::size_t g = 0; g < groups; ++g) {
            double mu = 0.0;
            for (std::size_t j = g * gs; j < (g + 1) * gs; ++j)
                mu += in[j];
            mu /= static_cast<double>(gs);
            double var = 0.0;
            for (std::size_t j = g * gs; j < (g + 1) * gs; ++j)
                var += (in[j] - mu) * (in[j] - mu);
            const double sd = std::max(std::sqrt(var / static_cast<double>(gs)), kNormEpsilon);
            for (std::size_t j = g * gs; j < (g + 1) * gs; ++j)
                out[j] = (in[j] - mu) / sd;
        }
    }
    return n;
}

namespace {

inline double silu(double x)
{
    return x / (1.0 + std::exp(-x));
}

void apply_hook(const ForwardHooks *hooks, const HookPoint &hp, Tensor &act, std::span<const double> divisor = {})
{
    if (!hooks)
        return;
    if (hooks->transform)
        hooks->transform(hp, act);
    if (hooks->observe)
        hooks->observe(hp, act, divisor);
}

}  // namespace

Tensor resblock_forward(const ResBlock &block, const Tensor &h, const Tensor &emb, int block_index,
                        const ForwardHooks *hooks)
{
    if (h.rank() != 2 || h.cols() != block.in_dim())
        throw ShapeError("resblock_forward(h)", h.shape(), block.w_in.shape());
    if (emb.rank() != 2 || emb.cols() != block.emb_dim() || (emb.rows() != 1 && emb.rows() != h.rows()))
        throw ShapeError("resblock_forward(emb)", emb.shape(), block.w_emb.shape());
    const std::size_t c = block.hidden();
    const std::size_t n = h.rows();

    Tensor h_in = h;
    apply_hook(hooks, {block_index, HookKind::Input}, h_in);
    Tensor a = add_row(matmul(h_in, block.w_in), block.b_in.values());
    for (auto &v : a.values())
        v = silu(v);

    Tensor e = emb;
    apply_hook(hooks, {block_index, HookKind::Embedding}, e);
    Tensor proj = add_row(matmul(e, block.w_emb), block.b_emb.values());
    apply_hook(hooks, {block_index, HookKind::EmbeddingOut}, proj);

    Tensor fused({n, c});
    const auto gamma = block.norm_gamma.values();
    const auto beta = block.norm_beta.values();
    if (block.style == FusionStyle::ScaleShift) {
        const Tensor normed = group_normalize(a, block.groups);
        for (std::size_t r = 0; r < n; ++r) {
            const auto p = proj.row(proj.rows() == 1 ? 0 : r);
            const auto nr = normed.row(r);
            auto f = fused.row(r);
            for (std::size_t j = 0; j < c; ++j)
                f[j] = (nr[j] * gamma[j] + beta[j]) * (1.0 + p[j]) + p[c + j];
        }
    } else {
        Tensor v = a;
        for (std::size_t r = 0; r < n; ++r) {
            const auto p = proj.row(proj.rows() == 1 ? 0 : r);
            auto vr = v.row(r);
            for (std::size_t j = 0; j < c; ++j)
                vr[j] += p[j];
        }
        const Tensor normed = group_normalize(v, block.groups);
        for (std::size_t r = 0; r < n; ++r) {
            const auto nr = normed.row(r);
            auto f = fused.row(r);
            for (std::size_t j = 0; j < c; ++j)
                f[j] = nr[j] * gamma[j] + beta[j];
        }
    }
    if (!block.smooth.empty())
        for (std::size_t r = 0; r < n; ++r) {
            auto f = fused.row(r);
            for (std::size_t j = 0; j < c; ++j)
                f[j] /= block.smooth[j];
        }
    apply_hook(hooks, {block_index, HookKind::Fusion}, fused, block.smooth);

    Tensor out = add_row(matmul(fused, block.w_out), block.b_out.values());
    if (block.skip)
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] += h[i];
    return out;
}

Tensor sinusoidal_embedding(int t, std::size_t emb_dim, double max_period)
{
    if (emb_dim == 0 || emb_dim % 2 != 0)
        throw std::invalid_argument("sinusoidal_embedding: emb_dim must be a positive even number, got " +
                                    std::to_string(emb_dim));
    const std::size_t half = emb_dim / 2;
    Tensor out({1, emb_dim});
    for (std::size_t i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(max_period) * static_cast<double>(i) / static_cast<double>(half));
        out[i] = std::sin(t * freq);
        out[half + i] = std::cos(t * freq);
    }
    return out;
}

Tensor embedding_rows(std::span<const int> ts, std::size_t emb_dim, double max_period)
{
    Tensor out({ts.size(), emb_dim});
    for (std::size_t r = 0; r < ts.size(); ++r) {
        const Tensor e = sinusoidal_embedding(ts[r], emb_dim, max_period);
        std::copy(e.values().begin(), e.values().end(), out.row(r).begin());
    }
    return out;
}

DenoiserModel::DenoiserModel(std::vector<ResBlock> blocks, std::size_t emb_dim, double max_period)
    : blocks_(std::move(blocks)), emb_dim_(emb_dim), max_period_(max_period)
{
    if (blocks_.empty())
        throw std::invalid_argument("DenoiserModel: no blocks");
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        blocks_[i].validate();
        if (blocks_[i].emb_dim() != emb_dim_)
            throw ShapeError("DenoiserModel: block " + std::to_string(i) + " embedding width mismatch");
        if (i > 0 && blocks_[i].in_dim() != blocks_[i - 1].out_dim())
            throw ShapeError("DenoiserModel: block chain", blocks_[i - 1].w_out.shape(), blocks_[i].w_in.shape());
    }
    if (blocks_.front().in_dim() != blocks_.back().out_dim())
        throw ShapeError("DenoiserModel: output width must equal input width", blocks_.front().w_in.shape(),
                         blocks_.back().w_out.shape());
}

DenoiserModel DenoiserModel::create(const ModelSpec &spec, Rng &rng)
{
    std::vector<ResBlock> blocks;
    const std::size_t d = spec.data_dim, c = spec.hidden;
    if (spec.blocks == 1) {
        blocks.push_back(make_resblock(d, c, d, spec.emb_dim, spec.style, false, spec.groups, rng));
    } else {
        blocks.push_back(make_resblock(d, c, c, spec.emb_dim, spec.style, false, spec.groups, rng));
        for (std::size_t i = 1; i + 1 < spec.blocks; ++i)
            blocks.push_back(make_resblock(c, c, c, spec.emb_dim, spec.style, true, spec.groups, rng));
        blocks.push_back(make_resblock(c, c, d, spec.emb_dim, spec.style, false, spec.groups, rng));
    }
    return DenoiserModel(std::move(blocks), spec.emb_dim);
}

Tensor DenoiserModel::run(const Tensor &x, const Tensor &emb, const ForwardHooks *hooks) const
{
    Tensor h = x;
    for (std::size_t i = 0; i < blocks_.size(); ++i)
        h = resblock_forward(blocks_[i], h, emb, static_cast<int>(i), hooks);
    return h;
}

Tensor DenoiserModel::forward(const Tensor &x, int t, const ForwardHooks *hooks) const
{
    if (x.rank() != 2 || x.cols() != data_dim())
        throw ShapeError("DenoiserModel::forward", x.shape(), Shape{x.rows(), data_dim()});
    return run(x, sinusoidal_embedding(t, emb_dim_, max_period_), hooks);
}

Tensor DenoiserModel::forward(const Tensor &x, std::span<const int> ts, const ForwardHooks *hooks) const
{
    if (x.rank() != 2 || x.cols() != data_dim() || ts.size() != x.rows())
        throw ShapeError("DenoiserModel::forward", x.shape(), Shape{ts.size(), data_dim()});
    return run(x, embedding_rows(ts, emb_dim_, max_period_), hooks);
}

std::vector<std::pair<std::string, Tensor *>> DenoiserModel::parameters()
{
    std::vector<std::pair<std::string, Tensor *>> out;
    for (std::size_t i = 0; i < blocks_.size(); ++i)
        for (auto &[name, p] : blocks_[i].parameters())
            out.emplace_back("blocks." + std::to_string(i) + "." + name, p);
    return out;
}

std::vector<std::pair<std::string, const Tensor *>> DenoiserModel::parameters() const
{
    std::vector<std::pair<std::string, const Tensor *>> out;
    for (auto &[name, p] : const_cast<DenoiserModel *>(this)->parameters())
        out.emplace_back(name, p);
    return out;
}

std::vector<HookPoint> DenoiserModel::hook_points() const
{
    std::vector<HookPoint> out;
    for (std::size_t i = 0; i < blocks_.size(); ++i)
        for (auto kind : kHookKinds)
            out.push_back({static_cast<int>(i), kind});
    return out;
}

std::vector<WeightPoint> DenoiserModel::weight_points() const
{
    std::vector<WeightPoint> out;
    for (std::size_t i = 0; i < blocks_.size(); ++i)
        for (auto kind : kWeightKinds)
            out.push_back({static_cast<int>(i), kind});
    return out;
}

std::string DenoiserModel::architecture() const
{
    std::ostringstream os;
    os << "emb=" << emb_dim_ << ";period=" << max_period_;
    for (const auto &b : blocks_)
        os << ";[" << b.in_dim() << "," << b.hidden() << "," << b.out_dim() << "," << to_string(b.style)
           << ",skip=" << b.skip << ",groups=" << b.groups << "]";
    return os.str();
}

std::uint64_t DenoiserModel::architecture_hash() const
{
    return fnv1a(architecture());
}

void inject_channel_imbalance(DenoiserModel &model, double factor, std::span<const std::size_t> channels)
{
    if (!(factor > 0.0))
        throw std::invalid_argument("inject_channel_imbalance: factor must be positive");
    for (auto &b : model.blocks()) {
        const std::size_t c = b.hidden();
        for (std::size_t ch : channels) {
            if (ch >= c)
                throw std::out_of_range("inject_channel_imbalance: channel " + std::to_string(ch) +
                                        " outside width " + std::to_string(c));
            if (b.style == FusionStyle::ScaleShift) {
                // (1 + scale) -> factor * (1 + scale), shift -> factor * shift
                for (std::size_t r = 0; r < b.emb_dim(); ++r) {
                    b.w_emb.at(r, ch) *= factor;
                    b.w_emb.at(r, c + ch) *= factor;
                }
                b.b_emb[ch] = factor * b.b_emb[ch] + (factor - 1.0);
                b.b_emb[c + ch] *= factor;
            } else {
                b.norm_gamma[ch] *= factor;
                b.norm_beta[ch] *= factor;
            }
            for (std::size_t j = 0; j < b.out_dim(); ++j)
                b.w_out.at(ch, j) /= factor;
        }
    }
}

// ---------------------------------------------------------------------------
// Weight container

namespace {

constexpr char kMagic[8] = {'Q', 'N', 'C', 'D', 'W', 'T', 'S', '1'};
constexpr int kContainerVersion = 1;

void write_u64(std::ostream &os, std::uint64_t v)
{
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i)
        buf[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char *>(buf), 8);
}

std::uint64_t read_u64(std::istream &is)
{
    unsigned char buf[8];
    if (!is.read(reinterpret_cast<char *>(buf), 8))
        throw std::runtime_error("weights: truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
        v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
}

std::string hex(std::uint64_t v)
{
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

}  // namespace

void save_weights(const DenoiserModel &model, const std::string &path)
{
    nlohmann::json header;
    header["version"] = kContainerVersion;
    header["architecture"] = model.architecture();
    header["architecture_hash"] = hex(model.architecture_hash());
    header["emb_dim"] = model.emb_dim();
    header["max_period"] = model.max_period();
    auto &blocks = header["blocks"] = nlohmann::json::array();
    for (const auto &b : model.blocks())
        blocks.push_back({{"style", to_string(b.style)},
                          {"skip", b.skip},
                          {"groups", b.groups},
                          {"in", b.in_dim()},
                          {"hidden", b.hidden()},
                          {"out", b.out_dim()},
                          {"emb_dim", b.emb_dim()},
                          {"smooth", b.smooth}});
    auto &params = header["parameters"] = nlohmann::json::array();
    for (const auto &[name, p] : model.parameters())
        params.push_back({{"name", name}, {"shape", p->shape()}});

    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw std::runtime_error("weights: cannot open '" + path + "' for writing");
    const std::string text = header.dump();
    os.write(kMagic, sizeof kMagic);
    write_u64(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto &[name, p] : model.parameters())
        for (double v : p->values())
            write_u64(os, std::bit_cast<std::uint64_t>(v));
    if (!os)
        throw std::runtime_error("weights: write to '" + path + "' failed");
}

DenoiserModel load_weights(const std::string &path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw std::runtime_error("weights: cannot open '" + path + "'");
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error("weights: '" + path + "' is not a weight container");
    const std::uint64_t len = read_u64(is);
    std::string text(len, '\0');
    if (!is.read(text.data(), static_cast<std::streamsize>(len)))
        throw std::runtime_error("weights: truncated header in '" + path + "'");
    const auto header = nlohmann::json::parse(text);
    if (header.at("version").get<int>() != kContainerVersion)
        throw std::runtime_error("weights: unsupported container version");

    std::vector<ResBlock> blocks;
    for (const auto &jb : header.at("blocks")) {
        ResBlock b;
        b.style = parse_fusion_style(jb.at("style").get<std::string>());
        b.skip = jb.at("skip").get<bool>();
        b.groups = jb.at("groups").get<std::size_t>();
        const auto in = jb.at("in").get<std::size_t>(), c = jb.at("hidden").get<std::size_t>(),
                   out = jb.at("out").get<std::size_t>(), e = jb.at("emb_dim").get<std::size_t>();
        const std::size_t ew = b.style == FusionStyle::ScaleShift ? 2 * c : c;
        b.w_in = Tensor({in, c});
        b.b_in = Tensor({c});
        b.w_emb = Tensor({e, ew});
        b.b_emb = Tensor({ew});
        b.norm_gamma = Tensor({c});
        b.norm_beta = Tensor({c});
        b.w_out = Tensor({c, out});
        b.b_out = Tensor({out});
        b.smooth = jb.at("smooth").get<std::vector<double>>();
        blocks.push_back(std::move(b));
    }
    DenoiserModel model(std::move(blocks), header.at("emb_dim").get<std::size_t>(),
                        header.at("max_period").get<double>());
    if (hex(model.architecture_hash()) != header.at("architecture_hash").get<std::string>())
        throw std::runtime_error("weights: architecture hash mismatch in '" + path + "'");

    const auto &table = header.at("parameters");
    auto params = model.parameters();
    if (table.size() != params.size())
        throw std::runtime_error("weights: parameter table does not match architecture");
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto &[name, p] = params[i];
        if (table[i].at("name").get<std::string>() != name || table[i].at("shape").get<Shape>() != p->shape())
            throw std::runtime_error("weights: parameter '" + name + "' does not match the container");
        for (auto &v : p->values())
            v = std::bit_cast<double>(read_u64(is));
    }
    return model;
}

// ---------------------------------------------------------------------------
// Gaussian mixture oracle

void GaussianMixture::validate() const
{
    if (weights.empty() || means.rank() != 2 || means.dim(0) != weights.size() || stds.size() != weights.size())
        throw std::invalid_argument("GaussianMixture: weights, means and stds must describe the same components");
    double total = 0.0;
    for (double w : weights) {
        if (!(w > 0.0))
            throw std::invalid_argument("GaussianMixture: weights must be positive");
        total += w;
    }
    if (std::abs(total - 1.0) > 1e-9)
        throw std::invalid_argument("GaussianMixture: weights must sum to 1");
    for (double s : stds)
        if (!(s > 0.0))
            throw std::invalid_argument("GaussianMixture: stds must be positive");
}

Tensor GaussianMixture::sample(Rng &rng, std::size_t n) const
{
    const std::size_t d = dim();
    Tensor out({n, d});
    for (std::size_t r = 0; r < n; ++r) {
        double u = rng.uniform();
        std::size_t k = 0;
        while (k + 1 < components() && u >= weights[k]) {
            u -= weights[k];
            ++k;
        }
        for (std::size_t j = 0; j < d; ++j)
            out.at(r, j) = means.at(k, j) + stds[k] * rng.normal();
    }
    return out;
}

Tensor mixture_responsibilities(const Tensor &x_t, int t, const GaussianMixture &gmm, const NoiseSchedule &s)
{
    if (x_t.rank() != 2 || x_t.cols() != gmm.dim())
        throw ShapeError("mixture_responsibilities", x_t.shape(), gmm.means.shape());
    const double ab = s.alpha_bar(t), sab = std::sqrt(ab);
    const std::size_t K = gmm.components(), d = gmm.dim();
    Tensor resp({x_t.rows(), K});
    std::vector<double> logp(K);
    for (std::size_t r = 0; r < x_t.rows(); ++r) {
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < K; ++k) {
            const double var = ab * gmm.stds[k] * gmm.stds[k] + (1.0 - ab);
            double sq = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double diff = x_t.at(r, j) - sab * gmm.means.at(k, j);
                sq += diff * diff;
            }
            logp[k] = std::log(gmm.weights[k]) - 0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi * var) -
                      0.5 * sq / var;
            best = std::max(best, logp[k]);
        }
        double total = 0.0;
        for (std::size_t k = 0; k < K; ++k)
            total += std::exp(logp[k] - best);
        for (std::size_t k = 0; k < K; ++k)
            resp.at(r, k) = std::exp(logp[k] - best) / total;
    }
    return resp;
}

Tensor posterior_mean_x0(const Tensor &x_t, int t, const GaussianMixture &gmm, const NoiseSchedule &s)
{
    const Tensor resp = mixture_responsibilities(x_t, t, gmm, s);
    const double ab = s.alpha_bar(t), sab = std::sqrt(ab);
    const std::size_t K = gmm.components(), d = gmm.dim();
    Tensor out(x_t.shape());
    for (std::size_t r = 0; r < x_t.rows(); ++r)
        for (std::size_t k = 0; k < K; ++k) {
            const double s0 = gmm.stds[k] * gmm.stds[k];
            const double denom = ab * s0 + (1.0 - ab);
            for (std::size_t j = 0; j < d; ++j) {
                const double m = (sab * s0 * x_t.at(r, j) + (1.0 - ab) * gmm.means.at(k, j)) / denom;
                out.at(r, j) += resp.at(r, k) * m;
            }
        }
    return out;
}

Tensor analytic_eps(const Tensor &x_t, int t, const GaussianMixture &gmm, const NoiseSchedule &s)
{
    const Tensor x0 = posterior_mean_x0(x_t, t, gmm, s);
    const double ab = s.alpha_bar(t);
    const double sab = std::sqrt(ab), snoise = std::sqrt(1.0 - ab);
    Tensor out(x_t.shape());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = (x_t[i] - sab * x0[i]) / snoise;
    return out;
}

}  // namespace qncd
