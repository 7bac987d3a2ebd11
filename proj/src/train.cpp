#include "qncd/train.hpp"

#include <cmath>
#include <numbers>

namespace qncd {

TrainingDiverged::TrainingDiverged(std::size_t iteration, double loss)
    : std::runtime_error("training diverged at iteration " + std::to_string(iteration) + " (loss " +
                         std::to_string(loss) + ")"),
      iteration_(iteration)
{
}

namespace {

struct BlockCache {
    Tensor h;       // block input
    Tensor u;       // pre-activation h w_in + b_in
    Tensor proj;    // emb_layer output
    Tensor normed;  // group-normalized features
    Tensor raw_sd;  // [rows, groups] unguarded std of each normalized group
    Tensor fused;   // input of w_out (after the smoothing divisor)
};

Tensor group_std(const Tensor &v, std::size_t groups)
{
    const std::size_t gs = v.cols() / groups;
    Tensor sd({v.rows(), groups});
    for (std::size_t r = 0; r < v.rows(); ++r)
        for (std::size_t g = 0; g < groups; ++g) {
            double mu = 0.0, var = 0.0;
            for (std::size_t j = g * gs; j < (g + 1) * gs; ++j)
                mu += v.at(r, j);
            mu /= static_cast<double>(gs);
            for (std::size_t j = g * gs; j < (g + 1) * gs; ++j)
                var += (v.at(r, j) - mu) * (v.at(r, j) - mu);
            sd.at(r, g) = std::sqrt(var / static_cast<double>(gs));
        }
    return sd;
}

inline double sigmoid(double x)
{
    return 1.0 / (1.0 + std::exp(-x));
}

std::vector<double> column_sum(const Tensor &t)
{
    std::vector<double> s(t.cols(), 0.0);
    for (std::size_t r = 0; r < t.rows(); ++r)
        for (std::size_t j = 0; j < t.cols(); ++j)
            s[j] += t.at(r, j);
    return s;
}

Tensor block_forward_cached(const ResBlock &b, const Tensor &h, const Tensor &emb, BlockCache &cache)
{
    const std::size_t n = h.rows(), c = b.hidden();
    cache.h = h;
    cache.u = add_row(matmul(h, b.w_in), b.b_in.values());
    Tensor a = cache.u;
    for (auto &v : a.values())
        v = v * sigmoid(v);
    cache.proj = add_row(matmul(emb, b.w_emb), b.b_emb.values());
    Tensor src = a;
    if (b.style == FusionStyle::AddGroupNorm)
        for (std::size_t r = 0; r < n; ++r) {
            const auto p = cache.proj.row(cache.proj.rows() == 1 ? 0 : r);
            for (std::size_t j = 0; j < c; ++j)
                src.at(r, j) += p[j];
        }
    cache.normed = group_normalize(src, b.groups);
    cache.raw_sd = group_std(src, b.groups);
    cache.fused = Tensor({n, c});
    for (std::size_t r = 0; r < n; ++r) {
        const auto p = cache.proj.row(cache.proj.rows() == 1 ? 0 : r);
        for (std::size_t j = 0; j < c; ++j) {
            const double m = cache.normed.at(r, j) * b.norm_gamma[j] + b.norm_beta[j];
            double f = b.style == FusionStyle::ScaleShift ? m * (1.0 + p[j]) + p[c + j] : m;
            if (!b.smooth.empty())
                f /= b.smooth[j];
            cache.fused.at(r, j) = f;
        }
    }
    Tensor out = add_row(matmul(cache.fused, b.w_out), b.b_out.values());
    if (b.skip)
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] += h[i];
    return out;
}

// Returns the gradient with respect to the block input; parameter gradients go to g.
Tensor block_backward(const ResBlock &b, const Tensor &emb, const BlockCache &cache, const Tensor &d_out, ResBlock &g)
{
    const std::size_t n = d_out.rows(), c = b.hidden();
    const std::size_t gs = c / b.groups;

    g.w_out = matmul_tn(cache.fused, d_out);
    g.b_out = Tensor::vector(column_sum(d_out));
    Tensor d_fused = matmul_nt(d_out, b.w_out);
    if (!b.smooth.empty())
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < c; ++j)
                d_fused.at(r, j) /= b.smooth[j];

    const std::size_t pw = cache.proj.cols();
    Tensor d_proj({n, pw});
    Tensor d_normed({n, c});
    g.norm_gamma = Tensor({c});
    g.norm_beta = Tensor({c});
    for (std::size_t r = 0; r < n; ++r) {
        const auto p = cache.proj.row(cache.proj.rows() == 1 ? 0 : r);
        for (std::size_t j = 0; j < c; ++j) {
            const double nv = cache.normed.at(r, j);
            double dm = d_fused.at(r, j);
            if (b.style == FusionStyle::ScaleShift) {
                const double m = nv * b.norm_gamma[j] + b.norm_beta[j];
                d_proj.at(r, j) = dm * m;
                d_proj.at(r, c + j) = dm;
                dm *= 1.0 + p[j];
            }
            g.norm_gamma[j] += dm * nv;
            g.norm_beta[j] += dm;
            d_normed.at(r, j) = dm * b.norm_gamma[j];
        }
    }

    // Group-norm backward; a floored std is a constant.
    Tensor d_src({n, c});
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t grp = 0; grp < b.groups; ++grp) {
            const std::size_t lo = grp * gs, hi = lo + gs;
            double mean_dn = 0.0, mean_dn_n = 0.0;
            for (std::size_t j = lo; j < hi; ++j) {
                mean_dn += d_normed.at(r, j);
                mean_dn_n += d_normed.at(r, j) * cache.normed.at(r, j);
            }
            mean_dn /= static_cast<double>(gs);
            mean_dn_n /= static_cast<double>(gs);
            const double sd = cache.raw_sd.at(r, grp);
            const bool floored = sd < kNormEpsilon;
            const double denom = floored ? kNormEpsilon : sd;
            for (std::size_t j = lo; j < hi; ++j) {
                double v = d_normed.at(r, j) - mean_dn;
                if (!floored)
                    v -= cache.normed.at(r, j) * mean_dn_n;
                d_src.at(r, j) = v / denom;
            }
        }
    if (b.style == FusionStyle::AddGroupNorm)
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < c; ++j)
                d_proj.at(r, j) = d_src.at(r, j);

    if (emb.rows() == n) {
        g.w_emb = matmul_tn(emb, d_proj);
    } else {
        const auto summed = column_sum(d_proj);
        g.w_emb = Tensor(b.w_emb.shape());
        for (std::size_t i = 0; i < emb.cols(); ++i)
            for (std::size_t j = 0; j < pw; ++j)
                g.w_emb.at(i, j) = emb[i] * summed[j];
    }
    g.b_emb = Tensor::vector(column_sum(d_proj));

    Tensor du = d_src;
    for (std::size_t i = 0; i < du.size(); ++i) {
        const double u = cache.u[i];
        const double sg = sigmoid(u);
        du[i] *= sg * (1.0 + u * (1.0 - sg));
    }
    g.w_in = matmul_tn(cache.h, du);
    g.b_in = Tensor::vector(column_sum(du));
    Tensor d_h = matmul_nt(du, b.w_in);
    if (b.skip)
        for (std::size_t i = 0; i < d_h.size(); ++i)
            d_h[i] += d_out[i];
    return d_h;
}

}  // namespace

double loss_and_gradients(const DenoiserModel &model, const Tensor &x_t, std::span<const int> ts,
                          const Tensor &target, DenoiserModel &grads)
{
    if (x_t.shape() != target.shape())
        throw ShapeError("loss_and_gradients", x_t.shape(), target.shape());
    if (grads.blocks().size() != model.blocks().size())
        grads = model;
    const Tensor emb = ts.size() == 1 ? sinusoidal_embedding(ts[0], model.emb_dim(), model.max_period())
                                      : embedding_rows(ts, model.emb_dim(), model.max_period());
    if (emb.rows() != 1 && emb.rows() != x_t.rows())
        throw ShapeError("loss_and_gradients: one timestep per row required", x_t.shape(), emb.shape());

    const auto &blocks = model.blocks();
    std::vector<BlockCache> caches(blocks.size());
    Tensor h = x_t;
    for (std::size_t i = 0; i < blocks.size(); ++i)
        h = block_forward_cached(blocks[i], h, emb, caches[i]);

    const double count = static_cast<double>(h.size());
    double loss = 0.0;
    Tensor d = Tensor(h.shape());
    for (std::size_t i = 0; i < h.size(); ++i) {
        const double diff = h[i] - target[i];
        loss += diff * diff;
        d[i] = 2.0 * diff / count;
    }
    loss /= count;

    for (std::size_t i = blocks.size(); i-- > 0;)
        d = block_backward(blocks[i], emb, caches[i], d, grads.blocks()[i]);
    return loss;
}

double eps_mse(const NoisePredictor &net, const Tensor &x_t, int t, const Tensor &target)
{
    const Tensor pred = net.predict(x_t, t);
    return squared_norm(sub(pred, target)) / static_cast<double>(pred.size());
}

TrainResult train(DenoiserModel model, const GaussianMixture &gmm, const NoiseSchedule &s, const TrainOptions &opts)
{
    gmm.validate();
    TrainResult result;
    result.losses.reserve(opts.iterations);
    DenoiserModel grads = model;
    DenoiserModel velocity = model;
    for (auto &[name, p] : velocity.parameters())
        p->fill(0.0);

    Rng rng(opts.seed, fnv1a("train"));
    const std::size_t d = gmm.dim();
    std::vector<int> ts(opts.batch_size);
    for (std::size_t it = 0; it < opts.iterations; ++it) {
        const Tensor x0 = gmm.sample(rng, opts.batch_size);
        const Tensor eps = randn(rng, {opts.batch_size, d});
        Tensor x_t({opts.batch_size, d});
        for (std::size_t r = 0; r < opts.batch_size; ++r) {
            ts[r] = static_cast<int>(rng.uniform_int(1, s.steps()));
            const double ab = s.alpha_bar(ts[r]);
            for (std::size_t j = 0; j < d; ++j)
                x_t.at(r, j) = std::sqrt(ab) * x0.at(r, j) + std::sqrt(1.0 - ab) * eps.at(r, j);
        }
        const double loss = loss_and_gradients(model, x_t, ts, eps, grads);
        if (!std::isfinite(loss))
            throw TrainingDiverged(it, loss);
        result.losses.push_back(loss);

        const double progress = opts.iterations > 1 ? static_cast<double>(it) / (opts.iterations - 1) : 0.0;
        const double lr = opts.learning_rate *
                          (opts.final_lr_fraction +
                           (1.0 - opts.final_lr_fraction) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
        auto params = model.parameters();
        auto gparams = grads.parameters();
        auto vparams = velocity.parameters();
        for (std::size_t k = 0; k < params.size(); ++k) {
            auto pv = params[k].second->values();
            auto gv = gparams[k].second->values();
            auto vv = vparams[k].second->values();
            for (std::size_t i = 0; i < pv.size(); ++i) {
                vv[i] = opts.momentum * vv[i] + gv[i];
                pv[i] -= lr * vv[i];
            }
        }
    }
    result.model = std::move(model);
    return result;
}

}  // namespace qncd
