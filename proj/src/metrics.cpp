#include "qncd/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace qncd {

double snr_db(const Tensor &eps_fp, const Tensor &eps_q)
{
    if (eps_fp.shape() != eps_q.shape())
        throw ShapeError("snr_db", eps_fp.shape(), eps_q.shape());
    const double signal = squared_norm(eps_fp);
    if (signal == 0.0)
        throw std::domain_error("snr_db: zero reference signal");
    const double noise = squared_norm(sub(eps_q, eps_fp));
    if (noise == 0.0)
        return kInfiniteSnr;
    return 10.0 * std::log10(signal / noise);
}

double cosine_similarity(const Tensor &eps_fp, const Tensor &eps_q)
{
    return std::clamp(cosine(eps_fp, eps_q), -1.0, 1.0);
}

double wasserstein_1d(std::vector<double> a, std::vector<double> b)
{
    if (a.empty() || b.empty())
        throw std::invalid_argument("wasserstein_1d: empty sample set");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    // Integrate |F_a - F_b| over the merged support.
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    std::size_t i = 0, j = 0;
    double prev = std::min(a.front(), b.front());
    double total = 0.0;
    while (i < a.size() || j < b.size()) {
        double x;
        if (j >= b.size() || (i < a.size() && a[i] <= b[j]))
            x = a[i];
        else
            x = b[j];
        total += std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb) * (x - prev);
        while (i < a.size() && a[i] == x)
            ++i;
        while (j < b.size() && b[j] == x)
            ++j;
        prev = x;
    }
    return total;
}

Tensor random_directions(std::size_t dim, std::size_t n, Rng &rng)
{
    Tensor dirs({n, dim});
    for (std::size_t r = 0; r < n; ++r) {
        auto row = dirs.row(r);
        double norm = 0.0;
        do {
            norm = 0.0;
            for (auto &v : row) {
                v = rng.normal();
                norm += v * v;
            }
        } while (norm == 0.0);
        norm = std::sqrt(norm);
        for (auto &v : row)
            v /= norm;
    }
    return dirs;
}

double sliced_wasserstein(const Tensor &a, const Tensor &b, const Tensor &directions)
{
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols() || directions.cols() != a.cols())
        throw ShapeError("sliced_wasserstein", a.shape(), b.shape());
    if (a.rows() < 1 || b.rows() < 1)
        throw std::invalid_argument("sliced_wasserstein: empty sample set");
    const Tensor pa = matmul_nt(a, directions);
    const Tensor pb = matmul_nt(b, directions);
    double total = 0.0;
    std::vector<double> ca(a.rows()), cb(b.rows());
    for (std::size_t k = 0; k < directions.rows(); ++k) {
        for (std::size_t r = 0; r < a.rows(); ++r)
            ca[r] = pa.at(r, k);
        for (std::size_t r = 0; r < b.rows(); ++r)
            cb[r] = pb.at(r, k);
        total += wasserstein_1d(ca, cb);
    }
    return total / static_cast<double>(directions.rows());
}

double sliced_wasserstein(const Tensor &a, const Tensor &b, std::size_t n_projections, Rng &rng)
{
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols())
        throw ShapeError("sliced_wasserstein", a.shape(), b.shape());
    return sliced_wasserstein(a, b, random_directions(a.cols(), n_projections, rng));
}

std::vector<LayerError> layer_error_profile(const DenoiserModel &base, const QuantizedDenoiser &qnet,
                                            const Tensor &probe, int t)
{
    if (base.architecture_hash() != qnet.base().architecture_hash())
        throw std::invalid_argument("layer_error_profile: architecture mismatch");
    auto recorder = [](std::map<HookPoint, Tensor> &into) {
        ForwardHooks hooks;
        hooks.observe = [&into](const HookPoint &hp, const Tensor &act, std::span<const double> divisor) {
            Tensor v = act;
            if (!divisor.empty())
                for (std::size_t r = 0; r < v.rows(); ++r) {
                    auto row = v.row(r);
                    for (std::size_t j = 0; j < row.size(); ++j)
                        row[j] *= divisor[j];
                }
            into[hp] = std::move(v);
        };
        return hooks;
    };
    std::map<HookPoint, Tensor> fp, q;
    const ForwardHooks fp_hooks = recorder(fp), q_hooks = recorder(q);
    base.forward(probe, t, &fp_hooks);
    qnet.forward(probe, t, &q_hooks);

    std::vector<LayerError> out;
    for (const auto &hp : base.hook_points()) {
        const Tensor &a = fp.at(hp), &b = q.at(hp);
        LayerError e;
        e.hook = hp.path();
        e.mse = squared_norm(sub(b, a)) / static_cast<double>(a.size());
        const double na = squared_norm(a), nb = squared_norm(b);
        e.cosine = na == 0.0 && nb == 0.0 ? 1.0 : cosine_similarity(a, b);
        out.push_back(e);
    }
    return out;
}

TrajectoryRecord make_trajectory(const std::string &run_id, const SampleResult &run, const SampleResult &reference)
{
    if (run.steps.size() != reference.steps.size() || run.eps.size() != run.steps.size() ||
        reference.eps.size() != reference.steps.size())
        throw std::invalid_argument("make_trajectory: runs must cover the same steps and keep their eps");
    TrajectoryRecord rec;
    rec.run_id = run_id;
    for (std::size_t i = 0; i < run.steps.size(); ++i) {
        TrajectoryRow row;
        row.step_index = i;
        row.t = run.steps[i].t;
        row.mean = run.steps[i].mean;
        row.std = run.steps[i].std;
        row.snr_db = snr_db(reference.eps[i], run.eps[i]);
        row.cosine = cosine_similarity(reference.eps[i], run.eps[i]);
        row.estimation = run.steps[i].estimation;
        rec.rows.push_back(std::move(row));
    }
    return rec;
}

std::string format_real(double v)
{
    if (std::isinf(v))
        return v > 0 ? "inf" : "-inf";
    if (std::isnan(v))
        return "nan";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string trajectory_csv(const std::vector<TrajectoryRecord> &records)
{
    std::size_t d = 0;
    for (const auto &r : records)
        if (!r.rows.empty())
            d = r.rows.front().mean.size();
    std::ostringstream os;
    os << "run_id,step_index,t";
    for (std::size_t j = 0; j < d; ++j)
        os << ",mean_" << j;
    for (std::size_t j = 0; j < d; ++j)
        os << ",std_" << j;
    os << ",snr_db,cosine,is_estimation_step\n";
    for (const auto &rec : records)
        for (const auto &row : rec.rows) {
            os << rec.run_id << ',' << row.step_index << ',' << row.t;
            for (double v : row.mean)
                os << ',' << format_real(v);
            for (double v : row.std)
                os << ',' << format_real(v);
            os << ',' << format_real(row.snr_db) << ',' << format_real(row.cosine) << ',' << (row.estimation ? 1 : 0)
               << '\n';
        }
    return os.str();
}

std::string summary_csv(const std::vector<SummaryRow> &rows)
{
    std::ostringstream os;
    os << "run_id,config_label,intra_enabled,inter_stages,correction_mode,seed,swd_to_fp,final_cosine,eval_count\n";
    for (const auto &r : rows)
        os << r.run_id << ',' << r.config_label << ',' << (r.intra_enabled ? 1 : 0) << ',' << r.inter_stages << ','
           << r.correction_mode << ',' << r.seed << ',' << format_real(r.swd_to_fp) << ','
           << format_real(r.final_cosine) << ',' << r.eval_count << '\n';
    return os.str();
}

std::string layers_csv(const std::vector<LayerRow> &rows)
{
    std::ostringstream os;
    os << "run_id,hook_path,cosine,mse\n";
    for (const auto &r : rows)
        os << r.run_id << ',' << r.error.hook << ',' << format_real(r.error.cosine) << ','
           << format_real(r.error.mse) << '\n';
    return os.str();
}

namespace {

double parse_real(const std::string &s)
{
    if (s == "inf")
        return kInfiniteSnr;
    if (s == "-inf")
        return -kInfiniteSnr;
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw std::invalid_argument("not a number: '" + s + "'");
    return v;
}

}  // namespace

std::vector<SummaryRow> parse_summary_csv(const std::string &text)
{
    std::istringstream is(text);
    std::string line;
    std::getline(is, line);
    if (line != "run_id,config_label,intra_enabled,inter_stages,correction_mode,seed,swd_to_fp,final_cosine,eval_count")
        throw std::invalid_argument("summary.csv: unexpected header '" + line + "'");
    std::vector<SummaryRow> rows;
    while (std::getline(is, line)) {
        if (line.empty())
            continue;
        std::vector<std::string> f;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ','))
            f.push_back(cell);
        if (f.size() != 9)
            throw std::invalid_argument("summary.csv: malformed row '" + line + "'");
        SummaryRow r;
        r.run_id = f[0];
        r.config_label = f[1];
        r.intra_enabled = f[2] == "1";
        r.inter_stages = std::stoul(f[3]);
        r.correction_mode = f[4];
        r.seed = std::stoull(f[5]);
        r.swd_to_fp = parse_real(f[6]);
        r.final_cosine = parse_real(f[7]);
        r.eval_count = std::stoull(f[8]);
        rows.push_back(std::move(r));
    }
    return rows;
}

void write_text_file(const std::string &path, const std::string &contents)
{
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw std::runtime_error("cannot open '" + path + "' for writing");
    os << contents;
    if (!os)
        throw std::runtime_error("write to '" + path + "' failed");
}

std::string read_text_file(const std::string &path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw std::runtime_error("cannot open '" + path + "'");
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

}  // namespace qncd
