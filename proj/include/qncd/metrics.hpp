#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "qncd/inter.hpp"
#include "qncd/quantizer.hpp"
#include "qncd/rng.hpp"
#include "qncd/tensor.hpp"

namespace qncd {

/// Returned by snr_db when the two tensors are identical.
inline constexpr double kInfiniteSnr = std::numeric_limits<double>::infinity();

/// 10 log10(||eps_fp||^2 / ||eps_q - eps_fp||^2)
double snr_db(const Tensor &eps_fp, const Tensor &eps_q);

/// Cosine of the angle between the flattened tensors; throws std::domain_error on a zero tensor.
double cosine_similarity(const Tensor &eps_fp, const Tensor &eps_q);

/// Wasserstein-1 distance between two 1-D empirical distributions.
double wasserstein_1d(std::vector<double> a, std::vector<double> b);

/// n unit vectors drawn uniformly on the sphere, one per row.
Tensor random_directions(std::size_t dim, std::size_t n, Rng &rng);

/// Mean over the given directions of the 1-D W1 distance between projections.
double sliced_wasserstein(const Tensor &a, const Tensor &b, const Tensor &directions);
double sliced_wasserstein(const Tensor &a, const Tensor &b, std::size_t n_projections, Rng &rng);

struct LayerError {
    std::string hook;
    double cosine = 1.0;
    double mse = 0.0;
};

/// Runs the full-precision model and the quantized model on the same batch
/// and compares activations hook by hook in execution order. Activations are
/// compared in unsmoothed units.
std::vector<LayerError> layer_error_profile(const DenoiserModel &base, const QuantizedDenoiser &qnet,
                                            const Tensor &probe, int t);

struct TrajectoryRow {
    std::size_t step_index = 0;
    int t = 0;
    std::vector<double> mean;
    std::vector<double> std;
    double snr_db = kInfiniteSnr;
    double cosine = 1.0;
    bool estimation = false;
};

/// Per-step statistics of one sampling run.
struct TrajectoryRecord {
    std::string run_id;
    std::vector<TrajectoryRow> rows;
};

/// Pairs a run with its full-precision reference (same noise draws). Both runs
/// must have kept their eps.
TrajectoryRecord make_trajectory(const std::string &run_id, const SampleResult &run, const SampleResult &reference);

struct SummaryRow {
    std::string run_id;
    std::string config_label;
    bool intra_enabled = false;
    std::size_t inter_stages = 0;
    std::string correction_mode;
    std::uint64_t seed = 0;
    double swd_to_fp = 0.0;
    double final_cosine = 1.0;
    std::uint64_t eval_count = 0;
};

struct LayerRow {
    std::string run_id;
    LayerError error;
};

/// Shortest round-trip decimal form; "inf" for +infinity.
std::string format_real(double v);

std::string trajectory_csv(const std::vector<TrajectoryRecord> &records);
std::string summary_csv(const std::vector<SummaryRow> &rows);
std::string layers_csv(const std::vector<LayerRow> &rows);

std::vector<SummaryRow> parse_summary_csv(const std::string &text);

/// Writes `contents` to `path`; throws std::runtime_error naming the path on failure.
void write_text_file(const std::string &path, const std::string &contents);
std::string read_text_file(const std::string &path);

}  // namespace qncd
