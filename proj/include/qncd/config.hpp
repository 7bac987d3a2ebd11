#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "qncd/denoiser.hpp"
#include "qncd/inter.hpp"
#include "qncd/quantizer.hpp"
#include "qncd/schedule.hpp"
#include "qncd/train.hpp"

namespace qncd {

/// Malformed or inconsistent experiment configuration.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
    // [data]
    GaussianMixture data{{0.5, 0.5}, Tensor::matrix({{-2.0, 0.0}, {2.0, 0.0}}), {0.3, 0.3}};

    // [schedule]
    int steps = 100;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    SigmaKind sigma = SigmaKind::SqrtBeta;

    // [model]
    ModelSpec model;
    std::string weights_path;  ///< empty: train from scratch
    double inject_factor = 8.0;
    std::vector<std::size_t> inject_channels{0, 16, 32, 48};

    // [train]
    TrainOptions train{0.02, 0.9, 0.02, 256, 2000, 1};

    // [quant]
    BitConfig bits{8, 8};
    std::size_t calibration_samples = 512;
    std::uint64_t calibration_seed = 1234;
    bool stratified = true;
    int grid_size = 100;
    bool quantize_emb_out = true;

    // [correction]
    bool intra = true;
    std::size_t inter_stages = 4;
    CorrectionMode mode = CorrectionMode::MeanOnly;

    // [sampling]
    SamplerSpec sampler;
    std::size_t batch = 2048;
    std::size_t n_samples = 2048;
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    std::size_t projections = 128;
    int probe_t = 50;  ///< timestep of the layer error profile

    // [output]
    std::string out_dir = "runs/toy";

    /// Throws ConfigError on inconsistent values.
    void validate() const;
    NoiseSchedule schedule() const;
    /// FNV-1a of the canonical serialization without output.dir, as 8 hex digits.
    std::string hash8() const;
    bool operator==(const ExperimentConfig &other) const;
};

/// Line-based grammar: `[section]` headers, `key = value` pairs and `#`
/// comments. Values are JSON literals (numbers, "strings", true/false,
/// arrays); a bare word is read as a string. Unknown sections or keys are
/// rejected with the line number.
ExperimentConfig parse_config(const std::string &text);
ExperimentConfig load_config(const std::string &path);

/// Canonical form listing every key; parse_config(serialize_config(c)) == c.
std::string serialize_config(const ExperimentConfig &config);

}  // namespace qncd
