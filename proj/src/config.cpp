#include "qncd/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "qncd/rng.hpp"

namespace qncd {

namespace {

using nlohmann::json;

struct Field {
    const char *section;
    const char *key;
    std::function<json(const ExperimentConfig &)> get;
    std::function<void(ExperimentConfig &, const json &)> set;
};

std::size_t as_count(const json &v)
{
    if (!v.is_number_unsigned())
        throw ConfigError("expected a non-negative integer, got " + v.dump());
    return v.get<std::size_t>();
}

int as_int(const json &v)
{
    if (!v.is_number_integer())
        throw ConfigError("expected an integer, got " + v.dump());
    return v.get<int>();
}

double as_real(const json &v)
{
    if (!v.is_number())
        throw ConfigError("expected a number, got " + v.dump());
    return v.get<double>();
}

bool as_bool(const json &v)
{
    if (!v.is_boolean())
        throw ConfigError("expected true or false, got " + v.dump());
    return v.get<bool>();
}

std::string as_string(const json &v)
{
    if (!v.is_string())
        throw ConfigError("expected a string, got " + v.dump());
    return v.get<std::string>();
}

std::vector<double> as_reals(const json &v)
{
    if (!v.is_array())
        throw ConfigError("expected an array, got " + v.dump());
    std::vector<double> out;
    for (const auto &e : v)
        out.push_back(as_real(e));
    return out;
}

template <class T>
std::vector<T> as_counts(const json &v)
{
    if (!v.is_array())
        throw ConfigError("expected an array, got " + v.dump());
    std::vector<T> out;
    for (const auto &e : v)
        out.push_back(static_cast<T>(as_count(e)));
    return out;
}

template <class F>
auto wrapped(F &&parse, const std::string &text)
{
    try {
        return parse(text);
    } catch (const std::invalid_argument &e) {
        throw ConfigError(e.what());
    }
}

const std::vector<Field> &fields()
{
    using C = ExperimentConfig;
    static const std::vector<Field> table = {
        {"data", "weights", [](const C &c) { return json(c.data.weights); },
         [](C &c, const json &v) { c.data.weights = as_reals(v); }},
        {"data", "means",
         [](const C &c) {
             json rows = json::array();
             for (std::size_t r = 0; r < c.data.means.rows(); ++r) {
                 auto row = c.data.means.row(r);
                 rows.push_back(std::vector<double>(row.begin(), row.end()));
             }
             return rows;
         },
         [](C &c, const json &v) {
             if (!v.is_array() || v.empty())
                 throw ConfigError("means: expected a nonempty array of arrays");
             std::vector<std::vector<double>> rows;
             for (const auto &r : v)
                 rows.push_back(as_reals(r));
             for (const auto &r : rows)
                 if (r.size() != rows.front().size() || r.empty())
                     throw ConfigError("means: rows must share one nonzero length");
             Tensor m({rows.size(), rows.front().size()});
             for (std::size_t i = 0; i < rows.size(); ++i)
                 std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
             c.data.means = std::move(m);
         }},
        {"data", "stds", [](const C &c) { return json(c.data.stds); },
         [](C &c, const json &v) { c.data.stds = as_reals(v); }},

        {"schedule", "steps", [](const C &c) { return json(c.steps); },
         [](C &c, const json &v) { c.steps = as_int(v); }},
        {"schedule", "beta_start", [](const C &c) { return json(c.beta_start); },
         [](C &c, const json &v) { c.beta_start = as_real(v); }},
        {"schedule", "beta_end", [](const C &c) { return json(c.beta_end); },
         [](C &c, const json &v) { c.beta_end = as_real(v); }},
        {"schedule", "sigma", [](const C &c) { return json(to_string(c.sigma)); },
         [](C &c, const json &v) { c.sigma = wrapped(parse_sigma_kind, as_string(v)); }},

        {"model", "hidden", [](const C &c) { return json(c.model.hidden); },
         [](C &c, const json &v) { c.model.hidden = as_count(v); }},
        {"model", "emb_dim", [](const C &c) { return json(c.model.emb_dim); },
         [](C &c, const json &v) { c.model.emb_dim = as_count(v); }},
        {"model", "blocks", [](const C &c) { return json(c.model.blocks); },
         [](C &c, const json &v) { c.model.blocks = as_count(v); }},
        {"model", "groups", [](const C &c) { return json(c.model.groups); },
         [](C &c, const json &v) { c.model.groups = as_count(v); }},
        {"model", "fusion", [](const C &c) { return json(to_string(c.model.style)); },
         [](C &c, const json &v) { c.model.style = wrapped(parse_fusion_style, as_string(v)); }},
        {"model", "weights_path", [](const C &c) { return json(c.weights_path); },
         [](C &c, const json &v) { c.weights_path = as_string(v); }},
        {"model", "inject_factor", [](const C &c) { return json(c.inject_factor); },
         [](C &c, const json &v) { c.inject_factor = as_real(v); }},
        {"model", "inject_channels", [](const C &c) { return json(c.inject_channels); },
         [](C &c, const json &v) { c.inject_channels = as_counts<std::size_t>(v); }},

        {"train", "iterations", [](const C &c) { return json(c.train.iterations); },
         [](C &c, const json &v) { c.train.iterations = as_count(v); }},
        {"train", "batch", [](const C &c) { return json(c.train.batch_size); },
         [](C &c, const json &v) { c.train.batch_size = as_count(v); }},
        {"train", "learning_rate", [](const C &c) { return json(c.train.learning_rate); },
         [](C &c, const json &v) { c.train.learning_rate = as_real(v); }},
        {"train", "momentum", [](const C &c) { return json(c.train.momentum); },
         [](C &c, const json &v) { c.train.momentum = as_real(v); }},
        {"train", "final_lr_fraction", [](const C &c) { return json(c.train.final_lr_fraction); },
         [](C &c, const json &v) { c.train.final_lr_fraction = as_real(v); }},
        {"train", "seed", [](const C &c) { return json(c.train.seed); },
         [](C &c, const json &v) { c.train.seed = as_count(v); }},

        {"quant", "bits", [](const C &c) { return json(c.bits.label()); },
         [](C &c, const json &v) { c.bits = wrapped(BitConfig::parse, as_string(v)); }},
        {"quant", "calibration_samples", [](const C &c) { return json(c.calibration_samples); },
         [](C &c, const json &v) { c.calibration_samples = as_count(v); }},
        {"quant", "calibration_seed", [](const C &c) { return json(c.calibration_seed); },
         [](C &c, const json &v) { c.calibration_seed = as_count(v); }},
        {"quant", "stratified", [](const C &c) { return json(c.stratified); },
         [](C &c, const json &v) { c.stratified = as_bool(v); }},
        {"quant", "grid", [](const C &c) { return json(c.grid_size); },
         [](C &c, const json &v) { c.grid_size = as_int(v); }},
        {"quant", "quantize_emb_out", [](const C &c) { return json(c.quantize_emb_out); },
         [](C &c, const json &v) { c.quantize_emb_out = as_bool(v); }},

        {"correction", "intra", [](const C &c) { return json(c.intra); },
         [](C &c, const json &v) { c.intra = as_bool(v); }},
        {"correction", "inter_stages", [](const C &c) { return json(c.inter_stages); },
         [](C &c, const json &v) { c.inter_stages = as_count(v); }},
        {"correction", "mode", [](const C &c) { return json(to_string(c.mode)); },
         [](C &c, const json &v) { c.mode = wrapped(parse_correction_mode, as_string(v)); }},

        {"sampling", "sampler", [](const C &c) { return json(c.sampler.to_string()); },
         [](C &c, const json &v) { c.sampler = wrapped(SamplerSpec::parse, as_string(v)); }},
        {"sampling", "batch", [](const C &c) { return json(c.batch); },
         [](C &c, const json &v) { c.batch = as_count(v); }},
        {"sampling", "n_samples", [](const C &c) { return json(c.n_samples); },
         [](C &c, const json &v) { c.n_samples = as_count(v); }},
        {"sampling", "seeds", [](const C &c) { return json(c.seeds); },
         [](C &c, const json &v) { c.seeds = as_counts<std::uint64_t>(v); }},
        {"sampling", "projections", [](const C &c) { return json(c.projections); },
         [](C &c, const json &v) { c.projections = as_count(v); }},
        {"sampling", "probe_t", [](const C &c) { return json(c.probe_t); },
         [](C &c, const json &v) { c.probe_t = as_int(v); }},

        {"output", "dir", [](const C &c) { return json(c.out_dir); },
         [](C &c, const json &v) { c.out_dir = as_string(v); }},
    };
    return table;
}

std::string trim(const std::string &s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string strip_comment(const std::string &line)
{
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"' && (i == 0 || line[i - 1] != '\\'))
            quoted = !quoted;
        else if (line[i] == '#' && !quoted)
            return line.substr(0, i);
    }
    return line;
}

json parse_value(const std::string &text)
{
    json v = json::parse(text, nullptr, false);
    if (!v.is_discarded())
        return v;
    for (char ch : text)
        if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '.' || ch == ':' || ch == '/' ||
              ch == '-'))
            throw ConfigError("cannot parse value '" + text + "'");
    return json(text);
}

}  // namespace

void ExperimentConfig::validate() const
{
    try {
        data.validate();
    } catch (const std::invalid_argument &e) {
        throw ConfigError(std::string("data: ") + e.what());
    }
    if (steps < 1)
        throw ConfigError("schedule.steps must be at least 1");
    if (!(beta_start > 0.0) || !(beta_end < 1.0) || beta_start > beta_end)
        throw ConfigError("schedule: need 0 < beta_start <= beta_end < 1");
    if (model.blocks < 2 || model.hidden == 0 || model.emb_dim == 0 || model.emb_dim % 2 != 0)
        throw ConfigError("model: need blocks >= 2, hidden > 0 and an even emb_dim");
    if (model.groups == 0 || model.hidden % model.groups != 0)
        throw ConfigError("model.groups must divide model.hidden");
    if (!(inject_factor > 0.0))
        throw ConfigError("model.inject_factor must be positive");
    for (auto ch : inject_channels)
        if (ch >= model.hidden)
            throw ConfigError("model.inject_channels: channel " + std::to_string(ch) + " outside hidden width");
    if (train.batch_size == 0 || !(train.learning_rate > 0.0))
        throw ConfigError("train: need batch > 0 and learning_rate > 0");
    if (calibration_samples == 0)
        throw ConfigError("quant.calibration_samples must be at least 1");
    if (grid_size < 2)
        throw ConfigError("quant.grid must be at least 2");
    if (sampler.kind == SamplerKind::Ddim && (sampler.ddim_steps < 1 || sampler.ddim_steps > steps))
        throw ConfigError("sampling.sampler: ddim step count outside 1..steps");
    const std::size_t n_steps = sampler.kind == SamplerKind::Ddim ? static_cast<std::size_t>(sampler.ddim_steps)
                                                                   : static_cast<std::size_t>(steps);
    if (inter_stages > n_steps)
        throw ConfigError("correction.inter_stages exceeds the number of sampling steps");
    if (batch < 2 || n_samples < 2)
        throw ConfigError("sampling: batch and n_samples must be at least 2");
    if (seeds.empty())
        throw ConfigError("sampling.seeds must not be empty");
    if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
        throw ConfigError("sampling.seeds contains duplicates");
    if (projections == 0)
        throw ConfigError("sampling.projections must be at least 1");
    if (probe_t < 1 || probe_t > steps)
        throw ConfigError("sampling.probe_t outside 1..steps");
    if (out_dir.empty())
        throw ConfigError("output.dir must not be empty");
}

NoiseSchedule ExperimentConfig::schedule() const
{
    return linear_schedule(steps, beta_start, beta_end, sigma);
}

std::string ExperimentConfig::hash8() const
{
    // Where results land does not change them.
    ExperimentConfig keyed = *this;
    keyed.out_dir = "-";
    char buf[9];
    std::snprintf(buf, sizeof buf, "%08x", static_cast<unsigned>(fnv1a(serialize_config(keyed)) >> 32));
    return buf;
}

bool ExperimentConfig::operator==(const ExperimentConfig &other) const
{
    return serialize_config(*this) == serialize_config(other);
}

ExperimentConfig parse_config(const std::string &text)
{
    const auto &table = fields();
    ExperimentConfig config;
    std::set<std::string> sections, seen;
    for (const auto &f : table)
        sections.insert(f.section);

    std::istringstream is(text);
    std::string raw, section;
    int line_no = 0;
    while (std::getline(is, raw)) {
        ++line_no;
        const std::string line = trim(strip_comment(raw));
        if (line.empty())
            continue;
        auto where = [&] { return "line " + std::to_string(line_no) + ": "; };
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError(where() + "unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            if (!sections.count(section))
                throw ConfigError(where() + "unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(where() + "expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (section.empty())
            throw ConfigError(where() + "key '" + key + "' outside a section");
        const std::string full = section + "." + key;
        auto it = std::find_if(table.begin(), table.end(),
                               [&](const Field &f) { return f.section == section && f.key == key; });
        if (it == table.end())
            throw ConfigError(where() + "unknown key '" + full + "'");
        if (!seen.insert(full).second)
            throw ConfigError(where() + "duplicate key '" + full + "'");
        try {
            it->set(config, parse_value(value));
        } catch (const ConfigError &e) {
            throw ConfigError(where() + full + ": " + e.what());
        }
    }
    config.model.data_dim = config.data.means.cols();
    config.validate();
    return config;
}

ExperimentConfig load_config(const std::string &path)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot read config '" + path + "'");
    std::ostringstream os;
    os << in.rdbuf();
    try {
        return parse_config(os.str());
    } catch (const ConfigError &e) {
        throw ConfigError(path + ": " + e.what());
    }
}

std::string serialize_config(const ExperimentConfig &config)
{
    std::ostringstream os;
    std::string section;
    for (const auto &f : fields()) {
        if (section != f.section) {
            if (!section.empty())
                os << '\n';
            section = f.section;
            os << '[' << section << "]\n";
        }
        os << f.key << " = " << f.get(config).dump() << '\n';
    }
    return os.str();
}

}  // namespace qncd
