#include "rgfs/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "rgfs/errors.hpp"

namespace rgfs {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

int parse_int(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const int v = std::stoi(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("key " + key + ": expected an integer, got '" + value + "'");
    }
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const unsigned long long v = std::stoull(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return static_cast<std::uint64_t>(v);
    } catch (const std::exception&) {
        throw ConfigError("key " + key + ": expected an unsigned integer, got '" + value + "'");
    }
}

double parse_real(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("key " + key + ": expected a number, got '" + value + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "yes" || value == "1") return true;
    if (value == "false" || value == "no" || value == "0") return false;
    throw ConfigError("key " + key + ": expected a boolean, got '" + value + "'");
}

std::vector<std::string> split_list(const std::string& value) {
    std::vector<std::string> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::vector<int> parse_int_list(const std::string& key, const std::string& value) {
    std::vector<int> out;
    for (const std::string& item : split_list(value)) out.push_back(parse_int(key, item));
    if (out.empty()) throw ConfigError("key " + key + ": expected a non-empty list");
    return out;
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;

const std::map<std::string, std::map<std::string, Setter>>& key_table() {
    static const std::map<std::string, std::map<std::string, Setter>> table = {
        {"run",
         {
             {"seed", [](RunConfig& c, const std::string& k, const std::string& v) {
                  c.seed = parse_u64(k, v);
              }},
             {"out", [](RunConfig& c, const std::string&, const std::string& v) { c.out = v; }},
         }},
        {"data",
         {
             {"source", [](RunConfig& c, const std::string& k, const std::string& v) {
                  if (v != "synthetic" && v != "folder")
                      throw ConfigError("key " + k + ": expected 'synthetic' or 'folder'");
                  c.data.source = v;
              }},
             {"path", [](RunConfig& c, const std::string&, const std::string& v) {
                  c.data.path = v;
              }},
             {"height", [](RunConfig& c, const std::string& k, const std::string& v) {
                  c.data.height = parse_int(k, v);
              }},
             {"width", [](RunConfig& c, const std::string& k, const std::string& v) {
                  c.data.width = parse_int(k, v);
              }},
             {"channels", [](RunConfig& c, const std::string& k, const std::string& v) {
                  c.data.channels = parse_int(k, v);
              }},
             {"num_classes", [](RunConfig& c, const std::string& k, const std::string& v) {
                  c.data.num_classes = parse_int(k, v);
              }},
             {"samples_per_class", [](RunConfig& c, const std::string& k, const std::string& v) {
                  c.data.samples_per_class = parse_int(k, v);
              }},
             {"base_classes", [](RunConfig& c, const std::string& k, const std::string& v) {
                  c.data.base_classes = parse_int(k, v);
              }},
             {"base_class_names", [](RunConfig& c, const std::string&, const std::string& v) {
                  c.data.base_class_names = split_list(v);
              }},
         }},
        {"masking",
         {
             {"block_size", [](RunConfig& c, const std::string& k, const std::string& v) {
                  c.masking.block_size = parse_int(k, v);
              }},
             {"mask_ratio", [](RunConfig& c, const std::string& k, const std::string& v) {
                  c.masking.mask_ratio = parse_real(k, v);
              }},
         }},
        {"network",
         {
             {"stage_channels", [](RunConfig& c, const std::string& k, const std::string& v) {
                  c.arch.stage_channels = parse_int_list(k, v);
              }},
             {"bottleneck_channels", [](RunConfig& c, const std::string& k, const std::string& v) {
                  c.arch.bottleneck_channels = parse_int(k, v);
              }},
             {"embedding_dim", [](RunConfig& c, const std::string& k, const std::string& v) {
                  c.arch.embedding_dim = parse_int(k, v);
              }},
             {"dropblock_block_size", [](RunConfig& c, const std::string& k, const std::string& v) {
                  c.arch.dropblock_block_size = parse_int(k, v);
              }},
             {"dropblock_drop_prob", [](RunConfig& c, const std::string& k, const std::string& v) {
                  c.arch.dropblock_drop_prob = parse_real(k, v);
              }},
         }},
        {"losses",
         {
             {"alpha", [](RunConfig& c, const std::string& k, const std::string& v) {
                  c.train.weights.alpha = parse_real(k, v);
              }},
             {"beta", [](RunConfig& c, const std::string& k, const std::string& v) {
                  c.train.weights.beta = parse_real(k, v);
              }},
             {"lambda", [](RunConfig& c, const std::string& k, const std::string& v) {
                  c.train.weights.lambda = parse_real(k, v);
              }},
             {"margin", [](RunConfig& c, const std::string& k, const std::string& v) {
                  c.train.weights.margin = parse_real(k, v);
              }},
             {"recon_reduction", [](RunConfig& c, const std::string& k, const std::string& v) {
                  if (v == "mean")
                      c.train.weights.recon_sum_reduction = false;
                  else if (v == "sum")
                      c.train.weights.recon_sum_reduction = true;
                  else
                      throw ConfigError("key " + k + ": expected 'mean' or 'sum'");
              }},
         }},
        {"episode",
         {
             {"n_way", [](RunConfig& c, const std::string& k, const std::string& v) {
                  c.train.spec.n_way = parse_int(k, v);
              }},
             {"k_shot", [](RunConfig& c, const std::string& k, const std::string& v) {
                  c.train.spec.k_shot = parse_int(k, v);
              }},
             {"q_queries", [](RunConfig& c, const std::string& k, const std::string& v) {
                  c.train.spec.q_queries = parse_int(k, v);
              }},
             {"recon_batch", [](RunConfig& c, const std::string& k, const std::string& v) {
                  c.train.spec.recon_batch = parse_int(k, v);
              }},
             {"n_passes", [](RunConfig& c, const std::string& k, const std::string& v) {
                  c.train.weights.n_passes = parse_int(k, v);
              }},
         }},
        {"train",
         {
             {"episodes", [](RunConfig& c, const std::string& k, const std::string& v) {
                  c.train.episodes = parse_int(k, v);
              }},
             {"learning_rate", [](RunConfig& c, const std::string& k, const std::string& v) {
                  c.train.learning_rate = parse_real(k, v);
              }},
             {"checkpoint_every", [](RunConfig& c, const std::string& k, const std::string& v) {
                  c.train.checkpoint_every = parse_int(k, v);
              }},
             {"freeze_encoder", [](RunConfig& c, const std::string& k, const std::string& v) {
                  c.train.freeze_encoder = parse_bool(k, v);
              }},
             {"baseline_mode", [](RunConfig& c, const std::string& k, const std::string& v) {
                  c.train.baseline_mode = parse_bool(k, v);
              }},
             {"grad_clip_norm", [](RunConfig& c, const std::string& k, const std::string& v) {
                  c.train.grad_clip_norm = parse_real(k, v);
              }},
         }},
        {"eval",
         {
             {"episodes", [](RunConfig& c, const std::string& k, const std::string& v) {
                  c.eval.episodes = parse_int(k, v);
              }},
             {"n_passes", [](RunConfig& c, const std::string& k, const std::string& v) {
                  c.eval.n_passes = parse_int(k, v);
              }},
             {"n_way", [](RunConfig& c, const std::string& k, const std::string& v) {
                  c.eval.n_way = parse_int(k, v);
              }},
             {"q_queries", [](RunConfig& c, const std::string& k, const std::string& v) {
                  c.eval.q_queries = parse_int(k, v);
              }},
             {"k_shots", [](RunConfig& c, const std::string& k, const std::string& v) {
                  c.eval.k_shots = parse_int_list(k, v);
              }},
             {"pools", [](RunConfig& c, const std::string&, const std::string& v) {
                  c.eval.pools.clear();
                  for (const std::string& p : split_list(v))
                      c.eval.pools.push_back(class_pool_from_string(p));
                  if (c.eval.pools.empty())
                      throw ConfigError("key pools: expected a non-empty list");
              }},
         }},
    };
    return table;
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
    RunConfig config;
    const auto& table = key_table();
    const std::map<std::string, Setter>* section = nullptr;
    std::string section_name;
    std::vector<std::string> seen;

    std::istringstream in(text);
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string line = trim(raw);
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("line " + std::to_string(line_no) + ": malformed section header");
            section_name = trim(line.substr(1, line.size() - 2));
            const auto it = table.find(section_name);
            if (it == table.end())
                throw ConfigError("unknown section: [" + section_name + "]");
            section = &it->second;
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (section == nullptr)
            throw ConfigError("key " + key + " appears before any [section]");
        const auto it = section->find(key);
        if (it == section->end())
            throw ConfigError("unknown key in [" + section_name + "]: " + key);
        const std::string qualified = section_name + "." + key;
        if (std::find(seen.begin(), seen.end(), qualified) != seen.end())
            throw ConfigError("duplicate key in [" + section_name + "]: " + key);
        seen.push_back(qualified);
        it->second(config, key, value);
    }
    return config;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_run_config(buffer.str());
}

void validate_run_config(const RunConfig& config) {
    const DataConfig& d = config.data;
    if (d.source == "folder") {
        if (d.path.empty()) throw ConfigError("data.path is required when data.source = folder");
        if (!std::filesystem::is_directory(d.path))
            throw ConfigError("dataset directory not found: " + d.path.string());
    } else {
        if (d.num_classes < 2) throw ConfigError("data.num_classes must be at least 2");
        if (d.samples_per_class < 2)
            throw ConfigError("data.samples_per_class must be at least 2");
    }
    if (d.height < 16 || d.width < 16) throw ConfigError("data: images must be at least 16x16");
    if (d.channels != 1 && d.channels != 3) throw ConfigError("data.channels must be 1 or 3");

    ArchitectureConfig arch = config.arch;
    arch.input_height = d.height;
    arch.input_width = d.width;
    arch.input_channels = d.channels;
    arch.validate();

    if (config.masking.block_size < 1 || d.height % config.masking.block_size != 0 ||
        d.width % config.masking.block_size != 0)
        throw ConfigError("masking.block_size must divide the image height and width");
    if (config.masking.mask_ratio < 0.0 || config.masking.mask_ratio > 1.0)
        throw ConfigError("masking.mask_ratio must lie in [0, 1]");

    config.train.validate();
    if (config.eval.episodes < 1) throw ConfigError("eval.episodes must be at least 1");
    if (config.eval.n_passes < 1) throw ConfigError("eval.n_passes must be at least 1");
    if (config.eval.n_way < 2) throw ConfigError("eval.n_way must be at least 2");
    if (config.eval.q_queries < 1) throw ConfigError("eval.q_queries must be at least 1");
    for (int k : config.eval.k_shots)
        if (k < 1) throw ConfigError("eval.k_shots entries must be at least 1");
}

}  // namespace rgfs
