#include "ekg/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "ekg/error.hpp"

namespace ekg {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

i64 parse_int(const std::string& key, const std::string& v) {
  i64 out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError("config: key '" + key + "' expects an integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: key '" + key + "' expects true/false, got '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty())
      throw ConfigError("config: key '" + key + "' has an empty list element");
    out.push_back(static_cast<int>(parse_int(key, item)));
  }
  if (out.empty()) throw ConfigError("config: key '" + key + "' expects a list");
  return out;
}

}  // namespace

SplitRatios parse_ratios(const std::string& text) {
  SplitRatios r;
  int vals[3];
  std::stringstream ss(text);
  std::string item;
  int n = 0;
  while (std::getline(ss, item, ':')) {
    if (n >= 3) throw ConfigError("ratios: expected A:B:C, got '" + text + "'");
    vals[n++] = static_cast<int>(parse_int("ratios", trim(item)));
  }
  if (n != 3) throw ConfigError("ratios: expected A:B:C, got '" + text + "'");
  r.train = vals[0];
  r.val = vals[1];
  r.test = vals[2];
  if (r.train < 0 || r.val < 0 || r.test < 0 || r.parts() < 1)
    throw ConfigError("ratios: parts must be non-negative with a positive sum");
  return r;
}

void RunConfig::validate() const {
  if (precision != "f32" && precision != "f64")
    throw ConfigError("config: precision must be f32 or f64, got '" + precision + "'");
  if (block_size < 1 || block_size % 2 == 0)
    throw ConfigError("config: block_size must be odd and positive");
  if (use_synthetic && !cube_path.empty())
    throw ConfigError("config: choose either a cube path or synthetic data, not both");
  train.validate();
  arch.temperature.validate();
  if (ratios.parts() < 1) throw ConfigError("config: split ratios sum to zero");
}

std::map<std::string, std::string> RunConfig::echo() const {
  std::map<std::string, std::string> m;
  auto num = [](double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  };
  m["run.seed"] = std::to_string(seed);
  m["run.out_dir"] = out_dir;
  m["run.precision"] = precision;
  {
    std::string s;
    for (std::size_t i = 0; i < arch.stages.size(); ++i)
      s += (i ? "," : "") + std::to_string(arch.stages[i]);
    m["arch.stages"] = s;
  }
  m["arch.k0"] = std::to_string(arch.k0);
  m["arch.groups"] = std::to_string(arch.groups);
  m["arch.experts"] = std::to_string(arch.experts);
  m["arch.reduction"] = std::to_string(arch.reduction);
  m["arch.gate_init"] = num(arch.gate_init);
  m["arch.mapping_blocks"] = std::to_string(arch.mapping_blocks);
  m["arch.expert_bias"] = arch.expert_bias ? "true" : "false";
  m["arch.num_classes"] = std::to_string(arch.num_classes);
  m["arch.in_depth"] = std::to_string(arch.in_depth);
  m["arch.in_height"] = std::to_string(arch.in_height);
  m["arch.in_width"] = std::to_string(arch.in_width);
  m["train.epochs"] = std::to_string(train.epochs);
  m["train.lr"] = num(train.lr);
  m["train.batch_size"] = std::to_string(train.batch_size);
  m["train.beta1"] = num(train.beta1);
  m["train.beta2"] = num(train.beta2);
  m["train.eps"] = num(train.eps);
  m["train.patience"] = std::to_string(train.patience);
  m["train.tau_start"] = num(arch.temperature.tau_start);
  m["train.tau_end"] = num(arch.temperature.tau_end);
  m["train.anneal_epochs"] = std::to_string(arch.temperature.anneal_epochs);
  m["data.cube"] = cube_path;
  m["data.synthetic"] = use_synthetic ? "true" : "false";
  m["data.block_size"] = std::to_string(block_size);
  m["data.ratios"] = std::to_string(ratios.train) + ":" + std::to_string(ratios.val) +
                     ":" + std::to_string(ratios.test);
  m["data.normalize"] = normalize_data ? "true" : "false";
  m["synth.classes"] = std::to_string(synth.classes);
  m["synth.height"] = std::to_string(synth.height);
  m["synth.width"] = std::to_string(synth.width);
  m["synth.bands"] = std::to_string(synth.bands);
  m["synth.noise_sigma"] = num(synth.noise_sigma);
  return m;
}

void apply_override(RunConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "run.seed") {
    cfg.seed = static_cast<std::uint64_t>(parse_int(key, value));
  } else if (key == "run.out_dir") {
    cfg.out_dir = value;
  } else if (key == "run.precision") {
    cfg.precision = value;
  } else if (key == "arch.stages") {
    cfg.arch.stages = parse_int_list(key, value);
  } else if (key == "arch.k0") {
    cfg.arch.k0 = parse_int(key, value);
  } else if (key == "arch.groups") {
    cfg.arch.groups = parse_int(key, value);
  } else if (key == "arch.experts") {
    cfg.arch.experts = parse_int(key, value);
  } else if (key == "arch.reduction") {
    cfg.arch.reduction = parse_int(key, value);
  } else if (key == "arch.gate_init") {
    cfg.arch.gate_init = parse_double(key, value);
  } else if (key == "arch.mapping_blocks") {
    cfg.arch.mapping_blocks = static_cast<int>(parse_int(key, value));
  } else if (key == "arch.expert_bias") {
    cfg.arch.expert_bias = parse_bool(key, value);
  } else if (key == "train.epochs") {
    cfg.train.epochs = static_cast<int>(parse_int(key, value));
  } else if (key == "train.lr") {
    cfg.train.lr = parse_double(key, value);
  } else if (key == "train.batch_size") {
    cfg.train.batch_size = static_cast<int>(parse_int(key, value));
  } else if (key == "train.beta1") {
    cfg.train.beta1 = parse_double(key, value);
  } else if (key == "train.beta2") {
    cfg.train.beta2 = parse_double(key, value);
  } else if (key == "train.eps") {
    cfg.train.eps = parse_double(key, value);
  } else if (key == "train.patience") {
    cfg.train.patience = static_cast<int>(parse_int(key, value));
  } else if (key == "train.tau_start") {
    cfg.arch.temperature.tau_start = parse_double(key, value);
  } else if (key == "train.tau_end") {
    cfg.arch.temperature.tau_end = parse_double(key, value);
  } else if (key == "train.anneal_epochs") {
    cfg.arch.temperature.anneal_epochs = static_cast<int>(parse_int(key, value));
  } else if (key == "data.cube") {
    cfg.cube_path = value;
  } else if (key == "data.synthetic") {
    cfg.use_synthetic = parse_bool(key, value);
  } else if (key == "data.block_size") {
    cfg.block_size = parse_int(key, value);
  } else if (key == "data.ratios") {
    cfg.ratios = parse_ratios(value);
  } else if (key == "data.normalize") {
    cfg.normalize_data = parse_bool(key, value);
  } else if (key == "synth.classes") {
    cfg.synth.classes = static_cast<int>(parse_int(key, value));
  } else if (key == "synth.height") {
    cfg.synth.height = parse_int(key, value);
  } else if (key == "synth.width") {
    cfg.synth.width = parse_int(key, value);
  } else if (key == "synth.bands") {
    cfg.synth.bands = parse_int(key, value);
  } else if (key == "synth.noise_sigma") {
    cfg.synth.noise_sigma = parse_double(key, value);
  } else {
    throw ConfigError("config: unknown key '" + key + "'");
  }
}

RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream is(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config line " + std::to_string(lineno) +
                          ": malformed section header '" + line + "'");
      section = line.substr(1, line.size() - 2);
      if (section != "run" && section != "arch" && section != "train" &&
          section != "data" && section != "synth")
        throw ConfigError("config: unknown section '[" + section + "]'");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": expected key=value, got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (section.empty())
      throw ConfigError("config: key '" + key + "' appears before any [section]");
    apply_override(cfg, section + "." + key, value);
  }
  return cfg;
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str());
}

}  // namespace ekg
