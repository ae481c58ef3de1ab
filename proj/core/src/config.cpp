#include "bpcf/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace bpcf {

namespace {

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("config: key '" + key + "' wants a boolean, got '" + v + "'");
}

long parse_int(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    const long out = std::stol(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return out;
  } catch (...) {
    throw std::invalid_argument("config: key '" + key + "' wants an integer, got '" + v + "'");
  }
}

double parse_double(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    const double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return out;
  } catch (...) {
    throw std::invalid_argument("config: key '" + key + "' wants a number, got '" + v + "'");
  }
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

const std::vector<std::string>& RunConfig::profile_names() {
  static const std::vector<std::string> names = {"paper_default", "paper_sim", "smoke"};
  return names;
}

RunConfig RunConfig::from_profile(const std::string& name) {
  RunConfig c;
  c.profile = name;
  if (name == "paper_default") {
    // Defaults already match: 200/50 trees per model, 10000/5000 iterations.
  } else if (name == "paper_sim") {
    c.sampler.trees_prognostic_m = 150;
    c.sampler.trees_prognostic_y = 150;
    c.methods = {"bpcf", "bart_pce"};
  } else if (name == "smoke") {
    c.sampler.trees_prognostic_m = 25;
    c.sampler.trees_prognostic_y = 25;
    c.sampler.trees_modifier_m = 10;
    c.sampler.trees_modifier_y = 10;
    c.sampler.bart_pce_trees = 25;
    c.sampler.iterations = 60;
    c.sampler.burn_in = 30;
    c.sim_n = 120;
  } else {
    throw std::invalid_argument("config: unknown profile '" + name + "'");
  }
  return c;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto& s = sampler;
  if (key == "seed") {
    seed = static_cast<std::uint64_t>(parse_int(value, key));
  } else if (key == "replications") {
    replications = static_cast<int>(parse_int(value, key));
  } else if (key == "n") {
    sim_n = static_cast<int>(parse_int(value, key));
  } else if (key == "clip") {
    clip = parse_double(value, key);
  } else if (key == "methods") {
    methods = split_csv(value);
    if (methods.empty()) throw std::invalid_argument("config: methods list is empty");
  } else if (key == "iterations") {
    s.iterations = static_cast<int>(parse_int(value, key));
  } else if (key == "burn_in") {
    s.burn_in = static_cast<int>(parse_int(value, key));
  } else if (key == "thin") {
    s.thin = static_cast<int>(parse_int(value, key));
  } else if (key == "trees_prognostic") {
    s.trees_prognostic_m = s.trees_prognostic_y = static_cast<int>(parse_int(value, key));
  } else if (key == "trees_modifier") {
    s.trees_modifier_m = s.trees_modifier_y = static_cast<int>(parse_int(value, key));
  } else if (key == "trees_prognostic_m") {
    s.trees_prognostic_m = static_cast<int>(parse_int(value, key));
  } else if (key == "trees_prognostic_y") {
    s.trees_prognostic_y = static_cast<int>(parse_int(value, key));
  } else if (key == "trees_modifier_m") {
    s.trees_modifier_m = static_cast<int>(parse_int(value, key));
  } else if (key == "trees_modifier_y") {
    s.trees_modifier_y = static_cast<int>(parse_int(value, key));
  } else if (key == "bart_pce_trees") {
    s.bart_pce_trees = static_cast<int>(parse_int(value, key));
  } else if (key == "alpha_prognostic") {
    s.prognostic_prior.alpha = parse_double(value, key);
  } else if (key == "beta_prognostic") {
    s.prognostic_prior.beta = parse_double(value, key);
  } else if (key == "alpha_modifier") {
    s.modifier_prior.alpha = parse_double(value, key);
  } else if (key == "beta_modifier") {
    s.modifier_prior.beta = parse_double(value, key);
  } else if (key == "min_leaf_n") {
    const int v = static_cast<int>(parse_int(value, key));
    s.prognostic_prior.min_leaf_n = v;
    s.modifier_prior.min_leaf_n = v;
  } else if (key == "modifier_mode") {
    if (value == "full") {
      s.modifier_mode = ModifierMode::full;
    } else if (value == "m_only") {
      s.modifier_mode = ModifierMode::m_only;
    } else {
      throw std::invalid_argument("config: modifier_mode must be full or m_only");
    }
  } else if (key == "impute_order") {
    if (value == "after_m_fit") {
      s.impute_order = ImputeOrder::after_m_fit;
    } else if (value == "before_m_modifier") {
      s.impute_order = ImputeOrder::before_m_modifier;
    } else {
      throw std::invalid_argument("config: impute_order must be after_m_fit or before_m_modifier");
    }
  } else if (key == "noisy_impute") {
    s.noisy_impute = parse_bool(value, key);
  } else if (key == "nu") {
    s.nu = parse_double(value, key);
  } else if (key == "sigma_quantile") {
    s.sigma_quantile = parse_double(value, key);
  } else if (key == "save_modifier_snapshots") {
    s.save_modifier_snapshots = parse_bool(value, key);
  } else if (key == "max_snapshots") {
    s.max_snapshots = static_cast<int>(parse_int(value, key));
  } else if (key == "checkpoint_every") {
    checkpoint_every = static_cast<int>(parse_int(value, key));
  } else {
    throw std::invalid_argument("config: unknown key '" + key + "'");
  }
}

RunConfig RunConfig::load_file(const std::string& path, const std::string& profile_override) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config: cannot open " + path);
  std::vector<std::pair<std::string, std::string>> entries;
  std::string file_profile;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("config: " + path + ":" + std::to_string(line_no) +
                               ": expected key=value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "profile") {
      if (!entries.empty()) {
        throw std::runtime_error("config: 'profile' must precede other keys");
      }
      file_profile = value;
    } else {
      entries.emplace_back(key, value);
    }
  }
  std::string profile = !profile_override.empty() ? profile_override
                        : !file_profile.empty()   ? file_profile
                                                  : "paper_default";
  RunConfig c = from_profile(profile);
  for (const auto& [key, value] : entries) c.set(key, value);
  return c;
}

std::string RunConfig::canonical() const {
  std::ostringstream os;
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  const auto& s = sampler;
  os << "alpha_modifier=" << num(s.modifier_prior.alpha) << "\n";
  os << "alpha_prognostic=" << num(s.prognostic_prior.alpha) << "\n";
  os << "bart_pce_trees=" << s.bart_pce_trees << "\n";
  os << "beta_modifier=" << num(s.modifier_prior.beta) << "\n";
  os << "beta_prognostic=" << num(s.prognostic_prior.beta) << "\n";
  os << "burn_in=" << s.burn_in << "\n";
  os << "checkpoint_every=" << checkpoint_every << "\n";
  os << "clip=" << num(clip) << "\n";
  os << "impute_order="
     << (s.impute_order == ImputeOrder::after_m_fit ? "after_m_fit" : "before_m_modifier")
     << "\n";
  os << "iterations=" << s.iterations << "\n";
  os << "max_snapshots=" << s.max_snapshots << "\n";
  std::string m;
  for (const auto& name : methods) {
    if (!m.empty()) m += ",";
    m += name;
  }
  os << "methods=" << m << "\n";
  os << "min_leaf_n=" << s.prognostic_prior.min_leaf_n << "\n";
  os << "modifier_mode=" << (s.modifier_mode == ModifierMode::full ? "full" : "m_only") << "\n";
  os << "n=" << sim_n << "\n";
  os << "noisy_impute=" << (s.noisy_impute ? "true" : "false") << "\n";
  os << "nu=" << num(s.nu) << "\n";
  os << "profile=" << profile << "\n";
  os << "replications=" << replications << "\n";
  os << "save_modifier_snapshots=" << (s.save_modifier_snapshots ? "true" : "false") << "\n";
  os << "seed=" << seed << "\n";
  os << "sigma_quantile=" << num(s.sigma_quantile) << "\n";
  os << "thin=" << s.thin << "\n";
  os << "trees_modifier_m=" << s.trees_modifier_m << "\n";
  os << "trees_modifier_y=" << s.trees_modifier_y << "\n";
  os << "trees_prognostic_m=" << s.trees_prognostic_m << "\n";
  os << "trees_prognostic_y=" << s.trees_prognostic_y << "\n";
  return os.str();
}

std::uint64_t RunConfig::hash() const {
  // FNV-1a over the canonical rendering.
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : canonical()) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

void RunConfig::validate() const {
  sampler.validate();
  if (replications < 1) throw std::invalid_argument("config: replications must be >= 1");
  if (sim_n < 2) throw std::invalid_argument("config: n must be >= 2");
  if (!(clip > 0.0 && clip < 0.5)) throw std::invalid_argument("config: clip must lie in (0, 0.5)");
  if (checkpoint_every < 0) throw std::invalid_argument("config: checkpoint_every must be >= 0");
  for (const auto& m : methods) {
    if (m != "bpcf" && m != "bpcf_m_only" && m != "bart_pce") {
      throw std::invalid_argument("config: unknown method '" + m + "'");
    }
  }
}

}  // namespace bpcf
