#include "s3pet/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "s3pet/checkpoint.hpp"

namespace s3pet {

const std::vector<Config::KeySpec>& Config::known_keys() {
  using T = Config::Type;
  static const std::vector<KeySpec> keys = {
      {"data.unpaired_spet", T::integer, "12", "unpaired SPET volume count"},
      {"data.lpet_pretrain", T::integer, "3", "LPET volumes used for Stage-I pretraining"},
      {"data.paired_train", T::integer, "3", "paired volumes for Stage-II training"},
      {"data.paired_eval", T::integer, "2", "held-out paired volumes"},
      {"data.slice_size", T::integer, "64", "square slice side in pixels"},
      {"data.volume_depth", T::integer, "8", "slices per volume"},
      {"data.n_ellipses_min", T::integer, "2", "min phantom ellipses per slice"},
      {"data.n_ellipses_max", T::integer, "5", "max phantom ellipses per slice"},
      {"data.intensity_levels", T::number_list, "0.3,0.5,0.8", "phantom intensity levels"},
      {"data.background", T::number, "0.05", "phantom background level"},
      {"data.drf", T::number, "100", "dose reduction factor"},
      {"data.counts_per_unit", T::number, "10000", "expected counts at intensity 1"},
      {"data.blur_sigma", T::number, "1.0", "LPET Gaussian blur sigma (pixels)"},
      {"model.d", T::integer, "64", "token embedding width"},
      {"model.T", T::integer, "4", "transformer blocks per encoder"},
      {"model.h", T::integer, "4", "attention heads"},
      {"model.P", T::integer, "8", "patch size"},
      {"model.keep_ratio_l", T::number, "0.15", "visible fraction for LPET masking"},
      {"model.keep_ratio_s", T::number, "0.25", "visible fraction for SPET masking"},
      {"train.batch_size", T::integer, "32", "slices per optimizer step"},
      {"train.lr", T::number, "2e-4", "Adam learning rate"},
      {"train.stage1_epochs", T::integer, "300", "Stage-I epochs"},
      {"train.stage2_epochs", T::integer, "100", "Stage-II epochs"},
      {"train.stage1_steps", T::integer, "0", "Stage-I step cap (0 = use epochs)"},
      {"train.stage2_steps", T::integer, "0", "Stage-II step cap (0 = use epochs)"},
      {"train.seed", T::integer, "0", "run seed (--seed overrides)"},
      {"train.dose", T::text, "both", "pretrain dose: L, S or both"},
      {"loss.gamma", T::number, "1", "SPET branch weight inside the rec loss"},
      {"loss.lambda1", T::number, "1", "transfer loss weight"},
      {"loss.lambda2", T::number, "5", "reconstruction loss weight"},
      {"eval.checkpoint", T::text, "", "stage-II checkpoint for infer/eval"},
      {"eval.ref", T::text, "", "reference SPET volume for eval"},
      {"eval.baseline", T::text, "", "LPET volume for the eval baseline row"},
  };
  return keys;
}

const Config::KeySpec& Config::spec(const std::string& key) const {
  for (const auto& k : known_keys())
    if (k.name == key) return k;
  throw ConfigError("unknown config key '" + key + "'");
}

Config Config::defaults() {
  Config cfg;
  for (const auto& k : known_keys()) cfg.values_[k.name] = k.default_value;
  return cfg;
}

namespace {

std::string trim(const std::string& s) {
  const std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

bool parse_number(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size();
}

bool parse_integer(const std::string& s, long long& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtoll(s.c_str(), &end, 10);
  return end == s.c_str() + s.size();
}

}  // namespace

void Config::set(const std::string& key, const std::string& raw,
                 const std::string& origin, int line) {
  const auto where = origin + ":" + std::to_string(line);
  const KeySpec* ks = nullptr;
  for (const auto& k : known_keys())
    if (k.name == key) ks = &k;
  if (!ks) throw ConfigError(where + ": unknown key '" + key + "'");
  switch (ks->type) {
    case Type::integer: {
      long long v;
      if (!parse_integer(raw, v)) {
        throw ConfigError(where + ": key '" + key + "' expects an integer, got '" +
                          raw + "'");
      }
      break;
    }
    case Type::number: {
      double v;
      if (!parse_number(raw, v)) {
        throw ConfigError(where + ": key '" + key + "' expects a number, got '" + raw +
                          "'");
      }
      break;
    }
    case Type::number_list: {
      std::stringstream ss(raw);
      std::string item;
      bool any = false;
      while (std::getline(ss, item, ',')) {
        double v;
        if (!parse_number(trim(item), v)) {
          throw ConfigError(where + ": key '" + key + "' expects numbers, got '" + raw +
                            "'");
        }
        any = true;
      }
      if (!any) {
        throw ConfigError(where + ": key '" + key + "' expects a non-empty list");
      }
      break;
    }
    case Type::text:
      break;
  }
  values_[key] = raw;
}

Config Config::parse_text(const std::string& text, const std::string& origin) {
  Config cfg = defaults();
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const std::size_t eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": expected 'key = value', got '" + t + "'");
    }
    cfg.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)), origin, lineno);
  }
  return cfg;
}

Config Config::parse_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path);
  std::string all((std::istreambuf_iterator<char>(is)),
                  std::istreambuf_iterator<char>());
  return parse_text(all, path);
}

long long Config::get_int(const std::string& key) const {
  if (spec(key).type != Type::integer) throw ConfigError("key '" + key + "' is not an integer");
  long long v = 0;
  parse_integer(values_.at(key), v);
  return v;
}

double Config::get_num(const std::string& key) const {
  const Type t = spec(key).type;
  if (t != Type::number && t != Type::integer) {
    throw ConfigError("key '" + key + "' is not numeric");
  }
  double v = 0;
  parse_number(values_.at(key), v);
  return v;
}

const std::string& Config::get_str(const std::string& key) const {
  spec(key);
  return values_.at(key);
}

std::vector<double> Config::get_list(const std::string& key) const {
  if (spec(key).type != Type::number_list) throw ConfigError("key '" + key + "' is not a list");
  std::vector<double> out;
  std::stringstream ss(values_.at(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    double v = 0;
    parse_number(trim(item), v);
    out.push_back(v);
  }
  return out;
}

std::string Config::canonical() const {
  std::string s;
  for (const auto& [k, v] : values_) {
    s += k;
    s += " = ";
    s += v;
    s += '\n';
  }
  return s;
}

std::string Config::hash() const { return hash_hex(canonical()); }

}  // namespace s3pet
