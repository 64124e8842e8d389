#include "dgssm/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace dgssm {
namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

// The model's own keys, derived from its serializer so the two stay in sync.
const std::set<std::string>& model_keys() {
  static const std::set<std::string> keys = [] {
    std::set<std::string> k;
    for (const auto& [key, value] : ModelConfig().to_lines()) k.insert(key);
    return k;
  }();
  return keys;
}

}  // namespace

ConfigLines parse_kv_text(const std::string& text) {
  ConfigLines lines;
  std::istringstream in(text);
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw Error("config line " + std::to_string(lineno) + ": expected `key = value`, got '" +
                  trim(line) + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw Error("config line " + std::to_string(lineno) + ": empty key or value");
    lines.emplace_back(key, value);
  }
  return lines;
}

void RunConfig::validate() const {
  model.validate();
  if (epochs < 0) throw Error("epochs must be non-negative");
  if (batch_size < 1) throw Error("batch_size must be at least 1");
  if (learning_rate <= 0 || denoiser_learning_rate <= 0)
    throw Error("learning rates must be positive");
  if (momentum < 0 || momentum >= 1) throw Error("momentum must lie in [0, 1)");
  if (denoiser_epochs < 0) throw Error("denoiser_epochs must be non-negative");
  if (train_samples < 1 || holdout_samples < 1)
    throw Error("dataset sizes must be at least 1");
  if (image_size < 16 || image_size % 8 != 0)
    throw Error("image_size must be >= 16 and divisible by 8, got " +
                std::to_string(image_size));
  if (gamma < 0 || delta < 0 || omega_scale < 0)
    throw Error("loss weights must be non-negative");
  if (precision != "f32" && precision != "f64")
    throw Error("precision must be f32 or f64, got '" + precision + "'");
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  for (const auto& [key, value] : model.to_lines()) os << key << " = " << value << "\n";
  os << "epochs = " << epochs << "\n";
  os << "batch_size = " << batch_size << "\n";
  os << "learning_rate = " << fmt_double(learning_rate) << "\n";
  os << "momentum = " << fmt_double(momentum) << "\n";
  os << "denoiser_epochs = " << denoiser_epochs << "\n";
  os << "denoiser_learning_rate = " << fmt_double(denoiser_learning_rate) << "\n";
  os << "train_samples = " << train_samples << "\n";
  os << "holdout_samples = " << holdout_samples << "\n";
  os << "image_size = " << image_size << "\n";
  os << "gamma = " << fmt_double(gamma) << "\n";
  os << "delta = " << fmt_double(delta) << "\n";
  os << "omega_scale = " << fmt_double(omega_scale) << "\n";
  os << "seed = " << seed << "\n";
  os << "precision = " << precision << "\n";
  return os.str();
}

RunConfig RunConfig::from_lines(const ConfigLines& lines) {
  RunConfig rc;
  ConfigLines model_lines;
  for (const auto& [key, value] : lines) {
    if (model_keys().count(key)) {
      model_lines.emplace_back(key, value);
    } else if (key == "epochs") {
      rc.epochs = std::stol(value);
    } else if (key == "batch_size") {
      rc.batch_size = std::stol(value);
    } else if (key == "learning_rate") {
      rc.learning_rate = std::stod(value);
    } else if (key == "momentum") {
      rc.momentum = std::stod(value);
    } else if (key == "denoiser_epochs") {
      rc.denoiser_epochs = std::stol(value);
    } else if (key == "denoiser_learning_rate") {
      rc.denoiser_learning_rate = std::stod(value);
    } else if (key == "train_samples") {
      rc.train_samples = std::stol(value);
    } else if (key == "holdout_samples") {
      rc.holdout_samples = std::stol(value);
    } else if (key == "image_size") {
      rc.image_size = std::stol(value);
    } else if (key == "gamma") {
      rc.gamma = std::stod(value);
    } else if (key == "delta") {
      rc.delta = std::stod(value);
    } else if (key == "omega_scale") {
      rc.omega_scale = std::stod(value);
    } else if (key == "seed") {
      rc.seed = std::stoull(value);
    } else if (key == "precision") {
      rc.precision = value;
    } else {
      throw Error("unknown config key '" + key + "'");
    }
  }
  if (!model_lines.empty()) {
    // Re-apply defaults first so a partial model section works the same way
    // as a partial run section.
    ConfigLines merged = rc.model.to_lines();
    for (auto& [key, value] : merged)
      for (const auto& [mk, mv] : model_lines)
        if (mk == key) value = mv;
    rc.model = ModelConfig::from_lines(merged);
  }
  rc.validate();
  return rc;
}

RunConfig load_run_config(const std::string& path) {
  if (path.empty()) {
    RunConfig rc;
    rc.validate();
    return rc;
  }
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return RunConfig::parse_text(buf.str());
}

}  // namespace dgssm
