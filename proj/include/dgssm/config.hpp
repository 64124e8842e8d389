#pragma once

#include <string>

#include "dgssm/losses.hpp"
#include "dgssm/network.hpp"

namespace dgssm {

// Parses `key = value` text: one pair per line, `#` starts a comment,
// blank lines are skipped. Grammar errors carry the line number.
ConfigLines parse_kv_text(const std::string& text);

// One flat namespace for a full run: every ModelConfig key plus the
// training/data knobs below. Partial files work — unset keys keep defaults;
// unknown keys are an error.
struct RunConfig {
  ModelConfig model;
  long epochs = 30;
  long batch_size = 8;
  double learning_rate = 5e-4;
  double momentum = 0.9;
  long denoiser_epochs = 40;
  double denoiser_learning_rate = 0.02;
  long train_samples = 200;
  long holdout_samples = 50;
  long image_size = 64;
  double gamma = 1.0;        // edge-agreement weight
  double delta = 0.1;        // distillation weight
  double omega_scale = 0.4;  // progressive-supervision ramp endpoint
  std::uint64_t seed = 42;
  std::string precision = "f64";  // or "f32"

  LossWeights weights() const {
    LossWeights w;
    w.gamma = gamma;
    w.delta = delta;
    for (long k = 1; k <= model.refine_steps; ++k)
      w.omega.push_back(omega_scale * static_cast<double>(k) /
                        static_cast<double>(model.refine_steps));
    return w;
  }

  void validate() const;
  std::string to_text() const;
  static RunConfig from_lines(const ConfigLines& lines);
  static RunConfig parse_text(const std::string& text) {
    return from_lines(parse_kv_text(text));
  }
};

// Reads and parses a config file; an empty path yields the defaults.
RunConfig load_run_config(const std::string& path);

}  // namespace dgssm
