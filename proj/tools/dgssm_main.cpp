// Command-line front end: dataset generation, training, evaluation, the
// component ablation ladder, and the scan kernel benchmark. All artifacts
// land under --out-dir with fixed names:
//   generate -> manifest.txt + sample_NNNN_{rgb.ppm,aux.pgm,gt.pgm}
//   train    -> checkpoint.dgssm, train_log.csv
//   eval     -> eval.csv
//   ablate   -> ablation.md
//   bench    -> bench.csv
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dgssm/bench.hpp"
#include "dgssm/config.hpp"
#include "dgssm/trainer.hpp"

namespace fs = std::filesystem;
using namespace dgssm;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir = "out";
  std::uint64_t seed = 0;
  bool seed_set = false;
  int threads = 1;
  std::string precision;  // empty = take from config
};

void add_common(CLI::App* cmd, CommonArgs& a) {
  cmd->add_option("--config", a.config_path, "key = value config file (defaults when omitted)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--out-dir", a.out_dir, "output directory (created if missing)");
  cmd->add_option("--seed", a.seed, "run seed (overrides the config's seed)")
      ->each([&a](const std::string&) { a.seed_set = true; });
  cmd->add_option("--threads", a.threads, "worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--precision", a.precision, "f32 or f64 (overrides the config)")
      ->check(CLI::IsMember({"f32", "f64"}));
}

// Config file first, then command-line overrides on top.
RunConfig resolve(const CommonArgs& a) {
  RunConfig rc = load_run_config(a.config_path);
  if (a.seed_set) rc.seed = a.seed;
  if (!a.precision.empty()) rc.precision = a.precision;
  rc.validate();
  return rc;
}

std::string ensure_out_dir(const std::string& dir) {
  fs::create_directories(dir);
  return dir;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  os << text;
  if (!os) throw Error("write failed for '" + path + "'");
}

std::vector<SyntheticSample> training_data(const RunConfig& rc, const std::string& manifest) {
  if (!manifest.empty()) return load_dataset(manifest);
  return generate_dataset(rc.train_samples, rc.image_size, rc.image_size, rc.seed);
}

std::vector<SyntheticSample> holdout_data(const RunConfig& rc, const std::string& manifest) {
  if (!manifest.empty()) return load_dataset(manifest);
  return generate_dataset(rc.holdout_samples, rc.image_size, rc.image_size,
                          holdout_seed(rc.seed));
}

template <typename T>
Model<T> fresh_model(const RunConfig& rc) {
  Rng rng(rc.seed);
  Model<T> m = Model<T>::init(rc.model, rng);
  std::cout << "parameters: " << m.param_count() << "\n";
  return m;
}

template <typename T>
int run_train(const RunConfig& rc, const CommonArgs& a, const std::string& manifest) {
  const std::string dir = ensure_out_dir(a.out_dir);
  std::vector<SyntheticSample> data = training_data(rc, manifest);
  Model<T> m = fresh_model<T>(rc);
  TrainResult<T> tr = train_model(m, data, rc, rc.seed, a.threads, &std::cout);
  write_text((fs::path(dir) / "train_log.csv").string(), tr.log_csv);
  std::ofstream ck((fs::path(dir) / "checkpoint.dgssm").string(), std::ios::binary);
  if (!ck) throw Error("cannot write checkpoint");
  m.save(ck);
  std::cout << "checkpoint: " << (fs::path(dir) / "checkpoint.dgssm").string() << "\n";
  return 0;
}

template <typename T>
int run_eval(const RunConfig& rc, const CommonArgs& a, const std::string& manifest,
             const std::string& checkpoint) {
  const std::string dir = ensure_out_dir(a.out_dir);
  std::vector<SyntheticSample> data = holdout_data(rc, manifest);
  Model<T> m = [&] {
    if (checkpoint.empty()) return fresh_model<T>(rc);
    std::ifstream is(checkpoint, std::ios::binary);
    if (!is) throw Error("cannot open checkpoint '" + checkpoint + "'");
    Model<T> loaded = Model<T>::load(is);
    std::cout << "parameters: " << loaded.param_count() << "\n";
    return loaded;
  }();
  EvalOutput<T> ev = evaluate_model(m, data, a.threads);
  write_text((fs::path(dir) / "eval.csv").string(), ev.csv);
  std::cout << "samples: " << ev.rows.size() << "\n"
            << "S-measure " << ev.mean.s_measure << "  mean F " << ev.mean.f_measure_mean
            << "  mean E " << ev.mean.e_measure_mean << "  MAE " << ev.mean.mae << "\n";
  return 0;
}

template <typename T>
int run_ablate(const RunConfig& rc, const CommonArgs& a) {
  const std::string dir = ensure_out_dir(a.out_dir);
  AblationReport report = ablate<T>(rc, rc.seed, a.threads, &std::cout);
  write_text((fs::path(dir) / "ablation.md").string(), report.markdown);
  std::cout << report.markdown;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"diffusion-guided state-space saliency pipeline"};
  app.require_subcommand(1);

  CommonArgs a;
  std::string manifest, checkpoint;
  long gen_count = -1;

  CLI::App* generate = app.add_subcommand("generate", "write a synthetic dataset");
  add_common(generate, a);
  generate->add_option("--count", gen_count, "sample count (default: train_samples)");

  CLI::App* train = app.add_subcommand("train", "train a model and write a checkpoint");
  add_common(train, a);
  train->add_option("--data", manifest, "dataset manifest (default: synthesize from seed)")
      ->check(CLI::ExistingFile);

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval, a);
  eval->add_option("--data", manifest, "dataset manifest (default: synthesized holdout)")
      ->check(CLI::ExistingFile);
  eval->add_option("--checkpoint", checkpoint, "checkpoint path (default: fresh model)")
      ->check(CLI::ExistingFile);

  CLI::App* ablate_cmd = app.add_subcommand("ablate", "train the component ladder");
  add_common(ablate_cmd, a);

  CLI::App* bench = app.add_subcommand("bench", "time the scan kernels");
  add_common(bench, a);
  std::vector<long> lengths = {256, 4096, 65536};
  int reps = 5;
  bench->add_option("--lengths", lengths, "sequence lengths, ascending");
  bench->add_option("--reps", reps, "timing repetitions")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    const RunConfig rc = resolve(a);
    const bool f32 = rc.precision == "f32";

    if (generate->parsed()) {
      const std::string dir = ensure_out_dir(a.out_dir);
      const long n = gen_count > 0 ? gen_count : rc.train_samples;
      auto data = generate_dataset(n, rc.image_size, rc.image_size, rc.seed);
      const std::string path = write_dataset(dir, data);
      std::cout << "wrote " << data.size() << " samples, manifest: " << path << "\n";
      return 0;
    }
    if (train->parsed())
      return f32 ? run_train<float>(rc, a, manifest) : run_train<double>(rc, a, manifest);
    if (eval->parsed())
      return f32 ? run_eval<float>(rc, a, manifest, checkpoint)
                 : run_eval<double>(rc, a, manifest, checkpoint);
    if (ablate_cmd->parsed())
      return f32 ? run_ablate<float>(rc, a) : run_ablate<double>(rc, a);
    if (bench->parsed()) {
      const std::string dir = ensure_out_dir(a.out_dir);
      BenchReport report = bench_scan(lengths, rc.model.state_dim, reps, a.threads);
      write_text((fs::path(dir) / "bench.csv").string(), report.csv());
      std::cout << report.csv();
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
