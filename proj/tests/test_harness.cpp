#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dgssm/bench.hpp"
#include "dgssm/config.hpp"
#include "dgssm/image_io.hpp"
#include "dgssm/trainer.hpp"

using namespace dgssm;
namespace fs = std::filesystem;

namespace {

// Small-but-complete configuration so the training-path tests stay fast.
ModelConfig tiny_model() {
  ModelConfig mc;
  mc.stem_width = 6;
  mc.widths = {6, 12};
  mc.state_dim = 4;
  mc.latent_channels = 2;
  mc.prompt_dim = 8;
  mc.refine_steps = 2;
  mc.scales = {1};
  mc.directions = {ScanDirection::kLeftToRight, ScanDirection::kTopToBottom};
  mc.diffusion_steps = 10;
  mc.noise_step = 5;
  mc.prior_step = 2;
  mc.denoiser_width = 4;
  mc.denoiser_embed = 8;
  mc.kd_embed = 8;
  mc.barh_proj_channels = 4;
  mc.barh_hidden = 6;
  mc.imdr_proj_channels = 4;
  mc.imdr_hidden = 4;
  return mc;
}

RunConfig tiny_run() {
  RunConfig rc;
  rc.model = tiny_model();
  rc.epochs = 2;
  rc.batch_size = 4;
  rc.denoiser_epochs = 3;
  rc.train_samples = 8;
  rc.holdout_samples = 4;
  rc.image_size = 16;
  return rc;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("dgssm_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string str(const std::string& name = "") const { return (path / name).string(); }
};

template <typename T>
std::string checkpoint_bytes(Model<T>& m) {
  std::ostringstream os;
  m.save(os);
  return os.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// synthetic dataset

TEST_CASE("same seed generates bit-identical datasets") {
  auto a = generate_dataset(6, 32, 32, 9001);
  auto b = generate_dataset(6, 32, 32, 9001);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].rgb == b[i].rgb);
    CHECK(a[i].aux == b[i].aux);
    CHECK(a[i].gt == b[i].gt);
    CHECK(a[i].seed == b[i].seed);
  }
  auto c = generate_dataset(6, 32, 32, 9002);
  CHECK(a[0].rgb != c[0].rgb);
}

TEST_CASE("foreground fraction stays inside the generator band") {
  for (const auto& s : generate_dataset(50, 64, 64, 42)) {
    const double frac = foreground_fraction(s);
    CHECK(frac >= 0.05);
    CHECK(frac <= 0.60);
    // binary mask, never empty
    for (uint8_t v : s.gt) CHECK((v == 0 || v == 255));
  }
}

TEST_CASE("aux channel correlates with the mask except on decorrelated samples") {
  auto data = generate_dataset(50, 64, 64, 42);
  long correlated = 0, eligible = 0;
  for (const auto& s : data) {
    if (aux_decorrelated(s.id)) continue;
    ++eligible;
    double fg = 0, bg = 0;
    long nfg = 0, nbg = 0;
    for (size_t i = 0; i < s.gt.size(); ++i) {
      if (s.gt[i]) {
        fg += s.aux[i];
        ++nfg;
      } else {
        bg += s.aux[i];
        ++nbg;
      }
    }
    if (fg / nfg > bg / nbg) ++correlated;
  }
  CHECK(eligible == 40);  // ids 4, 9, ... are decorrelated
  CHECK(static_cast<double>(correlated) / static_cast<double>(eligible) >= 0.80);
}

TEST_CASE("generator rejects nonpositive counts") {
  CHECK_THROWS_AS(generate_dataset(0, 32, 32, 1), Error);
}

// ---------------------------------------------------------------------------
// image I/O

TEST_CASE("ppm and pgm round-trip exactly") {
  TempDir dir;
  Rng rng(5);
  ImageU8 rgb{7, 5, 3, {}};
  rgb.data.resize(7 * 5 * 3);
  for (auto& v : rgb.data) v = static_cast<uint8_t>(rng.next_u64() & 0xff);
  ImageU8 gray{7, 5, 1, {}};
  gray.data.resize(7 * 5);
  for (auto& v : gray.data) v = static_cast<uint8_t>(rng.next_u64() & 0xff);

  write_image(dir.str("c.ppm"), rgb);
  write_image(dir.str("g.pgm"), gray);
  ImageU8 rgb2 = read_image(dir.str("c.ppm"));
  ImageU8 gray2 = read_image(dir.str("g.pgm"));
  CHECK(rgb2.width == 7);
  CHECK(rgb2.height == 5);
  CHECK(rgb2.channels == 3);
  CHECK(rgb2.data == rgb.data);
  CHECK(gray2.channels == 1);
  CHECK(gray2.data == gray.data);
}

TEST_CASE("image reader rejects malformed files") {
  TempDir dir;
  auto write_raw = [&](const std::string& name, const std::string& bytes) {
    std::ofstream os(dir.str(name), std::ios::binary);
    os << bytes;
  };
  write_raw("bad_magic.ppm", "P3\n2 2\n255\n");
  CHECK_THROWS_AS(read_image(dir.str("bad_magic.ppm")), Error);
  write_raw("bad_maxval.pgm", "P5\n2 2\n65535\n");
  CHECK_THROWS_AS(read_image(dir.str("bad_maxval.pgm")), Error);
  write_raw("truncated.pgm", "P5\n4 4\n255\nab");
  CHECK_THROWS_AS(read_image(dir.str("truncated.pgm")), Error);
  CHECK_THROWS_AS(read_image(dir.str("missing.pgm")), Error);
}

TEST_CASE("dataset survives a disk round-trip bit-exactly") {
  TempDir dir;
  auto data = generate_dataset(5, 32, 32, 77);
  const std::string manifest = write_dataset(dir.str(), data);
  auto back = load_dataset(manifest);
  REQUIRE(back.size() == data.size());
  for (size_t i = 0; i < data.size(); ++i) {
    CHECK(back[i].id == data[i].id);
    CHECK(back[i].seed == data[i].seed);
    CHECK(back[i].rgb == data[i].rgb);
    CHECK(back[i].aux == data[i].aux);
    CHECK(back[i].gt == data[i].gt);
  }
  CHECK_THROWS_AS(load_dataset(dir.str("nope.txt")), Error);
}

// ---------------------------------------------------------------------------
// configuration

TEST_CASE("config text round-trips through the parser") {
  RunConfig rc = tiny_run();
  rc.learning_rate = 0.0125;
  rc.seed = 1234;
  rc.precision = "f32";
  RunConfig back = RunConfig::parse_text(rc.to_text());
  CHECK(back.to_text() == rc.to_text());
  CHECK(back.seed == 1234);
  CHECK(back.precision == "f32");
  CHECK(back.model.widths == rc.model.widths);
}

TEST_CASE("config grammar: comments, blanks, partial files, errors") {
  RunConfig rc = RunConfig::parse_text(
      "# comment line\n"
      "\n"
      "epochs = 7\n"
      "state_dim = 8   # trailing comment\n");
  CHECK(rc.epochs == 7);
  CHECK(rc.model.state_dim == 8);
  CHECK(rc.batch_size == 8);  // untouched default

  CHECK_THROWS_WITH_AS(RunConfig::parse_text("epochs 7\n"),
                       doctest::Contains("line 1"), Error);
  CHECK_THROWS_WITH_AS(RunConfig::parse_text("no_such_key = 3\n"),
                       doctest::Contains("no_such_key"), Error);
  CHECK_THROWS_AS(RunConfig::parse_text("precision = f16\n"), Error);
  CHECK_THROWS_AS(RunConfig::parse_text("momentum = 1.0\n"), Error);
  CHECK_THROWS_AS(RunConfig::parse_text("image_size = 20\n"), Error);
}

TEST_CASE("loss weights honour the ablation flags") {
  RunConfig rc = tiny_run();
  rc.model.refine_steps = 2;

  LossWeights full = effective_weights(rc, rc.model);
  CHECK(full.omega.size() == 2);
  CHECK(full.delta == doctest::Approx(rc.delta));

  ModelConfig no_refine = rc.model;
  no_refine.use_imdr = false;
  LossWeights w1 = effective_weights(rc, no_refine);
  CHECK(w1.omega.empty());

  ModelConfig no_kd = rc.model;
  no_kd.use_kd = false;
  LossWeights w2 = effective_weights(rc, no_kd);
  CHECK(w2.delta == 0.0);
}

// ---------------------------------------------------------------------------
// training plumbing

TEST_CASE("zero epochs leaves the initialized weights untouched") {
  RunConfig rc = tiny_run();
  rc.epochs = 0;
  auto data = generate_dataset(rc.train_samples, rc.image_size, rc.image_size, 3);

  Rng r1(11), r2(11);
  Model<double> trained = Model<double>::init(rc.model, r1);
  Model<double> fresh = Model<double>::init(rc.model, r2);
  TrainResult<double> tr = train_model(trained, data, rc, 3);
  CHECK(tr.epoch_loss.empty());
  CHECK(checkpoint_bytes(trained) == checkpoint_bytes(fresh));
}

TEST_CASE("refinement stages start as the identity") {
  RunConfig rc = tiny_run();
  Rng rng(21);
  Model<double> m = Model<double>::init(rc.model, rng);
  auto data = generate_dataset(1, rc.image_size, rc.image_size, 4);
  auto ten = to_tensors<double>(data);
  auto priors = compute_priors(m, data, ten, 1);
  ForwardOutputs<double> out = m.forward(nullptr, ten[0].rgb, ten[0].aux, priors[0]);
  REQUIRE(out.refined.size() == 2);
  CHECK(out.final_map.data() == out.s0.data());
  CHECK(out.logitb.data() == out.logit0.data());
}

TEST_CASE("single-threaded training is byte-deterministic") {
  RunConfig rc = tiny_run();
  auto data = generate_dataset(rc.train_samples, rc.image_size, rc.image_size, 5);

  auto run = [&](std::string& log, std::string& eval_csv) {
    Rng rng(6);
    Model<double> m = Model<double>::init(rc.model, rng);
    TrainResult<double> tr = train_model(m, data, rc, 6);
    log = tr.log_csv;
    auto holdout = generate_dataset(rc.holdout_samples, rc.image_size, rc.image_size,
                                    holdout_seed(6));
    eval_csv = evaluate_model(m, holdout).csv;
    return checkpoint_bytes(m);
  };
  std::string log1, log2, csv1, csv2;
  const std::string ck1 = run(log1, csv1);
  const std::string ck2 = run(log2, csv2);
  CHECK(ck1 == ck2);
  CHECK(log1 == log2);
  CHECK(csv1 == csv2);
  CHECK(log1.substr(0, log1.find('\n')) ==
        "epoch,total,bce,iou,edge_term,kd_term,progressive_term");
}

TEST_CASE("training loss lands in the log and declines on a tiny set") {
  RunConfig rc = tiny_run();
  rc.epochs = 4;
  auto data = generate_dataset(rc.train_samples, rc.image_size, rc.image_size, 8);
  Rng rng(8);
  Model<double> m = Model<double>::init(rc.model, rng);
  TrainResult<double> tr = train_model(m, data, rc, 8);
  REQUIRE(tr.epoch_loss.size() == 4);
  CHECK(tr.epoch_loss.back() < tr.epoch_loss.front());
  CHECK(!tr.denoiser_loss.empty());
}

TEST_CASE("checkpoints reload into an identical model") {
  RunConfig rc = tiny_run();
  Rng rng(31);
  Model<double> m = Model<double>::init(rc.model, rng);
  std::stringstream buf;
  m.save(buf);
  Model<double> back = Model<double>::load(buf);
  CHECK(checkpoint_bytes(back) == checkpoint_bytes(m));
  CHECK(back.cfg.widths == m.cfg.widths);

  // wrong bytes are rejected
  std::stringstream junk("not a checkpoint");
  CHECK_THROWS_AS(Model<double>::load(junk), Error);
}

TEST_CASE("evaluating the ground truth as prediction scores perfectly") {
  auto data = generate_dataset(4, 32, 32, 12);
  for (const auto& s : data) {
    std::vector<double> pred(s.gt.size()), gt(s.gt.size());
    for (size_t i = 0; i < s.gt.size(); ++i) pred[i] = gt[i] = s.gt[i] ? 1.0 : 0.0;
    EvalResult r = evaluate_sample({pred, gt, s.height, s.width});
    CHECK(r.s_measure == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(r.f_measure_mean == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(r.e_measure_mean == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(r.mae == doctest::Approx(0.0).epsilon(1e-9));
  }
}

TEST_CASE("evaluation output is stable and carries one row per sample") {
  RunConfig rc = tiny_run();
  Rng rng(14);
  Model<double> m = Model<double>::init(rc.model, rng);
  auto data = generate_dataset(5, rc.image_size, rc.image_size, 15);
  EvalOutput<double> a = evaluate_model(m, data);
  EvalOutput<double> b = evaluate_model(m, data, 2);
  CHECK(a.rows.size() == 5);
  CHECK(a.csv == b.csv);  // inference is pure; thread fan-out cannot change it
  const std::string header = a.csv.substr(0, a.csv.find('\n'));
  CHECK(header == "sample_id,s_measure,f_measure_mean,e_measure_mean,mae");
  // aggregate equals the arithmetic mean of the rows
  double f = 0;
  for (const EvalResult& r : a.rows) f += r.f_measure_mean;
  CHECK(a.mean.f_measure_mean == doctest::Approx(f / 5.0));
}

TEST_CASE("worker-pool training reduces gradients deterministically") {
  RunConfig rc = tiny_run();
  rc.epochs = 1;
  auto data = generate_dataset(rc.train_samples, rc.image_size, rc.image_size, 18);
  auto run = [&](int threads) {
    Rng rng(18);
    Model<double> m = Model<double>::init(rc.model, rng);
    train_model(m, data, rc, 18, threads);
    return m;
  };
  Model<double> solo1 = run(1);
  Model<double> duo1 = run(2);
  Model<double> duo2 = run(2);
  // fixed merge order => a given thread count is byte-reproducible
  CHECK(checkpoint_bytes(duo1) == checkpoint_bytes(duo2));
  // across thread counts only the fp reduction order differs
  auto a = solo1.named_params();
  auto b = duo1.named_params();
  REQUIRE(a.size() == b.size());
  double worst = 0;
  for (size_t i = 0; i < a.size(); ++i)
    for (long j = 0; j < a[i].second.numel(); ++j)
      worst = std::max(worst, std::abs(a[i].second.data()[static_cast<size_t>(j)] -
                                       b[i].second.data()[static_cast<size_t>(j)]));
  CHECK(worst < 1e-9);
}

// ---------------------------------------------------------------------------
// ablation ladder

TEST_CASE("ablation ladder walks the seven documented rungs") {
  auto rungs = ablation_ladder(tiny_model());
  REQUIRE(rungs.size() == 7);
  CHECK(rungs[0].first == "baseline");
  CHECK(rungs[6].first == "full model");
  const ModelConfig& base = rungs[0].second;
  CHECK_FALSE(base.use_dsp);
  CHECK_FALSE(base.use_asp);
  CHECK_FALSE(base.use_msss);
  CHECK_FALSE(base.use_barh);
  CHECK_FALSE(base.use_imdr);
  CHECK_FALSE(base.use_kd);
  // cumulative: each rung turns exactly one more flag on
  auto flags_on = [](const ModelConfig& c) {
    return int(c.use_dsp) + int(c.use_asp) + int(c.use_msss) + int(c.use_barh) +
           int(c.use_imdr) + int(c.use_kd);
  };
  for (size_t i = 0; i < rungs.size(); ++i)
    CHECK(flags_on(rungs[i].second) == static_cast<int>(i));
  CHECK(rungs[6].second.use_kd);
}

TEST_CASE("each ablation flag adds its own parameters and nothing else") {
  Rng rng(1);
  auto count = [&](const ModelConfig& c) {
    Rng r(1);
    Model<double> m = Model<double>::init(c, r);
    return m.param_count();
  };
  const auto rungs = ablation_ladder(tiny_model());
  // walking up the ladder never removes parameters, and toggling a flag off
  // from the full config gives back exactly the rung-wise increment
  std::vector<long> counts;
  for (const auto& [name, cfg] : rungs) counts.push_back(count(cfg));
  for (size_t i = 1; i < counts.size(); ++i) CHECK(counts[i] >= counts[i - 1]);

  ModelConfig full = tiny_model();
  ModelConfig no_barh = full;
  no_barh.use_barh = false;
  ModelConfig base_plus_barh = rungs[0].second;
  base_plus_barh.use_barh = true;
  CHECK(count(full) - count(no_barh) == count(base_plus_barh) - counts[0]);
}

// ---------------------------------------------------------------------------
// scan benchmark

TEST_CASE("bench report matches the documented csv schema") {
  BenchReport r = bench_scan({8, 64}, 4, 2, 2);
  REQUIRE(r.rows.size() == 4);
  const std::string csv = r.csv();
  CHECK(csv.substr(0, csv.find('\n')) ==
        "kernel,length,Dh,threads,elements_per_sec,max_residual_vs_sequential");
  for (const BenchRow& row : r.rows) {
    CHECK(row.max_residual < 1e-10);
    CHECK(row.elements_per_sec > 0);
  }
  CHECK(r.rows[0].kernel == "sequential");
  CHECK(r.rows[1].kernel == "parallel");
  CHECK_THROWS_AS(bench_scan({64, 8}, 4, 2, 1), Error);
  CHECK_THROWS_AS(bench_scan({}, 4, 2, 1), Error);
}
