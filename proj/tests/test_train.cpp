#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "essm/errors.hpp"
#include "essm/train.hpp"
#include "support/test_util.hpp"

using namespace essm;
using namespace essm::train;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("essm_train_" + std::to_string(Rng(::getpid() * 7919).next_u64() % 1000000000));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

model::ModelConfig tiny_model() {
  model::ModelConfig cfg;
  cfg.front_filters = 1;
  cfg.front_kernel = 20;
  cfg.d_model = 4;
  cfg.mamba_blocks_per_level = 1;
  cfg.ssm_state = 2;
  cfg.levels = 2;
  cfg.pool_factor = 4;
  cfg.level_dims = {4, 8, 16};
  cfg.head_hidden = 4;
  return cfg;
}

/// Small corpus + preprocessing shared by the tests below.
struct Corpus {
  TempDir dir;
  ingest::WindowsManifest windows;
  Corpus(std::size_t train_patients = 2, std::size_t test_patients = 1,
         std::size_t seizures = 1, double duration = 60.0) {
    ingest::SynthOptions opts;
    opts.train_patients = train_patients;
    opts.test_patients = test_patients;
    opts.duration_s = duration;
    opts.seizure_events = seizures;
    opts.seed = 99;
    const auto manifest_path = ingest::make_synth_corpus((dir.path / "corpus").string(), opts);
    windows = ingest::preprocess_manifest(ingest::load_manifest(manifest_path),
                                          (dir.path / "prep").string());
  }
};

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("mask_channels: identity, survivor guard, empirical rate") {
  Rng rng(601);
  SUBCASE("prob 0 is the identity") {
    auto x = essm::test::random_tensor_f({2, 19, 8}, rng);
    auto y = mask_channels(x, 0.0, rng);
    CHECK(y.to_vector() == x.to_vector());
  }
  SUBCASE("at least one channel survives even at prob 0.999") {
    auto x = TensorF::ones({4, 19, 8});
    auto y = mask_channels(x, 0.999, rng);
    for (std::size_t b = 0; b < 4; ++b) {
      bool any = false;
      for (std::size_t c = 0; c < 19; ++c) any = any || y[(b * 19 + c) * 8] != 0.0f;
      CHECK(any);
    }
  }
  SUBCASE("empirical mask rate within 2% of prob over 10k draws") {
    const double prob = 0.3;
    std::size_t dropped = 0, total = 0;
    auto x = TensorF::ones({10000 / 19 + 1, 19, 2});
    auto y = mask_channels(x, prob, rng);
    for (std::size_t b = 0; b < x.extent(0); ++b)
      for (std::size_t c = 0; c < 19; ++c) {
        ++total;
        if (y[(b * 19 + c) * 2] == 0.0f) ++dropped;
      }
    const double rate = static_cast<double>(dropped) / static_cast<double>(total);
    CHECK(std::abs(rate - prob) < 0.02);
  }
  SUBCASE("invalid probability rejected") {
    auto x = TensorF::ones({1, 19, 2});
    CHECK_THROWS_AS(mask_channels(x, 1.0, rng), ConfigError);
  }
}

TEST_CASE("pretrain: smoke run, loss decreases, artifacts exist, deterministic") {
  Corpus corpus;
  auto mcfg = tiny_model();
  TrainConfig tcfg;
  tcfg.seed = 5;
  tcfg.batch_size = 4;
  tcfg.steps = 30;
  tcfg.lr = 2e-3;
  tcfg.eval_every = 10;

  auto rep = pretrain(corpus.windows, mcfg, tcfg, (corpus.dir.path / "run1").string());
  CHECK(fs::exists(rep.checkpoint_path));
  CHECK(fs::exists(rep.metrics_path));
  CHECK(fs::exists(rep.report_path));
  CHECK(std::isfinite(rep.final_loss_total));
  CHECK_FALSE(rep.auroc.has_value());

  // loss at the end should beat the first logged step
  std::ifstream log(rep.metrics_path);
  std::string first_line, line;
  std::getline(log, first_line);
  double first_total = 0;
  std::sscanf(first_line.c_str(), "{\"step\":1,\"loss_mse\":%*g,\"loss_spec\":%*g,\"loss_total\":%lg", &first_total);
  std::size_t lines = 1;
  while (std::getline(log, line)) ++lines;
  CHECK(lines == tcfg.steps);
  CHECK(rep.final_loss_total < first_total);

  SUBCASE("identical seed and inputs give byte-identical metric logs") {
    auto rep2 = pretrain(corpus.windows, mcfg, tcfg, (corpus.dir.path / "run2").string());
    CHECK(slurp(rep.metrics_path) == slurp(rep2.metrics_path));
    CHECK(slurp(rep.report_path.substr(0, 0) + rep.checkpoint_path) ==
          slurp(rep2.checkpoint_path));
  }
  SUBCASE("a different seed changes the trajectory") {
    TrainConfig other = tcfg;
    other.seed = 6;
    auto rep3 = pretrain(corpus.windows, mcfg, other, (corpus.dir.path / "run3").string());
    CHECK(slurp(rep.metrics_path) != slurp(rep3.metrics_path));
  }
}

TEST_CASE("pretrain: spectral ablation flag emits one comparative report") {
  Corpus corpus;
  auto mcfg = tiny_model();
  TrainConfig tcfg;
  tcfg.seed = 7;
  tcfg.batch_size = 4;
  tcfg.steps = 8;
  tcfg.eval_every = 4;

  auto rep = spectral_ablation(corpus.windows, mcfg, tcfg, (corpus.dir.path / "abl").string());
  CHECK(fs::exists(rep.report_path));
  const auto text = slurp(rep.report_path);
  CHECK(text.find("with_spectral") != std::string::npos);
  CHECK(text.find("without_spectral") != std::string::npos);
  // the ablated arm must actually run with lambda 0
  CHECK(text.find("\"lambda_spectral\": 0.0") != std::string::npos);
}

TEST_CASE("pretrain: empty manifest and NaN abort") {
  Corpus corpus;
  auto mcfg = tiny_model();
  TrainConfig tcfg;
  tcfg.batch_size = 2;
  tcfg.steps = 4;
  SUBCASE("no training windows -> DataError") {
    ingest::WindowsManifest empty;
    CHECK_THROWS_AS(pretrain(empty, mcfg, tcfg, (corpus.dir.path / "e").string()), DataError);
  }
  SUBCASE("divergence aborts with the offending step index") {
    TrainConfig bad = tcfg;
    bad.lr = 1e14;
    bad.steps = 50;
    CHECK_THROWS_WITH_AS(
        pretrain(corpus.windows, mcfg, bad, (corpus.dir.path / "nan").string()),
        doctest::Contains("step"), NumericError);
  }
}

TEST_CASE("finetune: from checkpoint, frozen encoder, scratch comparison") {
  Corpus corpus;
  auto mcfg = tiny_model();
  TrainConfig pre;
  pre.seed = 11;
  pre.batch_size = 4;
  pre.steps = 10;
  pre.eval_every = 5;
  auto pretrained = pretrain(corpus.windows, mcfg, pre, (corpus.dir.path / "pre").string());

  TrainConfig ft;
  ft.seed = 13;
  ft.batch_size = 4;
  ft.steps = 12;
  ft.eval_every = 6;
  ft.lr = 5e-3;

  SUBCASE("checkpoint file is never mutated (copy-on-load)") {
    const auto before = slurp(pretrained.checkpoint_path);
    auto rep = finetune(corpus.windows, pretrained.checkpoint_path, mcfg, ft,
                        (corpus.dir.path / "ft").string());
    CHECK(slurp(pretrained.checkpoint_path) == before);
    CHECK(fs::exists(rep.checkpoint_path));
    CHECK(rep.checkpoint_path != pretrained.checkpoint_path);
    // held-out AUROC must be present (the test split has both classes here)
    CHECK(rep.auroc.has_value());
  }

  SUBCASE("freeze_encoder updates only the classification head") {
    auto [cfg0, before] = model::load_checkpoint(pretrained.checkpoint_path);
    TrainConfig frozen = ft;
    frozen.freeze_encoder = true;
    auto rep = finetune(corpus.windows, pretrained.checkpoint_path, mcfg, frozen,
                        (corpus.dir.path / "ftf").string());
    auto [cfg1, after] = model::load_checkpoint(
        (fs::path(corpus.dir.path) / "ftf" / "checkpoint_final.essm").string());
    (void)cfg1;
    std::size_t encoder_diffs = 0, head_diffs = 0;
    auto b = model::collect_params(before);
    auto a = model::collect_params(after);
    auto bh = model::collect_cls_params(before);
    auto ah = model::collect_cls_params(after);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      bool is_head = false;
      for (auto& h : ah)
        if (h.data() == a[i].data()) is_head = true;
      if (a[i].to_vector() != b[i].to_vector()) (is_head ? head_diffs : encoder_diffs)++;
    }
    CHECK(encoder_diffs == 0);
    CHECK(head_diffs > 0);
    (void)bh;
    (void)rep;
  }

  SUBCASE("missing checkpoint without from_scratch is a config error") {
    CHECK_THROWS_AS(
        finetune(corpus.windows, "", mcfg, ft, (corpus.dir.path / "nock").string()),
        ConfigError);
  }

  SUBCASE("scratch comparison emits both AUROCs in one report") {
    TrainConfig cmp = ft;
    cmp.steps = 6;
    cmp.eval_every = 3;
    auto rep = scratch_comparison(corpus.windows, pretrained.checkpoint_path, mcfg, cmp,
                                  (corpus.dir.path / "cmp").string());
    const auto text = slurp(rep.report_path);
    CHECK(text.find("\"pretrained\"") != std::string::npos);
    CHECK(text.find("\"from_scratch\"") != std::string::npos);
    CHECK(text.find("\"auroc\"") != std::string::npos);
  }
}

TEST_CASE("evaluate: deterministic, empty split fails, single-class marker") {
  Corpus corpus;
  auto mcfg = tiny_model();
  TrainConfig pre;
  pre.seed = 17;
  pre.batch_size = 4;
  pre.steps = 6;
  pre.eval_every = 3;
  auto pretrained = pretrain(corpus.windows, mcfg, pre, (corpus.dir.path / "pre").string());

  auto r1 = evaluate(corpus.windows, pretrained.checkpoint_path, "test",
                     (corpus.dir.path / "ev1").string());
  auto r2 = evaluate(corpus.windows, pretrained.checkpoint_path, "test",
                     (corpus.dir.path / "ev2").string());
  CHECK(r1.final_loss_total == r2.final_loss_total);
  CHECK(r1.auroc == r2.auroc);
  CHECK(std::isfinite(r1.final_loss_mse));

  SUBCASE("evaluate on the train split orders losses sensibly") {
    auto rt = evaluate(corpus.windows, pretrained.checkpoint_path, "train",
                       (corpus.dir.path / "ev3").string());
    CHECK(std::isfinite(rt.final_loss_total));
  }

  SUBCASE("empty split fails") {
    ingest::WindowsManifest train_only;
    for (const auto& e : corpus.windows.entries)
      if (e.split == "train") train_only.entries.push_back(e);
    CHECK_THROWS_AS(evaluate(train_only, pretrained.checkpoint_path, "test",
                             (corpus.dir.path / "ev4").string()),
                    DataError);
  }

  SUBCASE("single-class split reports an explicit undefined marker") {
    Corpus no_seiz(1, 1, 0, 40.0);  // zero seizure events anywhere
    TrainConfig p2;
    p2.batch_size = 2;
    p2.steps = 4;
    p2.eval_every = 2;
    auto pr = pretrain(no_seiz.windows, mcfg, p2, (no_seiz.dir.path / "pre").string());
    auto ev = evaluate(no_seiz.windows, pr.checkpoint_path, "test",
                       (no_seiz.dir.path / "ev").string());
    CHECK_FALSE(ev.auroc.has_value());
    CHECK(ev.auroc_undefined);
    const auto text = slurp(ev.report_path);
    CHECK(text.find("undefined") != std::string::npos);
  }
}
