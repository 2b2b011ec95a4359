#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "essm/errors.hpp"
#include "essm/interpret.hpp"
#include "support/test_util.hpp"

using namespace essm;
using namespace essm::interpret;
namespace fs = std::filesystem;

namespace {

model::ModelConfig small_config() {
  model::ModelConfig cfg;
  cfg.channels = 19;
  cfg.window_samples = 32;
  cfg.front_filters = 2;
  cfg.front_kernel = 7;
  cfg.d_model = 6;
  cfg.mamba_blocks_per_level = 1;
  cfg.ssm_state = 3;
  cfg.levels = 1;
  cfg.pool_factor = 4;
  cfg.level_dims = {6, 10};
  cfg.head_hidden = 5;
  cfg.spectral_pad = 32;
  return cfg;
}

}  // namespace

TEST_CASE("saliency: a channel the model cannot see has exactly zero importance") {
  auto cfg = small_config();
  Rng rng(701);
  auto params = model::init_model<double>(cfg, rng);
  // zero the channel-mix columns fed by channel 4's features
  const std::size_t blocked = 4;
  auto* w = params.channel_mix.weight.mutable_data();
  for (std::size_t row = 0; row < cfg.d_model; ++row)
    for (std::size_t f = 0; f < cfg.front_filters; ++f)
      w[row * (cfg.channels * cfg.front_filters) + blocked * cfg.front_filters + f] = 0.0;

  std::vector<double> window(cfg.channels * cfg.window_samples);
  for (auto& v : window) v = rng.uniform(-1, 1);
  auto map = channel_saliency<double>(window, params, cfg);
  CHECK(map.importance[blocked] == 0.0);
  // normalization contract: values in [0,1] with max exactly 1
  double peak = 0;
  for (double v : map.importance) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    peak = std::max(peak, v);
  }
  CHECK(peak == 1.0);
}

TEST_CASE("saliency gradient matches finite differences of the logit") {
  auto cfg = small_config();
  cfg.channels = 4;
  Rng rng(709);
  auto params = model::init_model<double>(cfg, rng);
  std::vector<double> window(cfg.channels * cfg.window_samples);
  for (auto& v : window) v = rng.uniform(-1, 1);
  auto map = channel_saliency<double>(window, params, cfg);

  const double h = 1e-5;
  Rng pick(711);
  double worst = 0;
  for (int probe = 0; probe < 40; ++probe) {
    const std::size_t i = pick.uniform_int(window.size());
    auto logit_at = [&](double delta) {
      auto modified = window;
      modified[i] += delta;
      NoGradGuard ng;
      auto x = TensorD::from_data({1, cfg.channels, cfg.window_samples}, modified);
      return model::classify_logit(x, params, cfg)[0];
    };
    const double fd = std::abs((logit_at(h) - logit_at(-h)) / (2 * h));
    const double an = map.saliency[i];
    const double rel = std::abs(fd - an) / std::max({fd, an, 1e-6});
    worst = std::max(worst, rel);
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("saliency requires a classification head") {
  auto cfg = small_config();
  Rng rng(719);
  auto params = model::init_model<double>(cfg, rng);
  params.cls_head.fc1.weight = TensorD();
  std::vector<double> window(cfg.channels * cfg.window_samples, 0.1);
  CHECK_THROWS_AS(channel_saliency<double>(window, params, cfg), DataError);
}

TEST_CASE("filter_spectra: constructed kernels land on their frequencies") {
  model::ModelParams<double> params;
  const std::size_t k = 100;
  SUBCASE("10 Hz cosine kernel peaks near 10 Hz") {
    std::vector<double> w(k);
    for (std::size_t t = 0; t < k; ++t)
      w[t] = std::cos(2.0 * M_PI * 10.0 * static_cast<double>(t) / 200.0);
    params.front_conv.weight = TensorD::from_data({1, 1, k}, w);
    auto spectra = filter_spectra(params);
    REQUIRE(spectra.size() == 1);
    CHECK(std::abs(spectra[0].peak_hz - 10.0) <= 200.0 / 256.0 + 1e-9);
    CHECK(spectra[0].magnitude.size() == 129);
  }
  SUBCASE("impulse kernel is flat") {
    std::vector<double> w(k, 0.0);
    w[0] = 1.0;
    params.front_conv.weight = TensorD::from_data({1, 1, k}, w);
    auto spectra = filter_spectra(params);
    double lo = 1e300, hi = 0;
    for (double m : spectra[0].magnitude) {
      lo = std::min(lo, m);
      hi = std::max(hi, m);
    }
    CHECK(hi / lo < 1.01);
  }
  SUBCASE("constant kernel peaks at DC") {
    params.front_conv.weight = TensorD::from_data({1, 1, k}, std::vector<double>(k, 0.3));
    auto spectra = filter_spectra(params);
    CHECK(spectra[0].peak_hz == 0.0);
  }
}

TEST_CASE("filter_spectra is a pure function of the checkpoint weights") {
  auto cfg = small_config();
  Rng rng(727);
  auto params = model::init_model<double>(cfg, rng);
  auto a = filter_spectra(params);
  auto b = filter_spectra(params);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].peak_hz == b[i].peak_hz);
    CHECK(a[i].magnitude == b[i].magnitude);
  }
}

TEST_CASE("export_saliency: JSON round-trip, canonical channel order, deterministic bytes") {
  auto cfg = small_config();
  Rng rng(733);
  auto params = model::init_model<double>(cfg, rng);
  std::vector<double> window(cfg.channels * cfg.window_samples);
  for (auto& v : window) v = rng.uniform(-1, 1);
  auto map = channel_saliency<double>(window, params, cfg);
  map.record_id = "rec7";
  map.start_time = 30.0;

  const auto dir = fs::temp_directory_path() / "essm_interp_test";
  fs::create_directories(dir);
  const std::string jpath = (dir / "saliency.json").string();
  const std::string cpath = (dir / "saliency.csv").string();
  export_saliency(map, jpath, cpath);

  std::ifstream is(jpath);
  nlohmann::json j;
  is >> j;
  REQUIRE(j["channels"].size() == 19);
  CHECK(j["channels"][0] == "FP1");
  CHECK(j["channels"][18] == "PZ");
  CHECK(j["importance"].size() == 19);
  CHECK(j["record"] == "rec7");
  CHECK(j["prediction"].get<double>() == doctest::Approx(map.probability));

  // deterministic bytes
  const std::string jpath2 = (dir / "saliency2.json").string();
  export_saliency(map, jpath2);
  std::ifstream a(jpath), b(jpath2);
  std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
  std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
  CHECK(sa == sb);

  std::ifstream cs(cpath);
  std::size_t rows = 0;
  std::string line;
  while (std::getline(cs, line)) ++rows;
  CHECK(rows == 19);
  fs::remove_all(dir);
}
