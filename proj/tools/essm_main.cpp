// essm command-line interface: synthetic fixtures, preprocessing, the
// two-stage training protocol, evaluation, and interpretability exports.
//
// Exit codes: 0 success, 2 configuration error, 3 data error,
// 4 numerical abort, 1 anything else.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "essm/errors.hpp"
#include "essm/ingest.hpp"
#include "essm/interpret.hpp"
#include "essm/model.hpp"
#include "essm/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using essm::ConfigError;
using essm::DataError;
using essm::NumericError;

namespace {

struct CommonArgs {
  std::string out;
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

json load_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open " + path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config: invalid JSON in " + path + ": " + e.what());
  }
  return j;
}

/// Applies {"model": {...}, "train": {...}} onto the configs; unknown keys
/// are configuration errors.
void apply_config_json(const json& j, essm::model::ModelConfig& mcfg,
                       essm::train::TrainConfig& tcfg) {
  auto apply = [](const json& section, auto& cfg, auto visit, const char* what) {
    if (section.is_null()) return;
    if (!section.is_object())
      throw ConfigError(std::string("config: '") + what + "' must be an object");
    std::map<std::string, std::function<void(const json&)>> setters;
    visit(cfg, [&setters](const char* name, auto& field) {
      setters[name] = [&field](const json& v) {
        try {
          field = v.get<std::decay_t<decltype(field)>>();
        } catch (const json::exception&) {
          throw ConfigError("config: bad value type");
        }
      };
    });
    for (auto it = section.begin(); it != section.end(); ++it) {
      auto s = setters.find(it.key());
      if (s == setters.end())
        throw ConfigError(std::string("config: unknown ") + what + " field '" + it.key() + "'");
      try {
        s->second(it.value());
      } catch (const ConfigError&) {
        throw ConfigError(std::string("config: bad value for ") + what + " field '" +
                          it.key() + "'");
      }
    }
  };
  apply(j.value("model", json()), mcfg,
        [](auto& c, auto f) { essm::model::visit_config_fields(c, f); }, "model");
  apply(j.value("train", json()), tcfg,
        [](auto& c, auto f) { essm::train::visit_train_fields(c, f); }, "train");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (it.key() != "model" && it.key() != "train")
      throw ConfigError("config: unknown top-level key '" + it.key() + "'");
}

json config_to_json(const essm::model::ModelConfig& mcfg,
                    const essm::train::TrainConfig& tcfg) {
  json jm, jt;
  essm::model::visit_config_fields(const_cast<essm::model::ModelConfig&>(mcfg),
                                   [&jm](const char* n, auto& v) { jm[n] = v; });
  essm::train::visit_train_fields(const_cast<essm::train::TrainConfig&>(tcfg),
                                  [&jt](const char* n, auto& v) { jt[n] = v; });
  return json{{"model", jm}, {"train", jt}};
}

/// Every command records the exact inputs needed to reproduce it.
void write_effective_config(const std::string& out_dir, const std::string& command,
                            const json& args, const essm::model::ModelConfig& mcfg,
                            const essm::train::TrainConfig& tcfg) {
  fs::create_directories(out_dir);
  json j;
  j["command"] = command;
  j["args"] = args;
  j["config"] = config_to_json(mcfg, tcfg);
  std::ofstream os(fs::path(out_dir) / "effective_config.json");
  if (!os) throw DataError("cannot write effective_config.json under " + out_dir);
  os << j.dump(2) << "\n";
}

void load_configs(const CommonArgs& common, essm::model::ModelConfig& mcfg,
                  essm::train::TrainConfig& tcfg) {
  if (!common.config_path.empty())
    apply_config_json(load_json_file(common.config_path), mcfg, tcfg);
  if (common.seed_set) tcfg.seed = common.seed;
}

void add_common(CLI::App* cmd, CommonArgs& common, bool with_config = true) {
  cmd->add_option("--out", common.out, "Output directory for all artifacts")->required();
  cmd->add_option("--seed", common.seed, "PRNG seed (overrides the config file)")
      ->each([&common](const std::string&) { common.seed_set = true; });
  if (with_config)
    cmd->add_option("--config", common.config_path,
                    "JSON config file with optional 'model' and 'train' sections");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "essm: selective state-space EEG modeling toolkit.\n"
      "Pipeline: synth -> preprocess -> pretrain -> finetune -> eval;\n"
      "interpretability via the saliency and filters commands.\n"
      "EEG_SSM_THREADS caps worker threads (preprocessing, parallel scan)."};
  app.require_subcommand(1);

  // ---- synth ----
  CommonArgs synth_common;
  essm::ingest::SynthOptions synth_opts;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic EDF+CSV fixture corpus");
  add_common(synth, synth_common, false);
  synth->add_option("--patients", synth_opts.train_patients, "Training patients")
      ->capture_default_str();
  synth->add_option("--test-patients", synth_opts.test_patients, "Held-out test patients")
      ->capture_default_str();
  synth->add_option("--records-per-patient", synth_opts.records_per_patient, "Records per patient")
      ->capture_default_str();
  synth->add_option("--duration", synth_opts.duration_s, "Record duration in seconds")
      ->capture_default_str();
  synth->add_option("--fs", synth_opts.fs, "Native sampling rate in Hz")
      ->capture_default_str();
  synth->add_option("--seizure-events", synth_opts.seizure_events, "Seizure events per record")
      ->capture_default_str();

  // ---- preprocess ----
  CommonArgs prep_common;
  std::string prep_manifest;
  auto* prep = app.add_subcommand("preprocess",
                                  "Parse, resample, notch, window, and cache a corpus");
  add_common(prep, prep_common, false);
  prep->add_option("--manifest", prep_manifest, "Record manifest (from synth or hand-written)")
      ->required();

  // ---- pretrain ----
  CommonArgs pre_common;
  std::string pre_manifest;
  essm::train::TrainConfig pre_overrides;
  bool ablate_spectral = false;
  bool pre_steps_set = false, pre_bs_set = false, pre_lr_set = false, pre_lambda_set = false,
       pre_mask_set = false, pre_ee_set = false;
  auto* pre = app.add_subcommand("pretrain", "Self-supervised reconstruction pretraining");
  add_common(pre, pre_common);
  pre->add_option("--manifest", pre_manifest, "Windows manifest (from preprocess)")->required();
  pre->add_option("--steps", pre_overrides.steps, "Optimizer steps")
      ->each([&](const std::string&) { pre_steps_set = true; });
  pre->add_option("--batch-size", pre_overrides.batch_size, "Batch size")
      ->each([&](const std::string&) { pre_bs_set = true; });
  pre->add_option("--lr", pre_overrides.lr, "Adam learning rate")
      ->each([&](const std::string&) { pre_lr_set = true; });
  pre->add_option("--lambda-spectral", pre_overrides.lambda_spectral, "Spectral loss weight")
      ->each([&](const std::string&) { pre_lambda_set = true; });
  pre->add_option("--mask-prob", pre_overrides.mask_channels_prob,
                  "Masked-channel augmentation probability")
      ->each([&](const std::string&) { pre_mask_set = true; });
  pre->add_option("--eval-every", pre_overrides.eval_every, "Validation cadence in steps")
      ->each([&](const std::string&) { pre_ee_set = true; });
  pre->add_flag("--ablate-spectral", ablate_spectral,
                "Run both arms (with and without the spectral loss) and emit one report");

  // ---- finetune ----
  CommonArgs ft_common;
  std::string ft_manifest, ft_checkpoint;
  essm::train::TrainConfig ft_overrides;
  bool compare_scratch = false, ft_freeze = false, ft_scratch = false;
  bool ft_steps_set = false, ft_bs_set = false, ft_lr_set = false, ft_ee_set = false;
  auto* ft = app.add_subcommand("finetune", "Seizure-detection fine-tuning");
  add_common(ft, ft_common);
  ft->add_option("--manifest", ft_manifest, "Windows manifest (from preprocess)")->required();
  ft->add_option("--checkpoint", ft_checkpoint, "Pretrained checkpoint to start from");
  ft->add_option("--steps", ft_overrides.steps, "Optimizer steps")
      ->each([&](const std::string&) { ft_steps_set = true; });
  ft->add_option("--batch-size", ft_overrides.batch_size, "Batch size")
      ->each([&](const std::string&) { ft_bs_set = true; });
  ft->add_option("--lr", ft_overrides.lr, "Adam learning rate")
      ->each([&](const std::string&) { ft_lr_set = true; });
  ft->add_option("--eval-every", ft_overrides.eval_every, "Validation cadence in steps")
      ->each([&](const std::string&) { ft_ee_set = true; });
  ft->add_flag("--freeze-encoder", ft_freeze, "Update only the classification head");
  ft->add_flag("--from-scratch", ft_scratch, "Ignore any checkpoint and train from scratch");
  ft->add_flag("--compare-scratch", compare_scratch,
               "Run pretrained and from-scratch arms and emit one comparative report");

  // ---- eval ----
  CommonArgs ev_common;
  std::string ev_manifest, ev_checkpoint, ev_split = "test";
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on one split (no updates)");
  add_common(ev, ev_common, false);
  ev->add_option("--manifest", ev_manifest, "Windows manifest (from preprocess)")->required();
  ev->add_option("--checkpoint", ev_checkpoint, "Checkpoint to evaluate")->required();
  ev->add_option("--split", ev_split, "Split to evaluate: train or test")
      ->check(CLI::IsMember({"train", "test"}))
      ->capture_default_str();

  // ---- saliency ----
  CommonArgs sal_common;
  std::string sal_checkpoint, sal_cache;
  std::size_t sal_index = 0;
  bool sal_csv = false;
  auto* sal = app.add_subcommand("saliency", "Channel-wise saliency for one cached window");
  add_common(sal, sal_common, false);
  sal->add_option("--checkpoint", sal_checkpoint, "Fine-tuned checkpoint")->required();
  sal->add_option("--cache", sal_cache, "Window cache file (.ewin)")->required();
  sal->add_option("--window-index", sal_index, "Window index within the cache")
      ->capture_default_str();
  sal->add_flag("--csv", sal_csv, "Also export the raw per-sample saliency as CSV");

  // ---- filters ----
  CommonArgs fil_common;
  std::string fil_checkpoint;
  auto* fil = app.add_subcommand("filters",
                                 "Magnitude spectra of the learned front-end filters");
  add_common(fil, fil_common, false);
  fil->add_option("--checkpoint", fil_checkpoint, "Checkpoint to inspect")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*synth) {
      synth_opts.seed = synth_common.seed;
      essm::model::ModelConfig mcfg;
      essm::train::TrainConfig tcfg;
      tcfg.seed = synth_common.seed;
      json args{{"patients", synth_opts.train_patients},
                {"test_patients", synth_opts.test_patients},
                {"records_per_patient", synth_opts.records_per_patient},
                {"duration", synth_opts.duration_s},
                {"fs", synth_opts.fs},
                {"seizure_events", synth_opts.seizure_events},
                {"seed", synth_opts.seed}};
      write_effective_config(synth_common.out, "synth", args, mcfg, tcfg);
      const auto manifest = essm::ingest::make_synth_corpus(synth_common.out, synth_opts);
      std::cout << "synth: wrote " << manifest << "\n";
    } else if (*prep) {
      essm::model::ModelConfig mcfg;
      essm::train::TrainConfig tcfg;
      write_effective_config(prep_common.out, "preprocess", json{{"manifest", prep_manifest}},
                             mcfg, tcfg);
      auto manifest = essm::ingest::load_manifest(prep_manifest);
      auto wm = essm::ingest::preprocess_manifest(manifest, prep_common.out);
      std::size_t windows = 0, seizures = 0;
      for (const auto& e : wm.entries) {
        windows += e.count;
        seizures += e.seizure;
      }
      std::cout << "preprocess: " << wm.entries.size() << " records, " << windows
                << " windows (" << seizures << " seizure) -> " << prep_common.out
                << "/windows_manifest.json\n";
    } else if (*pre) {
      essm::model::ModelConfig mcfg;
      essm::train::TrainConfig tcfg;
      load_configs(pre_common, mcfg, tcfg);
      if (pre_steps_set) tcfg.steps = pre_overrides.steps;
      if (pre_bs_set) tcfg.batch_size = pre_overrides.batch_size;
      if (pre_lr_set) tcfg.lr = pre_overrides.lr;
      if (pre_lambda_set) tcfg.lambda_spectral = pre_overrides.lambda_spectral;
      if (pre_mask_set) tcfg.mask_channels_prob = pre_overrides.mask_channels_prob;
      if (pre_ee_set) tcfg.eval_every = pre_overrides.eval_every;
      json args{{"manifest", pre_manifest}, {"ablate_spectral", ablate_spectral}};
      write_effective_config(pre_common.out, "pretrain", args, mcfg, tcfg);
      auto wm = essm::ingest::load_windows_manifest(pre_manifest);
      if (ablate_spectral) {
        auto rep = essm::train::spectral_ablation(wm, mcfg, tcfg, pre_common.out);
        std::cout << "pretrain ablation: with spectral MSE=" << rep.with_spectral.final_loss_mse
                  << ", without MSE=" << rep.without_spectral.final_loss_mse << " -> "
                  << rep.report_path << "\n";
      } else {
        auto rep = essm::train::pretrain(wm, mcfg, tcfg, pre_common.out);
        std::cout << "pretrain: train MSE=" << rep.final_loss_mse
                  << " total=" << rep.final_loss_total << " checkpoint=" << rep.checkpoint_path
                  << "\n";
      }
    } else if (*ft) {
      essm::model::ModelConfig mcfg;
      essm::train::TrainConfig tcfg;
      load_configs(ft_common, mcfg, tcfg);
      if (ft_steps_set) tcfg.steps = ft_overrides.steps;
      if (ft_bs_set) tcfg.batch_size = ft_overrides.batch_size;
      if (ft_lr_set) tcfg.lr = ft_overrides.lr;
      if (ft_ee_set) tcfg.eval_every = ft_overrides.eval_every;
      tcfg.freeze_encoder = ft_freeze;
      tcfg.from_scratch = ft_scratch;
      json args{{"manifest", ft_manifest},
                {"checkpoint", ft_checkpoint},
                {"compare_scratch", compare_scratch}};
      write_effective_config(ft_common.out, "finetune", args, mcfg, tcfg);
      auto wm = essm::ingest::load_windows_manifest(ft_manifest);
      auto print_auroc = [](const essm::train::RunReport& r) {
        return r.auroc ? std::to_string(*r.auroc) : std::string("undefined");
      };
      if (compare_scratch) {
        if (ft_checkpoint.empty())
          throw ConfigError("finetune: --compare-scratch requires --checkpoint");
        auto rep = essm::train::scratch_comparison(wm, ft_checkpoint, mcfg, tcfg, ft_common.out);
        std::cout << "finetune comparison: pretrained AUROC=" << print_auroc(rep.pretrained)
                  << ", from-scratch AUROC=" << print_auroc(rep.from_scratch) << " -> "
                  << rep.report_path << "\n";
      } else {
        auto rep = essm::train::finetune(wm, ft_checkpoint, mcfg, tcfg, ft_common.out);
        std::cout << "finetune: held-out AUROC=" << print_auroc(rep)
                  << " checkpoint=" << rep.checkpoint_path << "\n";
      }
    } else if (*ev) {
      essm::model::ModelConfig mcfg;
      essm::train::TrainConfig tcfg;
      json args{{"manifest", ev_manifest}, {"checkpoint", ev_checkpoint}, {"split", ev_split}};
      write_effective_config(ev_common.out, "eval", args, mcfg, tcfg);
      auto wm = essm::ingest::load_windows_manifest(ev_manifest);
      auto rep = essm::train::evaluate(wm, ev_checkpoint, ev_split, ev_common.out);
      std::cout << "eval[" << ev_split << "]: MSE=" << rep.final_loss_mse << " AUROC="
                << (rep.auroc ? std::to_string(*rep.auroc) : std::string("undefined"))
                << " -> " << rep.report_path << "\n";
    } else if (*sal) {
      essm::model::ModelConfig mcfg;
      essm::train::TrainConfig tcfg;
      json args{{"checkpoint", sal_checkpoint},
                {"cache", sal_cache},
                {"window_index", sal_index},
                {"csv", sal_csv}};
      write_effective_config(sal_common.out, "saliency", args, mcfg, tcfg);
      auto windows = essm::ingest::load_window_cache(sal_cache);
      if (sal_index >= windows.size())
        throw ConfigError("saliency: --window-index " + std::to_string(sal_index) +
                          " out of range (cache has " + std::to_string(windows.size()) +
                          " windows)");
      auto [cfg, params] = essm::model::load_checkpoint(sal_checkpoint);
      auto map = essm::interpret::window_saliency(windows[sal_index], params, cfg);
      const std::string jpath = (fs::path(sal_common.out) / "saliency.json").string();
      const std::string cpath =
          sal_csv ? (fs::path(sal_common.out) / "saliency.csv").string() : "";
      essm::interpret::export_saliency(map, jpath, cpath);
      std::cout << "saliency: window " << sal_index << " p(seizure)=" << map.probability
                << " -> " << jpath << "\n";
    } else if (*fil) {
      essm::model::ModelConfig mcfg;
      essm::train::TrainConfig tcfg;
      write_effective_config(fil_common.out, "filters", json{{"checkpoint", fil_checkpoint}},
                             mcfg, tcfg);
      auto [cfg, params] = essm::model::load_checkpoint(fil_checkpoint);
      auto spectra = essm::interpret::filter_spectra(params);
      const std::string jpath = (fs::path(fil_common.out) / "filters.json").string();
      essm::interpret::export_filter_spectra(spectra, jpath);
      std::cout << "filters: " << spectra.size() << " spectra -> " << jpath << "\n";
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return 4;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
