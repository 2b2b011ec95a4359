#include "essm/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <set>

#include "essm/errors.hpp"
#include "essm/losses.hpp"

namespace essm::train {

namespace fs = std::filesystem;
using nlohmann::json;
using model::ModelConfig;
using model::ModelParams;

void TrainConfig::validate() const {
  if (batch_size == 0 || steps == 0) throw ConfigError("train config: batch_size and steps must be positive");
  if (lr <= 0) throw ConfigError("train config: lr must be positive");
  if (lambda_spectral < 0) throw ConfigError("train config: lambda_spectral must be >= 0");
  if (mask_channels_prob < 0 || mask_channels_prob >= 1)
    throw ConfigError("train config: mask_channels_prob must lie in [0,1)");
  if (eval_every == 0) throw ConfigError("train config: eval_every must be positive");
  if (val_fraction < 0 || val_fraction >= 1)
    throw ConfigError("train config: val_fraction must lie in [0,1)");
  if (lr_decay_factor <= 0 || lr_decay_factor > 1)
    throw ConfigError("train config: lr_decay_factor must lie in (0,1]");
}

namespace {

struct LabeledWindows {
  std::vector<ingest::Window> windows;
  std::vector<std::string> patients;  // per window
};

LabeledWindows load_split(const ingest::WindowsManifest& manifest, const std::string& split) {
  LabeledWindows out;
  for (const auto& e : manifest.entries) {
    if (e.split != split) continue;
    auto windows = ingest::load_window_cache(e.cache_path);
    for (auto& w : windows) {
      out.windows.push_back(std::move(w));
      out.patients.push_back(e.patient);
    }
  }
  return out;
}

void check_split_disjoint(const ingest::WindowsManifest& manifest) {
  std::set<std::string> train, test;
  for (const auto& e : manifest.entries)
    (e.split == "train" ? train : test).insert(e.patient);
  for (const auto& p : train)
    if (test.count(p))
      throw DataError("train/test splits share patient '" + p + "'");
}

/// Deterministic validation split: sorted unique patients, seeded shuffle,
/// first ceil(fraction * n) become validation (never all of them).
std::set<std::string> pick_val_patients(const std::vector<std::string>& per_window,
                                        double fraction, Rng& rng) {
  std::vector<std::string> uniq(per_window.begin(), per_window.end());
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  if (uniq.size() < 2 || fraction <= 0) return {};
  std::size_t take = static_cast<std::size_t>(
      std::ceil(fraction * static_cast<double>(uniq.size())));
  take = std::min(take, uniq.size() - 1);
  for (std::size_t i = uniq.size(); i-- > 1;)
    std::swap(uniq[i], uniq[rng.uniform_int(i + 1)]);
  return {uniq.begin(), uniq.begin() + static_cast<std::ptrdiff_t>(take)};
}

TensorF stack_windows(const std::vector<ingest::Window>& windows,
                      const std::vector<std::size_t>& idx) {
  const std::size_t per = ingest::kNumChannels * ingest::kWindowSamples;
  std::vector<float> data(idx.size() * per);
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy(windows[idx[i]].data.begin(), windows[idx[i]].data.end(),
              data.begin() + static_cast<std::ptrdiff_t>(i * per));
  return TensorF::from_data({idx.size(), ingest::kNumChannels, ingest::kWindowSamples},
                            std::move(data));
}

TensorF stack_labels(const std::vector<ingest::Window>& windows,
                     const std::vector<std::size_t>& idx) {
  std::vector<float> labels(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i)
    labels[i] = static_cast<float>(windows[idx[i]].label);
  return TensorF::from_data({idx.size()}, std::move(labels));
}

struct ReconEval {
  double mse = 0, spec = 0, total = 0;
};

ReconEval eval_reconstruction(const std::vector<ingest::Window>& windows,
                              const std::vector<std::size_t>& idx,
                              ModelParams<float>& params, const ModelConfig& cfg,
                              const loss::LossConfig& lcfg, std::size_t batch) {
  NoGradGuard ng;
  ReconEval acc;
  std::size_t done = 0;
  for (std::size_t at = 0; at < idx.size(); at += batch) {
    std::vector<std::size_t> chunk(idx.begin() + static_cast<std::ptrdiff_t>(at),
                                   idx.begin() + static_cast<std::ptrdiff_t>(
                                                     std::min(idx.size(), at + batch)));
    auto x = stack_windows(windows, chunk);
    auto pred = model::reconstruct(x, params, cfg);
    const double m = loss::mse_loss(pred, x).item();
    const double s = loss::spectral_loss(pred, x, lcfg).item();
    acc.mse += m * static_cast<double>(chunk.size());
    acc.spec += s * static_cast<double>(chunk.size());
    done += chunk.size();
  }
  if (done) {
    acc.mse /= static_cast<double>(done);
    acc.spec /= static_cast<double>(done);
  }
  acc.total = acc.mse + lcfg.lambda_spectral * acc.spec;
  return acc;
}

double eval_bce(const std::vector<ingest::Window>& windows,
                const std::vector<std::size_t>& idx, ModelParams<float>& params,
                const ModelConfig& cfg, std::size_t batch) {
  NoGradGuard ng;
  double acc = 0;
  for (std::size_t at = 0; at < idx.size(); at += batch) {
    std::vector<std::size_t> chunk(idx.begin() + static_cast<std::ptrdiff_t>(at),
                                   idx.begin() + static_cast<std::ptrdiff_t>(
                                                     std::min(idx.size(), at + batch)));
    auto x = stack_windows(windows, chunk);
    auto y = stack_labels(windows, chunk);
    acc += loss::bce_loss(model::classify(x, params, cfg), y).item() *
           static_cast<double>(chunk.size());
  }
  return idx.empty() ? 0.0 : acc / static_cast<double>(idx.size());
}

std::pair<std::optional<double>, bool> eval_auroc(
    const std::vector<ingest::Window>& windows, const std::vector<std::size_t>& idx,
    ModelParams<float>& params, const ModelConfig& cfg, std::size_t batch) {
  NoGradGuard ng;
  std::vector<double> scores;
  std::vector<int> labels;
  for (std::size_t at = 0; at < idx.size(); at += batch) {
    std::vector<std::size_t> chunk(idx.begin() + static_cast<std::ptrdiff_t>(at),
                                   idx.begin() + static_cast<std::ptrdiff_t>(
                                                     std::min(idx.size(), at + batch)));
    auto prob = model::classify(stack_windows(windows, chunk), params, cfg);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      scores.push_back(static_cast<double>(prob[i]));
      labels.push_back(windows[chunk[i]].label);
    }
  }
  try {
    return {loss::auroc(scores, labels), false};
  } catch (const NumericError&) {
    return {std::nullopt, true};  // single-class split: undefined
  }
}

std::string jnum(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

json config_echo(const ModelConfig& mcfg, const TrainConfig& tcfg) {
  json jm, jt;
  auto write = [](json& dst) {
    return [&dst](const char* name, auto& v) { dst[name] = v; };
  };
  model::visit_config_fields(const_cast<ModelConfig&>(mcfg), write(jm));
  visit_train_fields(const_cast<TrainConfig&>(tcfg), write(jt));
  return json{{"model", jm}, {"train", jt}};
}

void write_report_json(const std::string& path, const json& j) {
  std::ofstream os(path);
  if (!os) throw DataError("report: cannot open " + path + " for writing");
  os << j.dump(2) << "\n";
}

json report_to_json(const RunReport& r, const json& echo) {
  json j;
  j["final_loss_mse"] = r.final_loss_mse;
  j["final_loss_spec"] = r.final_loss_spec;
  j["final_loss_total"] = r.final_loss_total;
  if (r.auroc.has_value())
    j["auroc"] = *r.auroc;
  else if (r.auroc_undefined)
    j["auroc"] = "undefined";
  j["metrics"] = r.metrics_path;
  j["checkpoint"] = r.checkpoint_path;
  j["config"] = echo;
  return j;
}

/// Epoch-shuffled index stream.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, Rng rng) : n_(n), rng_(rng) { refill(); }

  std::vector<std::size_t> next(std::size_t batch) {
    std::vector<std::size_t> out;
    out.reserve(batch);
    while (out.size() < batch) {
      if (cursor_ == order_.size()) refill();
      out.push_back(order_[cursor_++]);
    }
    return out;
  }

 private:
  void refill() {
    order_.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) order_[i] = i;
    for (std::size_t i = n_; i-- > 1;) std::swap(order_[i], order_[rng_.uniform_int(i + 1)]);
    cursor_ = 0;
  }
  std::size_t n_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

void check_finite_loss(double v, std::size_t step) {
  if (!std::isfinite(v))
    throw NumericError("non-finite loss at step " + std::to_string(step));
}

/// Forwards NumericErrors from inside a training step with the step index.
template <typename F>
auto at_step(std::size_t step, F&& f) {
  try {
    return f();
  } catch (const NumericError& e) {
    throw NumericError(std::string(e.what()) + " at step " + std::to_string(step));
  }
}

}  // namespace

TensorF mask_channels(const TensorF& x, double prob, Rng& rng) {
  if (prob < 0 || prob >= 1) throw ConfigError("mask_channels: prob must lie in [0,1)");
  if (x.rank() != 3) throw ShapeError("mask_channels: expected (B,C,T)");
  if (prob == 0) return x;
  const std::size_t batch = x.extent(0), ch = x.extent(1), steps = x.extent(2);
  auto data = x.to_vector();
  std::vector<bool> drop(ch);
  for (std::size_t b = 0; b < batch; ++b) {
    for (;;) {
      bool all = true;
      for (std::size_t c = 0; c < ch; ++c) {
        drop[c] = rng.bernoulli(prob);
        all = all && drop[c];
      }
      if (!all) break;  // at least one channel must survive
    }
    for (std::size_t c = 0; c < ch; ++c) {
      if (!drop[c]) continue;
      std::fill(data.begin() + static_cast<std::ptrdiff_t>((b * ch + c) * steps),
                data.begin() + static_cast<std::ptrdiff_t>((b * ch + c + 1) * steps), 0.0f);
    }
  }
  return TensorF::from_data(x.shape(), std::move(data));
}

RunReport pretrain(const ingest::WindowsManifest& manifest, const ModelConfig& mcfg,
                   const TrainConfig& tcfg, const std::string& out_dir) {
  mcfg.validate();
  tcfg.validate();
  check_split_disjoint(manifest);
  fs::create_directories(out_dir);

  auto data = load_split(manifest, "train");
  if (data.windows.empty()) throw DataError("pretrain: no training windows in manifest");

  Rng root(tcfg.seed);
  Rng init_rng = root.fork(1);
  Rng shuffle_rng = root.fork(2);
  Rng val_rng = root.fork(3);
  Rng mask_rng = root.fork(4);

  const auto val_patients = pick_val_patients(data.patients, tcfg.val_fraction, val_rng);
  std::vector<std::size_t> train_idx, val_idx;
  for (std::size_t i = 0; i < data.windows.size(); ++i)
    (val_patients.count(data.patients[i]) ? val_idx : train_idx).push_back(i);
  if (train_idx.empty()) throw DataError("pretrain: validation split consumed all patients");

  auto params = model::init_model<float>(mcfg, init_rng);
  auto leaves = model::collect_params(params);
  loss::AdamConfig acfg;
  acfg.lr = tcfg.lr;
  auto adam = loss::make_adam(leaves, acfg);
  const auto lcfg = loss::LossConfig::with_pad(mcfg.spectral_pad, tcfg.lambda_spectral);

  const std::string metrics_path = (fs::path(out_dir) / "metrics.jsonl").string();
  std::ofstream log(metrics_path);
  if (!log) throw DataError("pretrain: cannot open " + metrics_path);

  const std::string best_path = (fs::path(out_dir) / "checkpoint_best.essm").string();
  const std::string final_path = (fs::path(out_dir) / "checkpoint_final.essm").string();
  double best_val = std::numeric_limits<double>::infinity();
  bool have_best = false;
  std::size_t bad_evals = 0;

  BatchSampler sampler(train_idx.size(), shuffle_rng);
  for (std::size_t step = 1; step <= tcfg.steps; ++step) {
    auto picks = sampler.next(tcfg.batch_size);
    std::vector<std::size_t> batch_idx;
    batch_idx.reserve(picks.size());
    for (auto p : picks) batch_idx.push_back(train_idx[p]);

    auto target = stack_windows(data.windows, batch_idx);
    auto input = tcfg.mask_channels_prob > 0
                     ? mask_channels(target, tcfg.mask_channels_prob, mask_rng)
                     : target;

    auto pred = at_step(step, [&] { return model::reconstruct(input, params, mcfg); });
    auto mse = loss::mse_loss(pred, target);
    auto total = mse;
    double spec_v = 0.0;
    if (tcfg.lambda_spectral > 0) {
      auto spec = loss::spectral_loss(pred, target, lcfg);
      spec_v = spec.item();
      total = add(mse, mul(spec, TensorF::scalar(static_cast<float>(tcfg.lambda_spectral))));
    }
    const double total_v = total.item();
    check_finite_loss(total_v, step);
    total.backward();
    loss::adam_step(leaves, adam);
    if (tcfg.lr_decay_every && step % tcfg.lr_decay_every == 0)
      adam.config.lr *= tcfg.lr_decay_factor;

    log << "{\"step\":" << step << ",\"loss_mse\":" << jnum(mse.item())
        << ",\"loss_spec\":" << jnum(spec_v) << ",\"loss_total\":" << jnum(total_v)
        << "}\n";

    if (step % tcfg.eval_every == 0 && !val_idx.empty()) {
      const auto ev = at_step(step, [&] {
        return eval_reconstruction(data.windows, val_idx, params, mcfg, lcfg,
                                   tcfg.batch_size);
      });
      check_finite_loss(ev.total, step);
      if (ev.total < best_val) {
        best_val = ev.total;
        have_best = true;
        bad_evals = 0;
        model::save_checkpoint(best_path, mcfg, params);
      } else if (++bad_evals >= tcfg.patience) {
        break;  // validation plateau
      }
    }
  }
  model::save_checkpoint(final_path, mcfg, params);
  if (!have_best) {
    fs::copy_file(final_path, best_path, fs::copy_options::overwrite_existing);
  }

  // Report training-split reconstruction quality of the selected checkpoint.
  auto [best_cfg, best_params] = model::load_checkpoint(best_path);
  const auto ev = eval_reconstruction(data.windows, train_idx, best_params, best_cfg, lcfg,
                                      tcfg.batch_size);
  RunReport report;
  report.final_loss_mse = ev.mse;
  report.final_loss_spec = ev.spec;
  report.final_loss_total = ev.total;
  report.metrics_path = metrics_path;
  report.checkpoint_path = best_path;
  report.report_path = (fs::path(out_dir) / "report.json").string();
  write_report_json(report.report_path, report_to_json(report, config_echo(mcfg, tcfg)));
  return report;
}

RunReport finetune(const ingest::WindowsManifest& manifest, const std::string& checkpoint,
                   const ModelConfig& mcfg, const TrainConfig& tcfg,
                   const std::string& out_dir) {
  tcfg.validate();
  check_split_disjoint(manifest);
  fs::create_directories(out_dir);

  auto data = load_split(manifest, "train");
  if (data.windows.empty()) throw DataError("finetune: no training windows in manifest");
  auto test_data = load_split(manifest, "test");

  Rng root(tcfg.seed);
  Rng init_rng = root.fork(11);
  Rng shuffle_rng = root.fork(12);
  Rng val_rng = root.fork(13);

  ModelConfig cfg = mcfg;
  ModelParams<float> params = [&] {
    if (tcfg.from_scratch) {
      cfg.validate();
      return model::init_model<float>(cfg, init_rng);
    }
    if (checkpoint.empty())
      throw ConfigError("finetune: --checkpoint required unless from_scratch is set");
    auto [ck_cfg, ck_params] = model::load_checkpoint(checkpoint);
    cfg = ck_cfg;
    return std::move(ck_params);
  }();

  const auto val_patients = pick_val_patients(data.patients, tcfg.val_fraction, val_rng);
  std::vector<std::size_t> train_idx, val_idx;
  for (std::size_t i = 0; i < data.windows.size(); ++i)
    (val_patients.count(data.patients[i]) ? val_idx : train_idx).push_back(i);
  if (train_idx.empty()) throw DataError("finetune: validation split consumed all patients");

  // Balanced batches: detection labels are rare, so seizure windows are
  // oversampled to half of every batch.
  std::vector<std::size_t> pos, negs;
  for (auto i : train_idx) (data.windows[i].label ? pos : negs).push_back(i);
  if (pos.empty() || negs.empty())
    throw DataError("finetune: training split needs both seizure and background windows");

  auto leaves = tcfg.freeze_encoder ? model::collect_cls_params(params)
                                    : model::collect_params(params);
  loss::AdamConfig acfg;
  acfg.lr = tcfg.lr;
  auto adam = loss::make_adam(leaves, acfg);

  const std::string metrics_path = (fs::path(out_dir) / "metrics.jsonl").string();
  std::ofstream log(metrics_path);
  if (!log) throw DataError("finetune: cannot open " + metrics_path);

  const std::string best_path = (fs::path(out_dir) / "checkpoint_best.essm").string();
  const std::string final_path = (fs::path(out_dir) / "checkpoint_final.essm").string();
  double best_val = std::numeric_limits<double>::infinity();
  bool have_best = false;
  std::size_t bad_evals = 0;

  for (std::size_t step = 1; step <= tcfg.steps; ++step) {
    std::vector<std::size_t> batch_idx;
    batch_idx.reserve(tcfg.batch_size);
    for (std::size_t i = 0; i < tcfg.batch_size; ++i) {
      const auto& pool = (i % 2 == 0) ? pos : negs;
      batch_idx.push_back(pool[shuffle_rng.uniform_int(pool.size())]);
    }
    auto x = stack_windows(data.windows, batch_idx);
    auto y = stack_labels(data.windows, batch_idx);
    auto bce = at_step(step, [&] {
      return loss::bce_loss(model::classify(x, params, cfg), y);
    });
    const double bce_v = bce.item();
    check_finite_loss(bce_v, step);
    bce.backward();
    loss::adam_step(leaves, adam);
    if (tcfg.lr_decay_every && step % tcfg.lr_decay_every == 0)
      adam.config.lr *= tcfg.lr_decay_factor;

    log << "{\"step\":" << step << ",\"loss_bce\":" << jnum(bce_v)
        << ",\"loss_total\":" << jnum(bce_v) << "}\n";

    if (step % tcfg.eval_every == 0 && !val_idx.empty()) {
      const double val = at_step(step, [&] {
        return eval_bce(data.windows, val_idx, params, cfg, tcfg.batch_size);
      });
      check_finite_loss(val, step);
      if (val < best_val) {
        best_val = val;
        have_best = true;
        bad_evals = 0;
        model::save_checkpoint(best_path, cfg, params);
      } else if (++bad_evals >= tcfg.patience) {
        break;
      }
    }
  }
  model::save_checkpoint(final_path, cfg, params);
  if (!have_best) fs::copy_file(final_path, best_path, fs::copy_options::overwrite_existing);

  auto [best_cfg, best_params] = model::load_checkpoint(best_path);
  RunReport report;
  report.final_loss_total = eval_bce(data.windows, train_idx, best_params, best_cfg,
                                     tcfg.batch_size);
  if (!test_data.windows.empty()) {
    std::vector<std::size_t> all(test_data.windows.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    auto [auc, undefined] = eval_auroc(test_data.windows, all, best_params, best_cfg,
                                       tcfg.batch_size);
    report.auroc = auc;
    report.auroc_undefined = undefined;
  } else {
    report.auroc_undefined = true;
  }
  report.metrics_path = metrics_path;
  report.checkpoint_path = best_path;
  report.report_path = (fs::path(out_dir) / "report.json").string();
  write_report_json(report.report_path, report_to_json(report, config_echo(cfg, tcfg)));
  return report;
}

RunReport evaluate(const ingest::WindowsManifest& manifest, const std::string& checkpoint,
                   const std::string& split, const std::string& out_dir) {
  if (split != "train" && split != "test")
    throw ConfigError("evaluate: split must be 'train' or 'test'");
  auto data = load_split(manifest, split);
  if (data.windows.empty())
    throw DataError("evaluate: split '" + split + "' has no windows");
  fs::create_directories(out_dir);

  auto [cfg, params] = model::load_checkpoint(checkpoint);
  const auto lcfg = loss::LossConfig::with_pad(cfg.spectral_pad, cfg.lambda_spectral);
  std::vector<std::size_t> all(data.windows.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;

  const auto ev = eval_reconstruction(data.windows, all, params, cfg, lcfg, 16);
  auto [auc, undefined] = eval_auroc(data.windows, all, params, cfg, 16);

  RunReport report;
  report.final_loss_mse = ev.mse;
  report.final_loss_spec = ev.spec;
  report.final_loss_total = ev.total;
  report.auroc = auc;
  report.auroc_undefined = undefined;
  report.checkpoint_path = checkpoint;
  report.report_path = (fs::path(out_dir) / "eval_report.json").string();
  TrainConfig echo_cfg;
  write_report_json(report.report_path, report_to_json(report, config_echo(cfg, echo_cfg)));
  return report;
}

AblationReport spectral_ablation(const ingest::WindowsManifest& manifest,
                                 const ModelConfig& mcfg, const TrainConfig& tcfg,
                                 const std::string& out_dir) {
  AblationReport rep;
  TrainConfig with = tcfg;
  if (with.lambda_spectral == 0) with.lambda_spectral = 1.0;
  rep.with_spectral = pretrain(manifest, mcfg, with, (fs::path(out_dir) / "with_spectral").string());
  TrainConfig without = tcfg;
  without.lambda_spectral = 0.0;
  rep.without_spectral =
      pretrain(manifest, mcfg, without, (fs::path(out_dir) / "no_spectral").string());

  json j;
  j["with_spectral"] = report_to_json(rep.with_spectral, config_echo(mcfg, with));
  j["without_spectral"] = report_to_json(rep.without_spectral, config_echo(mcfg, without));
  rep.report_path = (fs::path(out_dir) / "ablation_report.json").string();
  write_report_json(rep.report_path, j);
  return rep;
}

ComparisonReport scratch_comparison(const ingest::WindowsManifest& manifest,
                                    const std::string& checkpoint,
                                    const ModelConfig& mcfg, const TrainConfig& tcfg,
                                    const std::string& out_dir) {
  ComparisonReport rep;
  TrainConfig pre = tcfg;
  pre.from_scratch = false;
  rep.pretrained = finetune(manifest, checkpoint, mcfg, pre,
                            (fs::path(out_dir) / "pretrained").string());
  TrainConfig scratch = tcfg;
  scratch.from_scratch = true;
  rep.from_scratch =
      finetune(manifest, "", mcfg, scratch, (fs::path(out_dir) / "from_scratch").string());

  json j;
  j["pretrained"] = report_to_json(rep.pretrained, config_echo(mcfg, pre));
  j["from_scratch"] = report_to_json(rep.from_scratch, config_echo(mcfg, scratch));
  rep.report_path = (fs::path(out_dir) / "comparison_report.json").string();
  write_report_json(rep.report_path, j);
  return rep;
}

}  // namespace essm::train
