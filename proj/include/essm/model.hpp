#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "essm/layers.hpp"
#include "essm/rng.hpp"
#include "essm/ssm.hpp"
#include "essm/tensor.hpp"

namespace essm::model {

/// Architecture configuration. level_dims[0] must equal d_model and
/// window_samples must divide by pool_factor^levels.
struct ModelConfig {
  std::size_t channels = 19;
  std::size_t window_samples = 2000;
  std::size_t front_filters = 8;
  std::size_t front_kernel = 100;
  std::size_t d_model = 128;
  std::size_t mamba_blocks_per_level = 4;
  std::size_t ssm_state = 16;
  std::size_t ssm_expand = 2;
  std::size_t ssm_conv_kernel = 4;
  std::size_t levels = 2;
  std::size_t pool_factor = 4;
  std::vector<std::size_t> level_dims = {128, 256, 512};
  std::size_t head_hidden = 64;
  double lambda_spectral = 1.0;
  std::size_t spectral_pad = 2048;
  bool parallel_scan = false;
  /// Front-conv weight init: "kaiming" (default) or "filterbank"
  /// (Hamming-windowed cosine atoms, log-spaced centers in 1-45 Hz).
  std::string front_init = "kaiming";

  void validate() const;

  /// Canonical key-sorted "key=value" text (one per line); the checkpoint
  /// header format.
  std::string to_text() const;
  static ModelConfig from_text(const std::string& text);
};

/// Enumerates config fields as (name, reference) pairs; the single source of
/// truth for text/JSON serialization.
template <typename Config, typename F>
void visit_config_fields(Config& c, F&& f) {
  f("channels", c.channels);
  f("window_samples", c.window_samples);
  f("front_filters", c.front_filters);
  f("front_kernel", c.front_kernel);
  f("d_model", c.d_model);
  f("mamba_blocks_per_level", c.mamba_blocks_per_level);
  f("ssm_state", c.ssm_state);
  f("ssm_expand", c.ssm_expand);
  f("ssm_conv_kernel", c.ssm_conv_kernel);
  f("levels", c.levels);
  f("pool_factor", c.pool_factor);
  f("level_dims", c.level_dims);
  f("head_hidden", c.head_hidden);
  f("lambda_spectral", c.lambda_spectral);
  f("spectral_pad", c.spectral_pad);
  f("parallel_scan", c.parallel_scan);
  f("front_init", c.front_init);
}

template <typename T>
struct EncoderLevelParams {
  std::vector<ssm::SsmBlockParams<T>> blocks;
  nn::DoubleConvParams<T> down;
};

template <typename T>
struct DecoderLevelParams {
  nn::Conv1dParams<T> up;            // transpose conv, level_dims[i+1] -> level_dims[i]
  nn::DoubleConvParams<T> fuse;      // 2*level_dims[i] -> level_dims[i] after skip concat
  std::vector<ssm::SsmBlockParams<T>> blocks;
};

template <typename T>
struct ClsHeadParams {
  nn::LinearParams<T> fc1;
  nn::LinearParams<T> fc2;
};

template <typename T>
struct ModelParams {
  nn::Conv1dParams<T> front_conv;    // front_filters temporal filters shared by all channels
  nn::LinearParams<T> channel_mix;   // channels*front_filters -> d_model, per time step
  std::vector<EncoderLevelParams<T>> encoder;
  std::vector<ssm::SsmBlockParams<T>> bottleneck;
  std::vector<DecoderLevelParams<T>> decoder;  // index i = resolution level i
  nn::Conv1dParams<T> recon_head;    // 1x1 conv to channels, zero-initialized
  ClsHeadParams<T> cls_head;
};

template <typename T>
ModelParams<T> init_model(const ModelConfig& cfg, Rng& rng);

/// Shared temporal filters per channel, then the per-time-step channel mix:
/// (B, channels, T) -> (B, d_model, T). Flattened feature index is
/// channel * front_filters + filter.
template <typename T>
Tensor<T> front_end(const Tensor<T>& x, const ModelParams<T>& p, const ModelConfig& cfg);

template <typename T>
struct EncodeResult {
  Tensor<T> bottleneck;          // (B, level_dims.back(), T / pool^levels)
  std::vector<Tensor<T>> skips;  // per level, before downsampling
};

template <typename T>
EncodeResult<T> encode(const Tensor<T>& x, const ModelParams<T>& p, const ModelConfig& cfg);

/// Full encoder-decoder; output shape equals input shape. Exactly zero for
/// freshly initialized parameters (zero recon head).
template <typename T>
Tensor<T> reconstruct(const Tensor<T>& x, const ModelParams<T>& p, const ModelConfig& cfg);

/// Pre-sigmoid logits of the detection head: (B, channels, T) -> (B).
template <typename T>
Tensor<T> classify_logit(const Tensor<T>& x, const ModelParams<T>& p, const ModelConfig& cfg);

/// Seizure probabilities in (0,1).
template <typename T>
Tensor<T> classify(const Tensor<T>& x, const ModelParams<T>& p, const ModelConfig& cfg);

template <typename T>
void visit_params(ModelParams<T>& p,
                  const std::function<void(const std::string&, Tensor<T>&)>& f);

template <typename T>
std::vector<Tensor<T>> collect_params(ModelParams<T>& p);

/// Only the classification head (the freeze_encoder fine-tuning mode).
template <typename T>
std::vector<Tensor<T>> collect_cls_params(ModelParams<T>& p);

/// Closed-form learnable parameter count for a config.
std::size_t parameter_count(const ModelConfig& cfg);

/// Checkpoint: u32 header length + canonical config text, then u32 tensor
/// count and (u32 name length, name, tensor blob) per parameter in visit
/// order. Round-trips bit-exactly.
void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     ModelParams<float>& params);
std::pair<ModelConfig, ModelParams<float>> load_checkpoint(const std::string& path);

}  // namespace essm::model
