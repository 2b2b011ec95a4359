#include "essm/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "essm/errors.hpp"
#include "essm/serialize.hpp"

namespace essm::model {

namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct FieldWriter {
  std::map<std::string, std::string>* out;
  void operator()(const char* name, std::size_t v) const { (*out)[name] = std::to_string(v); }
  void operator()(const char* name, double v) const { (*out)[name] = format_double(v); }
  void operator()(const char* name, bool v) const { (*out)[name] = v ? "true" : "false"; }
  void operator()(const char* name, const std::string& v) const { (*out)[name] = v; }
  void operator()(const char* name, const std::vector<std::size_t>& v) const {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(v[i]);
    }
    (*out)[name] = s;
  }
};

struct FieldReader {
  const std::map<std::string, std::string>* in;
  mutable std::size_t consumed = 0;

  const std::string& get(const char* name) const {
    auto it = in->find(name);
    if (it == in->end())
      throw DataError(std::string("config: missing field '") + name + "'");
    ++consumed;
    return it->second;
  }
  void operator()(const char* name, std::size_t& v) const {
    v = static_cast<std::size_t>(std::stoull(get(name)));
  }
  void operator()(const char* name, double& v) const { v = std::stod(get(name)); }
  void operator()(const char* name, bool& v) const { v = get(name) == "true"; }
  void operator()(const char* name, std::string& v) const { v = get(name); }
  void operator()(const char* name, std::vector<std::size_t>& v) const {
    v.clear();
    std::stringstream ss(get(name));
    std::string tok;
    while (std::getline(ss, tok, ','))
      if (!tok.empty()) v.push_back(static_cast<std::size_t>(std::stoull(tok)));
  }
};

std::size_t ssm_block_count(std::size_t d_model, std::size_t n_state, std::size_t expand,
                            std::size_t conv_kernel) {
  const std::size_t di = expand * d_model;
  const std::size_t dr = (d_model + 15) / 16;
  std::size_t n = 0;
  n += 2 * di * d_model + 2 * di;  // in_proj
  n += di * conv_kernel + di;      // depthwise conv
  n += di * n_state;               // a_log
  n += 2 * n_state * di + 2 * n_state;  // x_to_bc
  n += dr * di;                    // dt_lowrank
  n += di * dr + di;               // dt_proj
  n += di;                         // d_skip
  n += d_model * di + d_model;     // out_proj
  n += 2 * d_model;                // norm
  return n;
}

std::size_t double_conv_count(std::size_t cin, std::size_t cout, std::size_t k = 5) {
  return cout * cin * k + cout + cout * cout * k + cout;
}

}  // namespace

void ModelConfig::validate() const {
  if (channels == 0 || window_samples == 0 || front_filters == 0 || front_kernel == 0 ||
      d_model == 0 || ssm_state == 0 || ssm_expand == 0 || ssm_conv_kernel == 0 ||
      pool_factor < 2 || head_hidden == 0)
    throw ConfigError("model config: extents must be positive (pool_factor >= 2)");
  if (level_dims.size() != levels + 1)
    throw ConfigError("model config: level_dims must have levels+1 entries, got " +
                      std::to_string(level_dims.size()) + " for " + std::to_string(levels) +
                      " level(s)");
  if (level_dims[0] != d_model)
    throw ConfigError("model config: level_dims[0] must equal d_model");
  for (auto d : level_dims)
    if (d == 0) throw ConfigError("model config: zero level width");
  std::size_t t = window_samples;
  for (std::size_t l = 0; l < levels; ++l) {
    if (t % pool_factor != 0)
      throw ConfigError("model config: window_samples must divide by pool_factor^levels");
    t /= pool_factor;
  }
  if (front_kernel > window_samples)
    throw ConfigError("model config: front_kernel longer than the window");
  if (spectral_pad < window_samples || (spectral_pad & (spectral_pad - 1)) != 0)
    throw ConfigError("model config: spectral_pad must be a power of two >= window_samples");
  if (lambda_spectral < 0) throw ConfigError("model config: lambda_spectral must be >= 0");
  if (front_init != "kaiming" && front_init != "filterbank")
    throw ConfigError("model config: front_init must be 'kaiming' or 'filterbank'");
}

std::string ModelConfig::to_text() const {
  std::map<std::string, std::string> fields;
  visit_config_fields(const_cast<ModelConfig&>(*this), FieldWriter{&fields});
  std::string out;
  for (const auto& [k, v] : fields) out += k + "=" + v + "\n";
  return out;
}

ModelConfig ModelConfig::from_text(const std::string& text) {
  std::map<std::string, std::string> fields;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw DataError("config: malformed line '" + line + "'");
    fields[line.substr(0, eq)] = line.substr(eq + 1);
  }
  ModelConfig cfg;
  FieldReader reader{&fields};
  try {
    visit_config_fields(cfg, reader);
  } catch (const std::invalid_argument&) {
    throw DataError("config: malformed numeric value");
  }
  if (reader.consumed != fields.size())
    throw DataError("config: unrecognized field present");
  cfg.validate();
  return cfg;
}

template <typename T>
ModelParams<T> init_model(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  ModelParams<T> p;
  p.front_conv = nn::make_conv1d<T>(rng, cfg.front_filters, 1, cfg.front_kernel, 1,
                                    cfg.front_kernel / 2, 1);
  if (cfg.front_init == "filterbank") {
    // Hamming-windowed cosine atoms, unit L2, centers log-spaced over the
    // band the kernel-100 layer is meant to cover.
    const double fs = 200.0;
    const double lo = 1.0, hi = 45.0;
    T* w = p.front_conv.weight.mutable_data();
    const std::size_t k = cfg.front_kernel;
    for (std::size_t f = 0; f < cfg.front_filters; ++f) {
      const double frac = cfg.front_filters == 1
                              ? 0.5
                              : static_cast<double>(f) / static_cast<double>(cfg.front_filters - 1);
      const double fc = lo * std::pow(hi / lo, frac);
      const double phase = (f % 2) ? M_PI / 2.0 : 0.0;  // alternate cos/sin atoms
      double norm = 0;
      std::vector<double> atom(k);
      for (std::size_t t = 0; t < k; ++t) {
        const double centered = static_cast<double>(t) - static_cast<double>(k - 1) / 2.0;
        const double window = 0.54 - 0.46 * std::cos(2.0 * M_PI * t / (k - 1));
        atom[t] = window * std::cos(2.0 * M_PI * fc * centered / fs + phase);
        norm += atom[t] * atom[t];
      }
      norm = std::sqrt(norm);
      for (std::size_t t = 0; t < k; ++t)
        w[f * k + t] = static_cast<T>(atom[t] / norm);
    }
  }
  p.channel_mix = nn::make_linear<T>(rng, cfg.d_model, cfg.channels * cfg.front_filters);

  for (std::size_t l = 0; l < cfg.levels; ++l) {
    EncoderLevelParams<T> lev;
    for (std::size_t b = 0; b < cfg.mamba_blocks_per_level; ++b)
      lev.blocks.push_back(ssm::make_ssm_block<T>(rng, cfg.level_dims[l], cfg.ssm_state,
                                                  cfg.ssm_expand, cfg.ssm_conv_kernel));
    lev.down = nn::make_double_conv<T>(rng, cfg.level_dims[l], cfg.level_dims[l + 1]);
    p.encoder.push_back(std::move(lev));
  }
  for (std::size_t b = 0; b < cfg.mamba_blocks_per_level; ++b)
    p.bottleneck.push_back(ssm::make_ssm_block<T>(rng, cfg.level_dims[cfg.levels],
                                                  cfg.ssm_state, cfg.ssm_expand,
                                                  cfg.ssm_conv_kernel));
  for (std::size_t l = 0; l < cfg.levels; ++l) {
    DecoderLevelParams<T> lev;
    lev.up = nn::make_conv1d_transpose<T>(rng, cfg.level_dims[l + 1], cfg.level_dims[l],
                                          cfg.pool_factor, cfg.pool_factor);
    lev.fuse = nn::make_double_conv<T>(rng, 2 * cfg.level_dims[l], cfg.level_dims[l]);
    for (std::size_t b = 0; b < cfg.mamba_blocks_per_level; ++b)
      lev.blocks.push_back(ssm::make_ssm_block<T>(rng, cfg.level_dims[l], cfg.ssm_state,
                                                  cfg.ssm_expand, cfg.ssm_conv_kernel));
    p.decoder.push_back(std::move(lev));
  }
  p.recon_head = nn::make_conv1d_zero<T>(cfg.channels, cfg.d_model, 1);
  p.cls_head.fc1 = nn::make_linear<T>(rng, cfg.head_hidden, cfg.level_dims[cfg.levels]);
  p.cls_head.fc2 = nn::make_linear<T>(rng, 1, cfg.head_hidden);
  return p;
}

namespace {

template <typename T>
void check_input(const Tensor<T>& x, const ModelConfig& cfg, const char* op) {
  if (x.rank() != 3 || x.extent(1) != cfg.channels || x.extent(2) != cfg.window_samples)
    throw ShapeError(std::string(op) + ": expected (B," + std::to_string(cfg.channels) +
                     "," + std::to_string(cfg.window_samples) + "), got " +
                     shape_str(x.shape()));
}

template <typename T>
Tensor<T> apply_blocks(const Tensor<T>& x, const std::vector<ssm::SsmBlockParams<T>>& blocks,
                       const ModelConfig& cfg) {
  if (blocks.empty()) return x;
  const auto scan = cfg.parallel_scan ? ssm::ScanKind::kParallel : ssm::ScanKind::kSequential;
  auto seq = transpose(x, {0, 2, 1});  // (B, T, width)
  for (const auto& b : blocks) seq = ssm::mamba_block_batched(seq, b, scan);
  return transpose(seq, {0, 2, 1});
}

}  // namespace

template <typename T>
Tensor<T> front_end(const Tensor<T>& x, const ModelParams<T>& p, const ModelConfig& cfg) {
  check_input(x, cfg, "front_end");
  const std::size_t batch = x.extent(0);
  const std::size_t t = cfg.window_samples;

  auto per_channel = reshape(x, {batch * cfg.channels, std::size_t(1), t});
  auto filtered = conv1d(per_channel, p.front_conv);
  if (filtered.extent(2) > t) filtered = slice(filtered, 2, 0, t);
  auto features = reshape(filtered, {batch, cfg.channels * cfg.front_filters, t});

  auto per_time = transpose(features, {0, 2, 1});  // (B, T, channels*F)
  auto mixed = nn::linear(per_time, p.channel_mix);
  return transpose(mixed, {0, 2, 1});  // (B, d_model, T)
}

template <typename T>
EncodeResult<T> encode(const Tensor<T>& x, const ModelParams<T>& p, const ModelConfig& cfg) {
  check_input(x, cfg, "encode");
  EncodeResult<T> res;
  auto h = front_end(x, p, cfg);
  for (std::size_t l = 0; l < cfg.levels; ++l) {
    h = apply_blocks(h, p.encoder[l].blocks, cfg);
    res.skips.push_back(h);
    h = nn::double_conv(h, p.encoder[l].down);
    h = nn::pool1d(h, cfg.pool_factor, nn::PoolMode::kMean);
  }
  res.bottleneck = apply_blocks(h, p.bottleneck, cfg);
  return res;
}

template <typename T>
Tensor<T> reconstruct(const Tensor<T>& x, const ModelParams<T>& p, const ModelConfig& cfg) {
  auto enc = encode(x, p, cfg);
  auto h = enc.bottleneck;
  for (std::size_t l = cfg.levels; l-- > 0;) {
    h = conv1d_transpose(h, p.decoder[l].up);
    h = concat(std::vector<Tensor<T>>{h, enc.skips[l]}, 1);
    h = nn::double_conv(h, p.decoder[l].fuse);
    h = apply_blocks(h, p.decoder[l].blocks, cfg);
  }
  return conv1d(h, p.recon_head);
}

template <typename T>
Tensor<T> classify_logit(const Tensor<T>& x, const ModelParams<T>& p, const ModelConfig& cfg) {
  auto enc = encode(x, p, cfg);
  auto pooled = max_reduce(enc.bottleneck, 2).values;  // (B, width)
  auto hidden = silu(nn::linear(pooled, p.cls_head.fc1));
  auto logit = nn::linear(hidden, p.cls_head.fc2);  // (B, 1)
  return reshape(logit, {x.extent(0)});
}

template <typename T>
Tensor<T> classify(const Tensor<T>& x, const ModelParams<T>& p, const ModelConfig& cfg) {
  return sigmoid(classify_logit(x, p, cfg));
}

namespace {

template <typename T>
void visit_ssm(const std::string& prefix, ssm::SsmBlockParams<T>& b,
               const std::function<void(const std::string&, Tensor<T>&)>& f) {
  f(prefix + ".in_proj.weight", b.in_proj.weight);
  f(prefix + ".in_proj.bias", b.in_proj.bias);
  f(prefix + ".conv.weight", b.conv_weight);
  f(prefix + ".conv.bias", b.conv_bias);
  f(prefix + ".a_log", b.a_log);
  f(prefix + ".x_to_bc.weight", b.x_to_bc.weight);
  f(prefix + ".x_to_bc.bias", b.x_to_bc.bias);
  f(prefix + ".dt_lowrank", b.dt_lowrank);
  f(prefix + ".dt_proj.weight", b.dt_proj.weight);
  f(prefix + ".dt_proj.bias", b.dt_proj.bias);
  f(prefix + ".d_skip", b.d_skip);
  f(prefix + ".out_proj.weight", b.out_proj.weight);
  f(prefix + ".out_proj.bias", b.out_proj.bias);
  f(prefix + ".norm.gamma", b.norm.gamma);
  f(prefix + ".norm.beta", b.norm.beta);
}

template <typename T>
void visit_double_conv(const std::string& prefix, nn::DoubleConvParams<T>& d,
                       const std::function<void(const std::string&, Tensor<T>&)>& f) {
  f(prefix + ".conv1.weight", d.conv1.weight);
  f(prefix + ".conv1.bias", d.conv1.bias);
  f(prefix + ".conv2.weight", d.conv2.weight);
  f(prefix + ".conv2.bias", d.conv2.bias);
}

}  // namespace

template <typename T>
void visit_params(ModelParams<T>& p,
                  const std::function<void(const std::string&, Tensor<T>&)>& f) {
  f("front_conv.weight", p.front_conv.weight);
  f("front_conv.bias", p.front_conv.bias);
  f("channel_mix.weight", p.channel_mix.weight);
  f("channel_mix.bias", p.channel_mix.bias);
  for (std::size_t l = 0; l < p.encoder.size(); ++l) {
    const std::string base = "enc" + std::to_string(l);
    for (std::size_t b = 0; b < p.encoder[l].blocks.size(); ++b)
      visit_ssm(base + ".block" + std::to_string(b), p.encoder[l].blocks[b], f);
    visit_double_conv(base + ".down", p.encoder[l].down, f);
  }
  for (std::size_t b = 0; b < p.bottleneck.size(); ++b)
    visit_ssm("bottleneck.block" + std::to_string(b), p.bottleneck[b], f);
  for (std::size_t l = 0; l < p.decoder.size(); ++l) {
    const std::string base = "dec" + std::to_string(l);
    f(base + ".up.weight", p.decoder[l].up.weight);
    f(base + ".up.bias", p.decoder[l].up.bias);
    visit_double_conv(base + ".fuse", p.decoder[l].fuse, f);
    for (std::size_t b = 0; b < p.decoder[l].blocks.size(); ++b)
      visit_ssm(base + ".block" + std::to_string(b), p.decoder[l].blocks[b], f);
  }
  f("recon_head.weight", p.recon_head.weight);
  f("recon_head.bias", p.recon_head.bias);
  f("cls_head.fc1.weight", p.cls_head.fc1.weight);
  f("cls_head.fc1.bias", p.cls_head.fc1.bias);
  f("cls_head.fc2.weight", p.cls_head.fc2.weight);
  f("cls_head.fc2.bias", p.cls_head.fc2.bias);
}

template <typename T>
std::vector<Tensor<T>> collect_params(ModelParams<T>& p) {
  std::vector<Tensor<T>> out;
  visit_params<T>(p, [&](const std::string&, Tensor<T>& t) { out.push_back(t); });
  return out;
}

template <typename T>
std::vector<Tensor<T>> collect_cls_params(ModelParams<T>& p) {
  return {p.cls_head.fc1.weight, p.cls_head.fc1.bias, p.cls_head.fc2.weight,
          p.cls_head.fc2.bias};
}

std::size_t parameter_count(const ModelConfig& cfg) {
  cfg.validate();
  std::size_t n = 0;
  n += cfg.front_filters * cfg.front_kernel + cfg.front_filters;
  n += cfg.d_model * cfg.channels * cfg.front_filters + cfg.d_model;
  for (std::size_t l = 0; l < cfg.levels; ++l) {
    n += cfg.mamba_blocks_per_level * ssm_block_count(cfg.level_dims[l], cfg.ssm_state,
                                                      cfg.ssm_expand, cfg.ssm_conv_kernel);
    n += double_conv_count(cfg.level_dims[l], cfg.level_dims[l + 1]);
  }
  n += cfg.mamba_blocks_per_level * ssm_block_count(cfg.level_dims[cfg.levels], cfg.ssm_state,
                                                    cfg.ssm_expand, cfg.ssm_conv_kernel);
  for (std::size_t l = 0; l < cfg.levels; ++l) {
    n += cfg.level_dims[l + 1] * cfg.level_dims[l] * cfg.pool_factor + cfg.level_dims[l];
    n += double_conv_count(2 * cfg.level_dims[l], cfg.level_dims[l]);
    n += cfg.mamba_blocks_per_level * ssm_block_count(cfg.level_dims[l], cfg.ssm_state,
                                                      cfg.ssm_expand, cfg.ssm_conv_kernel);
  }
  n += cfg.channels * cfg.d_model + cfg.channels;
  n += cfg.head_hidden * cfg.level_dims[cfg.levels] + cfg.head_hidden;
  n += 1 * cfg.head_hidden + 1;
  return n;
}

void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     ModelParams<float>& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("checkpoint: cannot open " + path + " for writing");
  const std::string header = cfg.to_text();
  const auto hlen = static_cast<std::uint32_t>(header.size());
  os.write(reinterpret_cast<const char*>(&hlen), 4);
  os.write(header.data(), static_cast<std::streamsize>(header.size()));

  std::vector<std::pair<std::string, Tensor<float>>> named;
  visit_params<float>(params, [&](const std::string& n, Tensor<float>& t) {
    named.emplace_back(n, t);
  });
  const auto count = static_cast<std::uint32_t>(named.size());
  os.write(reinterpret_cast<const char*>(&count), 4);
  for (auto& [name, tensor] : named) {
    const auto nlen = static_cast<std::uint32_t>(name.size());
    os.write(reinterpret_cast<const char*>(&nlen), 4);
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    save_tensor(os, tensor);
  }
  if (!os) throw DataError("checkpoint: write failed for " + path);
}

std::pair<ModelConfig, ModelParams<float>> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("checkpoint: cannot open " + path);
  std::uint32_t hlen = 0;
  is.read(reinterpret_cast<char*>(&hlen), 4);
  if (!is || hlen > 1 << 20) throw DataError("checkpoint: bad header length");
  std::string header(hlen, '\0');
  is.read(header.data(), hlen);
  if (!is) throw DataError("checkpoint: truncated header");
  ModelConfig cfg = ModelConfig::from_text(header);

  Rng throwaway(0);
  ModelParams<float> params = init_model<float>(cfg, throwaway);
  std::map<std::string, Tensor<float>*> slots;
  visit_params<float>(params, [&](const std::string& n, Tensor<float>& t) {
    slots[n] = &t;
  });

  std::uint32_t count = 0;
  is.read(reinterpret_cast<char*>(&count), 4);
  if (!is) throw DataError("checkpoint: truncated tensor count");
  if (count != slots.size())
    throw DataError("checkpoint: has " + std::to_string(count) + " tensors, config needs " +
                    std::to_string(slots.size()));
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t nlen = 0;
    is.read(reinterpret_cast<char*>(&nlen), 4);
    if (!is || nlen > 4096) throw DataError("checkpoint: bad tensor name length");
    std::string name(nlen, '\0');
    is.read(name.data(), nlen);
    if (!is) throw DataError("checkpoint: truncated tensor name");
    auto it = slots.find(name);
    if (it == slots.end()) throw DataError("checkpoint: unknown tensor '" + name + "'");
    Tensor<float> loaded = load_tensor<float>(is);
    if (loaded.shape() != it->second->shape())
      throw DataError("checkpoint: tensor '" + name + "' has shape " +
                      shape_str(loaded.shape()) + ", expected " +
                      shape_str(it->second->shape()));
    std::copy(loaded.data(), loaded.data() + loaded.size(), it->second->mutable_data());
    slots.erase(it);
  }
  if (!slots.empty())
    throw DataError("checkpoint: missing tensor '" + slots.begin()->first + "'");
  return {cfg, std::move(params)};
}

#define ESSM_MODEL_INSTANTIATE(T)                                                        \
  template ModelParams<T> init_model<T>(const ModelConfig&, Rng&);                       \
  template Tensor<T> front_end<T>(const Tensor<T>&, const ModelParams<T>&,               \
                                  const ModelConfig&);                                   \
  template EncodeResult<T> encode<T>(const Tensor<T>&, const ModelParams<T>&,            \
                                     const ModelConfig&);                                \
  template Tensor<T> reconstruct<T>(const Tensor<T>&, const ModelParams<T>&,             \
                                    const ModelConfig&);                                 \
  template Tensor<T> classify_logit<T>(const Tensor<T>&, const ModelParams<T>&,          \
                                       const ModelConfig&);                              \
  template Tensor<T> classify<T>(const Tensor<T>&, const ModelParams<T>&,                \
                                 const ModelConfig&);                                    \
  template void visit_params<T>(ModelParams<T>&,                                         \
                                const std::function<void(const std::string&,             \
                                                         Tensor<T>&)>&);                 \
  template std::vector<Tensor<T>> collect_params<T>(ModelParams<T>&);                    \
  template std::vector<Tensor<T>> collect_cls_params<T>(ModelParams<T>&);

ESSM_MODEL_INSTANTIATE(float)
ESSM_MODEL_INSTANTIATE(double)

#undef ESSM_MODEL_INSTANTIATE

}  // namespace essm::model
