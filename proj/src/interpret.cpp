#include "essm/interpret.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>

#include "essm/errors.hpp"

namespace essm::interpret {

using nlohmann::json;

template <typename T>
SaliencyMap channel_saliency(const std::vector<T>& window_data,
                             model::ModelParams<T>& params, const model::ModelConfig& cfg) {
  const std::size_t ch = cfg.channels, steps = cfg.window_samples;
  if (window_data.size() != ch * steps)
    throw ShapeError("channel_saliency: window has " + std::to_string(window_data.size()) +
                     " samples, expected " + std::to_string(ch * steps));
  if (!params.cls_head.fc1.weight.defined() || !params.cls_head.fc2.weight.defined())
    throw DataError("channel_saliency: checkpoint lacks a classification head");

  auto x = Tensor<T>::leaf({1, ch, steps}, window_data);
  auto logit = model::classify_logit(x, params, cfg);
  auto scalar_logit = reshape(logit, {});
  scalar_logit.backward();

  SaliencyMap map;
  map.probability = static_cast<double>(sigmoid(logit)[0]);
  map.saliency.resize(ch * steps);
  auto g = x.grad();
  for (std::size_t i = 0; i < g.size(); ++i)
    map.saliency[i] = std::abs(static_cast<double>(g[i]));

  map.importance.assign(ch, 0.0);
  for (std::size_t c = 0; c < ch; ++c) {
    double acc = 0;
    for (std::size_t t = 0; t < steps; ++t) {
      const double v = map.saliency[c * steps + t];
      acc += v * v;
    }
    map.importance[c] = std::sqrt(acc);
  }
  const double peak = *std::max_element(map.importance.begin(), map.importance.end());
  if (peak > 0)
    for (auto& v : map.importance) v /= peak;
  return map;
}

SaliencyMap window_saliency(const ingest::Window& window, model::ModelParams<float>& params,
                            const model::ModelConfig& cfg) {
  auto map = channel_saliency<float>(window.data, params, cfg);
  map.record_id = window.record_id;
  map.start_time = window.start_time;
  return map;
}

template <typename T>
std::vector<FilterSpectrum> filter_spectra(const model::ModelParams<T>& params) {
  const auto& w = params.front_conv.weight;
  if (!w.defined() || w.rank() != 3)
    throw DataError("filter_spectra: checkpoint lacks a front convolution");
  const std::size_t filters = w.extent(0);
  const std::size_t kernel = w.extent(2);
  std::size_t pad = 256;
  while (pad < kernel) pad <<= 1;

  std::vector<FilterSpectrum> out;
  out.reserve(filters);
  NoGradGuard ng;
  for (std::size_t f = 0; f < filters; ++f) {
    std::vector<double> k(kernel);
    for (std::size_t i = 0; i < kernel; ++i)
      k[i] = static_cast<double>(w[f * kernel + i]);
    auto mag = rfft_magnitude(TensorD::from_data({kernel}, k), pad);
    FilterSpectrum s;
    s.magnitude = mag.to_vector();
    std::size_t best = 0;
    for (std::size_t b = 1; b < s.magnitude.size(); ++b)
      if (s.magnitude[b] > s.magnitude[best]) best = b;  // lowest-index tie-break
    s.peak_hz = static_cast<double>(best) * ingest::kTargetRateHz / static_cast<double>(pad);
    out.push_back(std::move(s));
  }
  return out;
}

void export_saliency(const SaliencyMap& map, const std::string& json_path,
                     const std::string& csv_path) {
  json j;
  j["channels"] = json::array();
  for (const char* name : ingest::kChannelNames) j["channels"].push_back(name);
  j["importance"] = map.importance;
  j["prediction"] = map.probability;
  j["record"] = map.record_id;
  j["start_time"] = map.start_time;
  std::ofstream os(json_path);
  if (!os) throw DataError("export_saliency: cannot open " + json_path);
  os << j.dump(2) << "\n";

  if (!csv_path.empty()) {
    std::ofstream cs(csv_path);
    if (!cs) throw DataError("export_saliency: cannot open " + csv_path);
    const std::size_t ch = map.importance.size();
    const std::size_t steps = ch ? map.saliency.size() / ch : 0;
    char buf[64];
    for (std::size_t c = 0; c < ch; ++c) {
      cs << ingest::kChannelNames[c];
      for (std::size_t t = 0; t < steps; ++t) {
        std::snprintf(buf, sizeof(buf), ",%.9g", map.saliency[c * steps + t]);
        cs << buf;
      }
      cs << "\n";
    }
  }
}

void export_filter_spectra(const std::vector<FilterSpectrum>& spectra,
                           const std::string& json_path) {
  json j;
  j["filters"] = json::array();
  for (const auto& s : spectra)
    j["filters"].push_back({{"peak_hz", s.peak_hz}, {"magnitude", s.magnitude}});
  std::ofstream os(json_path);
  if (!os) throw DataError("export_filter_spectra: cannot open " + json_path);
  os << j.dump(2) << "\n";
}

template SaliencyMap channel_saliency<float>(const std::vector<float>&,
                                             model::ModelParams<float>&,
                                             const model::ModelConfig&);
template SaliencyMap channel_saliency<double>(const std::vector<double>&,
                                              model::ModelParams<double>&,
                                              const model::ModelConfig&);
template std::vector<FilterSpectrum> filter_spectra<float>(const model::ModelParams<float>&);
template std::vector<FilterSpectrum> filter_spectra<double>(const model::ModelParams<double>&);

}  // namespace essm::interpret
