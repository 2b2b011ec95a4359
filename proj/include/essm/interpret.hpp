#pragma once

#include <string>
#include <vector>

#include "essm/ingest.hpp"
#include "essm/model.hpp"

namespace essm::interpret {

struct SaliencyMap {
  std::vector<double> importance;      // per channel, max-normalized to [0,1]
  std::vector<double> saliency;        // channels x samples, |d logit / d input|
  double probability = 0.0;            // predicted seizure probability
  std::string record_id;
  double start_time = 0.0;
};

/// Gradient of the pre-sigmoid logit w.r.t. the input window (the logit
/// avoids sigmoid saturation flattening the map). Channel importance is the
/// L2 norm over time, normalized so the largest channel is exactly 1; an
/// all-zero gradient yields all-zero importances.
template <typename T>
SaliencyMap channel_saliency(const std::vector<T>& window_data,
                             model::ModelParams<T>& params, const model::ModelConfig& cfg);

SaliencyMap window_saliency(const ingest::Window& window, model::ModelParams<float>& params,
                            const model::ModelConfig& cfg);

struct FilterSpectrum {
  std::vector<double> magnitude;  // bins 0..pad/2 mapped to 0..fs/2 Hz
  double peak_hz = 0.0;           // argmax bin (lowest index on ties) * fs / pad
};

/// Magnitude spectra of the learned front-end filters: each kernel is
/// zero-padded to >= 256 and transformed; bin b maps to b * 200 / pad Hz.
template <typename T>
std::vector<FilterSpectrum> filter_spectra(const model::ModelParams<T>& params);

/// JSON export (channel names, importances, prediction, provenance), plus an
/// optional CSV of the raw per-sample saliency. Output bytes are
/// deterministic for a fixed map.
void export_saliency(const SaliencyMap& map, const std::string& json_path,
                     const std::string& csv_path = "");

void export_filter_spectra(const std::vector<FilterSpectrum>& spectra,
                           const std::string& json_path);

}  // namespace essm::interpret
