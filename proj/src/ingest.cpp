#include "essm/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "essm/dsp.hpp"
#include "essm/errors.hpp"
#include "essm/parallel.hpp"
#include "essm/rng.hpp"

namespace essm::ingest {

namespace fs = std::filesystem;
using nlohmann::json;

const std::array<const char*, kNumChannels> kChannelNames = {
    "FP1", "FP2", "F3", "F4", "C3", "C4", "P3", "P4", "O1", "O2",
    "F7",  "F8",  "T3", "T4", "T5", "T6", "FZ", "CZ", "PZ"};

namespace {

std::string upper(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

std::string trim_ws(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

/// Canonicalizes an EDF channel label: uppercase, strip "EEG " prefix and a
/// reference suffix such as "-REF".
std::string canonical_label(const std::string& raw) {
  std::string s = upper(trim_ws(raw));
  if (s.rfind("EEG ", 0) == 0) s = s.substr(4);
  const auto dash = s.rfind("-REF");
  if (dash != std::string::npos && dash == s.size() - 4) s = s.substr(0, dash);
  return trim_ws(s);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(trim_ws(field));
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

bool parse_time(const std::string& s, double& out) {
  if (s.empty()) return false;
  std::size_t pos = 0;
  try {
    out = std::stod(s, &pos);
  } catch (const std::exception&) {
    return false;
  }
  return pos == s.size();
}

template <typename V>
void write_pod(std::ostream& os, V v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V read_pod(std::istream& is, const char* what) {
  V v;
  is.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!is) throw DataError(std::string("window cache: truncated reading ") + what);
  return v;
}

constexpr char kCacheMagic[4] = {'E', 'W', 'I', 'N'};
constexpr std::uint32_t kCacheVersion = 1;

}  // namespace

RawRecording parse_edf_recording(const std::string& path, const std::string& patient_id,
                                 const std::string& record_id) {
  EdfFile f = read_edf(path);

  RawRecording rec;
  rec.patient_id = patient_id.empty() ? f.patient : patient_id;
  rec.record_id = record_id.empty() ? fs::path(path).stem().string() : record_id;
  rec.labels.assign(kChannelNames.begin(), kChannelNames.end());
  rec.channels.resize(kNumChannels);

  double rate = 0;
  for (std::size_t want = 0; want < kNumChannels; ++want) {
    bool found = false;
    for (std::size_t i = 0; i < f.signals.size(); ++i) {
      if (canonical_label(f.signals[i].label) != kChannelNames[want]) continue;
      rec.channels[want] = std::move(f.data[i]);
      const double r = static_cast<double>(f.signals[i].samples_per_record) / f.record_duration;
      if (rate == 0) {
        rate = r;
      } else if (std::abs(rate - r) > 1e-9) {
        throw DataError("EDF: channel '" + f.signals[i].label +
                        "' sampling rate differs from the other montage channels");
      }
      found = true;
      break;
    }
    if (!found)
      throw DataError("EDF: montage channel '" + std::string(kChannelNames[want]) +
                      "' not found in " + path);
  }
  rec.sample_rate = rate;
  return rec;
}

std::vector<AnnotationEvent> parse_annotations_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("annotations: cannot open " + path);
  std::vector<AnnotationEvent> events;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const std::string stripped = trim_ws(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto fields = split_csv_line(stripped);
    double start = 0, stop = 0;
    std::string label;
    if (fields.size() >= 5) {
      // channel,start_time,stop_time,label,confidence
      if (!parse_time(fields[1], start) || !parse_time(fields[2], stop)) {
        if (events.empty() && line_no <= 2) continue;  // header row
        throw DataError("annotations: non-numeric time at " + path + ":" +
                        std::to_string(line_no));
      }
      label = fields[3];
    } else if (fields.size() >= 3) {
      // start,stop,label
      if (!parse_time(fields[0], start) || !parse_time(fields[1], stop)) {
        if (events.empty() && line_no <= 2) continue;  // header row
        throw DataError("annotations: non-numeric time at " + path + ":" +
                        std::to_string(line_no));
      }
      label = fields[2];
    } else {
      throw DataError("annotations: expected 3 or 5 columns at " + path + ":" +
                      std::to_string(line_no));
    }
    if (start < 0 || start >= stop)
      throw DataError("annotations: invalid interval [" + std::to_string(start) + "," +
                      std::to_string(stop) + ") at " + path + ":" + std::to_string(line_no));
    if (upper(label).find("SEIZ") != std::string::npos) events.push_back({start, stop});
  }
  return events;
}

std::vector<Window> make_windows(const RawRecording& rec,
                                 const std::vector<AnnotationEvent>& events) {
  if (rec.channels.size() != kNumChannels)
    throw DataError("make_windows: expected " + std::to_string(kNumChannels) +
                    " channels, got " + std::to_string(rec.channels.size()));
  if (std::abs(rec.sample_rate - kTargetRateHz) > 1e-6)
    throw DataError("make_windows: recording must be at 200 Hz, got " +
                    std::to_string(rec.sample_rate));
  std::size_t n = rec.channels.front().size();
  for (const auto& c : rec.channels)
    if (c.size() != n) throw DataError("make_windows: channels differ in length");

  const std::size_t n_windows = n / kWindowSamples;
  std::vector<Window> out;
  out.reserve(n_windows);
  for (std::size_t w = 0; w < n_windows; ++w) {
    Window win;
    win.record_id = rec.record_id;
    win.start_time = static_cast<double>(w) * kWindowSeconds;
    const double wstart = win.start_time;
    const double wstop = wstart + kWindowSeconds;
    for (const auto& ev : events) {
      if (ev.start < wstop && ev.stop > wstart) {  // positive-measure overlap
        win.label = 1;
        break;
      }
    }
    win.data.resize(kNumChannels * kWindowSamples);
    for (std::size_t c = 0; c < kNumChannels; ++c) {
      const double* src = rec.channels[c].data() + w * kWindowSamples;
      double m = 0;
      for (std::size_t t = 0; t < kWindowSamples; ++t) m += src[t];
      m /= kWindowSamples;
      double var = 0;
      for (std::size_t t = 0; t < kWindowSamples; ++t) var += (src[t] - m) * (src[t] - m);
      var /= kWindowSamples;
      const double inv = 1.0 / (std::sqrt(var) + 1e-8);
      float* dst = win.data.data() + c * kWindowSamples;
      for (std::size_t t = 0; t < kWindowSamples; ++t) {
        const double v = (src[t] - m) * inv;
        if (!std::isfinite(v))
          throw DataError("make_windows: non-finite sample in record " + rec.record_id);
        dst[t] = static_cast<float>(v);
      }
    }
    out.push_back(std::move(win));
  }
  return out;
}

std::vector<Window> preprocess_recording(const RawRecording& rec,
                                         const std::vector<AnnotationEvent>& events) {
  RawRecording processed;
  processed.labels = rec.labels;
  processed.patient_id = rec.patient_id;
  processed.record_id = rec.record_id;
  processed.sample_rate = kTargetRateHz;
  processed.channels.resize(rec.channels.size());

  // 60/120 Hz interference; frequencies at or above Nyquist cannot be (and
  // need not be) notched after the 200 Hz resample, whose 90 Hz low-pass
  // already removed them.
  std::vector<double> notch_freqs;
  for (double f : {60.0, 120.0})
    if (f < kTargetRateHz / 2.0) notch_freqs.push_back(f);

  const auto fs_in = static_cast<std::size_t>(std::llround(rec.sample_rate));
  if (std::abs(rec.sample_rate - static_cast<double>(fs_in)) > 1e-9)
    throw DataError("preprocess: non-integer sampling rate " + std::to_string(rec.sample_rate));

  for (std::size_t c = 0; c < rec.channels.size(); ++c) {
    auto r = resample(rec.channels[c], fs_in, static_cast<std::size_t>(kTargetRateHz));
    processed.channels[c] = notch_filter(r, kTargetRateHz, notch_freqs);
  }
  return make_windows(processed, events);
}

void save_window_cache(const std::string& path, const std::vector<Window>& windows) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw DataError("window cache: cannot open " + tmp);
    os.write(kCacheMagic, 4);
    write_pod<std::uint32_t>(os, kCacheVersion);
    write_pod<std::uint64_t>(os, windows.size());
    for (const auto& w : windows) {
      if (w.data.size() != kNumChannels * kWindowSamples)
        throw DataError("window cache: window with wrong sample count");
      write_pod<std::uint8_t>(os, w.label);
      write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(w.record_id.size()));
      os.write(w.record_id.data(), static_cast<std::streamsize>(w.record_id.size()));
      write_pod<double>(os, w.start_time);
      os.write(reinterpret_cast<const char*>(w.data.data()),
               static_cast<std::streamsize>(w.data.size() * sizeof(float)));
    }
    if (!os) throw DataError("window cache: write failed for " + tmp);
  }
  fs::rename(tmp, path);
}

std::vector<Window> load_window_cache(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("window cache: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kCacheMagic, 4) != 0)
    throw DataError("window cache: bad magic in " + path);
  const auto version = read_pod<std::uint32_t>(is, "version");
  if (version != kCacheVersion)
    throw DataError("window cache: unsupported version " + std::to_string(version));
  const auto count = read_pod<std::uint64_t>(is, "count");
  std::vector<Window> out;
  out.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    Window w;
    w.label = read_pod<std::uint8_t>(is, "label");
    const auto len = read_pod<std::uint32_t>(is, "record-id length");
    if (len > 4096) throw DataError("window cache: implausible record-id length");
    w.record_id.resize(len);
    is.read(w.record_id.data(), len);
    if (!is) throw DataError("window cache: truncated record id");
    w.start_time = read_pod<double>(is, "start time");
    w.data.resize(kNumChannels * kWindowSamples);
    is.read(reinterpret_cast<char*>(w.data.data()),
            static_cast<std::streamsize>(w.data.size() * sizeof(float)));
    if (!is) throw DataError("window cache: truncated window data");
    out.push_back(std::move(w));
  }
  return out;
}

RecordManifest load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("manifest: cannot open " + path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw DataError("manifest: invalid JSON in " + path + ": " + e.what());
  }
  if (!j.contains("records") || !j["records"].is_array())
    throw DataError("manifest: missing 'records' array in " + path);
  const fs::path base = fs::path(path).parent_path();
  RecordManifest m;
  for (const auto& r : j["records"]) {
    ManifestEntry e;
    try {
      e.raw_path = r.at("raw").get<std::string>();
      e.annotation_path = r.at("annotation").get<std::string>();
      e.split = r.at("split").get<std::string>();
      e.patient = r.at("patient").get<std::string>();
    } catch (const json::exception& ex) {
      throw DataError(std::string("manifest: bad record entry: ") + ex.what());
    }
    if (e.split != "train" && e.split != "test")
      throw DataError("manifest: split must be 'train' or 'test', got '" + e.split + "'");
    if (fs::path(e.raw_path).is_relative()) e.raw_path = (base / e.raw_path).string();
    if (fs::path(e.annotation_path).is_relative())
      e.annotation_path = (base / e.annotation_path).string();
    m.records.push_back(std::move(e));
  }
  return m;
}

void save_manifest(const std::string& path, const RecordManifest& manifest) {
  json j;
  j["records"] = json::array();
  for (const auto& r : manifest.records) {
    j["records"].push_back({{"raw", r.raw_path},
                            {"annotation", r.annotation_path},
                            {"split", r.split},
                            {"patient", r.patient}});
  }
  std::ofstream os(path);
  if (!os) throw DataError("manifest: cannot open " + path + " for writing");
  os << j.dump(2) << "\n";
}

void check_patient_disjoint(const RecordManifest& manifest) {
  std::vector<std::string> train, test;
  for (const auto& r : manifest.records)
    (r.split == "train" ? train : test).push_back(r.patient);
  for (const auto& p : train)
    if (std::find(test.begin(), test.end(), p) != test.end())
      throw DataError("manifest: patient '" + p + "' appears in both train and test splits");
}

WindowsManifest preprocess_manifest(const RecordManifest& manifest,
                                    const std::string& out_dir) {
  if (manifest.records.empty()) throw DataError("preprocess: manifest has no records");
  check_patient_disjoint(manifest);
  fs::create_directories(fs::path(out_dir) / "cache");

  WindowsManifest wm;
  wm.entries.resize(manifest.records.size());
  parallel_chunks(manifest.records.size(), 2, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const auto& entry = manifest.records[i];
      const std::string record_id = fs::path(entry.raw_path).stem().string();
      auto rec = parse_edf_recording(entry.raw_path, entry.patient, record_id);
      auto events = parse_annotations_csv(entry.annotation_path);
      auto windows = preprocess_recording(rec, events);
      char name[64];
      std::snprintf(name, sizeof(name), "%04zu_%s.ewin", i, record_id.c_str());
      const std::string cache_path = (fs::path(out_dir) / "cache" / name).string();
      save_window_cache(cache_path, windows);
      WindowCacheEntry& ce = wm.entries[i];
      ce.cache_path = cache_path;
      ce.split = entry.split;
      ce.patient = entry.patient;
      ce.record = record_id;
      ce.count = windows.size();
      ce.seizure = static_cast<std::size_t>(
          std::count_if(windows.begin(), windows.end(), [](const Window& w) { return w.label; }));
    }
  });
  save_windows_manifest((fs::path(out_dir) / "windows_manifest.json").string(), wm);
  return wm;
}

WindowsManifest load_windows_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("windows manifest: cannot open " + path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw DataError("windows manifest: invalid JSON: " + std::string(e.what()));
  }
  if (!j.contains("windows") || !j["windows"].is_array())
    throw DataError("windows manifest: missing 'windows' array in " + path);
  const fs::path base = fs::path(path).parent_path();
  WindowsManifest m;
  for (const auto& r : j["windows"]) {
    WindowCacheEntry e;
    try {
      e.cache_path = r.at("cache").get<std::string>();
      e.split = r.at("split").get<std::string>();
      e.patient = r.at("patient").get<std::string>();
      e.record = r.at("record").get<std::string>();
      e.count = r.at("count").get<std::size_t>();
      e.seizure = r.at("seizure").get<std::size_t>();
    } catch (const json::exception& ex) {
      throw DataError(std::string("windows manifest: bad entry: ") + ex.what());
    }
    if (fs::path(e.cache_path).is_relative()) e.cache_path = (base / e.cache_path).string();
    m.entries.push_back(std::move(e));
  }
  return m;
}

void save_windows_manifest(const std::string& path, const WindowsManifest& m) {
  json j;
  j["windows"] = json::array();
  const fs::path base = fs::path(path).parent_path();
  for (const auto& e : m.entries) {
    std::string rel = e.cache_path;
    const auto prox = fs::proximate(e.cache_path, base);
    if (!prox.empty()) rel = prox.string();
    j["windows"].push_back({{"cache", rel},
                            {"split", e.split},
                            {"patient", e.patient},
                            {"record", e.record},
                            {"count", e.count},
                            {"seizure", e.seizure}});
  }
  std::ofstream os(path);
  if (!os) throw DataError("windows manifest: cannot open " + path + " for writing");
  os << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Synthetic corpus.
// ---------------------------------------------------------------------------

namespace {

struct SineComponent {
  double freq, amp, phase;
};

void render_record(Rng& rng, const SynthOptions& opts,
                   const std::vector<double>& shared_phase,
                   std::vector<std::vector<double>>& channels,
                   std::vector<AnnotationEvent>& events) {
  const std::size_t n = static_cast<std::size_t>(opts.duration_s * static_cast<double>(opts.fs));
  const double dt = 1.0 / static_cast<double>(opts.fs);

  // Background: a fixed set of low frequencies with 1/f-ish amplitudes;
  // per-channel amplitude/phase variation.
  const double base_freqs[] = {1.3, 2.7, 5.1, 8.7, 13.1};
  const double base_amps[] = {24, 18, 14, 10, 7};

  channels.assign(kNumChannels, std::vector<double>(n, 0.0));
  // Background phases are corpus-wide (rhythms shared across patients, as
  // scalp rhythms are); what varies per record/channel is the amplitude
  // profile, plus the bursts. Channels then live in a low-dimensional
  // subspace the encoder can compress without loss.
  std::vector<std::vector<SineComponent>> comp(kNumChannels);
  for (std::size_t c = 0; c < kNumChannels; ++c) {
    for (std::size_t k = 0; k < std::size(base_freqs); ++k) {
      comp[c].push_back({base_freqs[k], base_amps[k] * rng.uniform(0.7, 1.3),
                         shared_phase[k]});
    }
  }

  // Seizure events, one per slot, kept away from the record edges.
  events.clear();
  struct Burst {
    double start, stop, freq, phase;
    std::array<double, kNumChannels> scale;
  };
  std::vector<Burst> bursts;
  const double record_burst_freq = rng.uniform(18.0, 22.0);
  const double slot = opts.duration_s / static_cast<double>(opts.seizure_events + 1);
  for (std::size_t e = 0; e < opts.seizure_events; ++e) {
    const double center = slot * static_cast<double>(e + 1);
    const double max_len = std::min(12.0, 0.6 * slot);
    if (max_len < 2.0) continue;
    Burst b;
    const double len = rng.uniform(0.6 * max_len, max_len);
    const double jitter = rng.uniform(-0.2 * slot, 0.2 * slot);
    b.start = std::clamp(center + jitter - len / 2, 2.0, opts.duration_s - len - 2.0);
    b.stop = b.start + len;
    b.freq = record_burst_freq;
    b.phase = rng.uniform(0.0, 2.0 * M_PI);
    for (auto& s : b.scale) s = rng.uniform(0.6, 1.0);
    bursts.push_back(b);
    events.push_back({b.start, b.stop});
  }

  for (std::size_t c = 0; c < kNumChannels; ++c) {
    auto& x = channels[c];
    for (std::size_t t = 0; t < n; ++t) {
      const double time = static_cast<double>(t) * dt;
      double v = 0;
      for (const auto& s : comp[c]) v += s.amp * std::sin(2.0 * M_PI * s.freq * time + s.phase);
      v += rng.normal() * 0.5;
      x[t] = v;
    }
  }
  for (const auto& b : bursts) {
    const double burst_amp = 55.0;
    const double ramp = 1.0;
    const std::size_t t0 = static_cast<std::size_t>(b.start * opts.fs);
    const std::size_t t1 = std::min(n, static_cast<std::size_t>(b.stop * opts.fs));
    for (std::size_t c = 0; c < kNumChannels; ++c) {
      for (std::size_t t = t0; t < t1; ++t) {
        const double time = static_cast<double>(t) * dt;
        const double into = time - b.start;
        const double left = b.stop - time;
        double env = 1.0;
        if (into < ramp) env = 0.5 - 0.5 * std::cos(M_PI * into / ramp);
        if (left < ramp) env = std::min(env, 0.5 - 0.5 * std::cos(M_PI * left / ramp));
        channels[c][t] += burst_amp * b.scale[c] * env *
                          std::sin(2.0 * M_PI * b.freq * time + b.phase);
      }
    }
  }
}

void write_annotation_csv(const std::string& path, const std::vector<AnnotationEvent>& events,
                          double duration) {
  std::ofstream os(path);
  if (!os) throw DataError("synth: cannot open " + path + " for writing");
  os << "# version = csv_v1.0.0\n";
  os << "channel,start_time,stop_time,label,confidence\n";
  char buf[128];
  double cursor = 0.0;
  for (const auto& e : events) {
    if (e.start > cursor) {
      std::snprintf(buf, sizeof(buf), "TERM,%.4f,%.4f,bckg,1.0000\n", cursor, e.start);
      os << buf;
    }
    std::snprintf(buf, sizeof(buf), "TERM,%.4f,%.4f,seiz,1.0000\n", e.start, e.stop);
    os << buf;
    cursor = e.stop;
  }
  if (cursor < duration) {
    std::snprintf(buf, sizeof(buf), "TERM,%.4f,%.4f,bckg,1.0000\n", cursor, duration);
    os << buf;
  }
}

}  // namespace

std::string make_synth_corpus(const std::string& out_dir, const SynthOptions& opts) {
  if (opts.train_patients == 0 || opts.fs < 64 || opts.duration_s < kWindowSeconds)
    throw ConfigError("synth: need at least one train patient, fs >= 64, duration >= 10 s");
  fs::create_directories(out_dir);
  Rng root(opts.seed);
  std::vector<double> shared_phase(5);
  for (auto& p : shared_phase) p = root.uniform(0.0, 2.0 * M_PI);
  RecordManifest manifest;

  const std::size_t total = opts.train_patients + opts.test_patients;
  for (std::size_t p = 0; p < total; ++p) {
    char pid[32];
    std::snprintf(pid, sizeof(pid), "synthP%02zu", p);
    const std::string split = p < opts.train_patients ? "train" : "test";
    for (std::size_t r = 0; r < opts.records_per_patient; ++r) {
      Rng rec_rng = root.fork(p * 1000 + r);
      std::vector<std::vector<double>> channels;
      std::vector<AnnotationEvent> events;
      render_record(rec_rng, opts, shared_phase, channels, events);

      char stem[64];
      std::snprintf(stem, sizeof(stem), "%s_r%02zu", pid, r);
      const std::string edf_path = (fs::path(out_dir) / (std::string(stem) + ".edf")).string();
      const std::string csv_path = (fs::path(out_dir) / (std::string(stem) + ".csv")).string();

      std::vector<std::string> labels;
      for (const char* name : kChannelNames) labels.push_back("EEG " + std::string(name) + "-REF");
      EdfWriteSpec spec;
      spec.patient = pid;
      spec.samples_per_record = opts.fs;
      write_edf(edf_path, labels, channels, spec);
      write_annotation_csv(csv_path, events, opts.duration_s);

      ManifestEntry e;
      e.raw_path = std::string(stem) + ".edf";
      e.annotation_path = std::string(stem) + ".csv";
      e.split = split;
      e.patient = pid;
      manifest.records.push_back(e);
    }
  }
  const std::string manifest_path = (fs::path(out_dir) / "manifest.json").string();
  save_manifest(manifest_path, manifest);
  return manifest_path;
}

}  // namespace essm::ingest
