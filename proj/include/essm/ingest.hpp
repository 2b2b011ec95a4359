#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "essm/edf.hpp"

namespace essm::ingest {

inline constexpr double kTargetRateHz = 200.0;
inline constexpr double kWindowSeconds = 10.0;
inline constexpr std::size_t kNumChannels = 19;
inline constexpr std::size_t kWindowSamples = 2000;

/// The unique 19-electrode set of the standard 10-20 montage, in canonical
/// order. EDF labels are matched case-insensitively after stripping an
/// "EEG " prefix and a "-REF" reference suffix.
extern const std::array<const char*, kNumChannels> kChannelNames;

struct RawRecording {
  std::vector<std::string> labels;              // canonical order
  std::vector<std::vector<double>> channels;    // microvolts
  double sample_rate = 0;
  std::string patient_id;
  std::string record_id;
};

/// Reads an EDF file and selects the 19 montage channels (all must be
/// present and share one sampling rate).
RawRecording parse_edf_recording(const std::string& path,
                                 const std::string& patient_id = "",
                                 const std::string& record_id = "");

/// Seizure interval in seconds; 0 <= start < stop.
struct AnnotationEvent {
  double start = 0;
  double stop = 0;
};

/// Accepts the term-based 5-column format `channel,start,stop,label,confidence`
/// and a generic 3-column `start,stop,label`; '#' comments and a header row are
/// skipped. Only rows whose label contains "seiz" (case-insensitive) are kept.
std::vector<AnnotationEvent> parse_annotations_csv(const std::string& path);

struct Window {
  std::vector<float> data;  // kNumChannels x kWindowSamples, z-scored per channel
  std::uint8_t label = 0;
  std::string record_id;
  double start_time = 0;  // seconds from record start
};

/// Splits a 200 Hz recording into non-overlapping 10 s windows (trailing
/// partial window dropped). A window is labeled 1 iff some event overlaps
/// [k*10, (k+1)*10) with positive measure. Channels are z-scored per window.
std::vector<Window> make_windows(const RawRecording& rec,
                                 const std::vector<AnnotationEvent>& events);

/// resample to 200 Hz -> notch (60/120 Hz, pruned to below Nyquist) -> windows.
std::vector<Window> preprocess_recording(const RawRecording& rec,
                                         const std::vector<AnnotationEvent>& events);

/// Binary cache: magic "EWIN", version u32, count u64, then per window
/// (label u8, record-id u32 length + bytes, start-time f64, 19x2000 f32).
/// Written to a temp file and atomically renamed.
void save_window_cache(const std::string& path, const std::vector<Window>& windows);
std::vector<Window> load_window_cache(const std::string& path);

struct ManifestEntry {
  std::string raw_path;
  std::string annotation_path;
  std::string split;  // "train" | "test"
  std::string patient;
};

struct RecordManifest {
  std::vector<ManifestEntry> records;
};

/// JSON manifest; relative paths resolve against the manifest's directory.
RecordManifest load_manifest(const std::string& path);
void save_manifest(const std::string& path, const RecordManifest& manifest);

/// Throws DataError if any patient id appears in both train and test splits.
void check_patient_disjoint(const RecordManifest& manifest);

struct WindowCacheEntry {
  std::string cache_path;
  std::string split;
  std::string patient;
  std::string record;
  std::size_t count = 0;
  std::size_t seizure = 0;
};

struct WindowsManifest {
  std::vector<WindowCacheEntry> entries;
};

/// Runs the preprocessing chain over every manifest record (file-level
/// parallelism, capped by EEG_SSM_THREADS) and writes one cache per record
/// under out_dir/cache. Returns the windows manifest, also saved as
/// out_dir/windows_manifest.json.
WindowsManifest preprocess_manifest(const RecordManifest& manifest,
                                    const std::string& out_dir);

WindowsManifest load_windows_manifest(const std::string& path);
void save_windows_manifest(const std::string& path, const WindowsManifest& m);

// ---------------------------------------------------------------------------
// Synthetic fixture corpus.
// ---------------------------------------------------------------------------

struct SynthOptions {
  std::size_t train_patients = 4;
  std::size_t test_patients = 2;
  std::size_t records_per_patient = 1;
  double duration_s = 200.0;
  std::size_t fs = 256;
  std::size_t seizure_events = 2;
  std::uint64_t seed = 0;
};

/// Fabricates EDF recordings (background: summed sines with 1/f-ish
/// amplitudes plus light noise; seizures: high-amplitude 16-24 Hz bursts),
/// csv annotations, and a manifest. Returns the manifest path.
std::string make_synth_corpus(const std::string& out_dir, const SynthOptions& opts);

}  // namespace essm::ingest
