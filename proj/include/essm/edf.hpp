#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace essm::ingest {

struct EdfSignalHeader {
  std::string label;
  std::string transducer;
  std::string phys_dim;
  double phys_min = 0;
  double phys_max = 0;
  int dig_min = 0;
  int dig_max = 0;
  std::string prefilter;
  std::size_t samples_per_record = 0;
};

/// One parsed EDF file with samples mapped to physical units via
/// v = (d - dig_min) * (phys_max - phys_min) / (dig_max - dig_min) + phys_min.
struct EdfFile {
  std::string patient;
  std::string recording;
  std::string start_date;
  std::string start_time;
  double record_duration = 1.0;  // seconds
  std::size_t n_records = 0;
  std::vector<EdfSignalHeader> signals;
  std::vector<std::vector<double>> data;  // per signal, physical units
};

/// Strict reader: 256-byte fixed header (version field must be "0"),
/// 256 bytes of headers per signal, then 16-bit little-endian two's-complement
/// data records. Malformed headers, zero signals, and truncated records raise
/// distinct DataErrors.
EdfFile read_edf(const std::string& path);

struct EdfWriteSpec {
  std::string patient = "X X X X";
  std::string recording = "Startdate X X X X";
  double record_duration = 1.0;
  double phys_min = -800.0;
  double phys_max = 800.0;
  std::string phys_dim = "uV";
  std::size_t samples_per_record = 0;  // per signal, = fs * record_duration
};

/// Writes channels (physical units) as int16 EDF; values are clipped to the
/// physical range before quantization. Trailing samples that do not fill a
/// whole record are dropped.
void write_edf(const std::string& path, const std::vector<std::string>& labels,
               const std::vector<std::vector<double>>& channels,
               const EdfWriteSpec& spec);

}  // namespace essm::ingest
