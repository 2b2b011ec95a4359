#include "essm/edf.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "essm/errors.hpp"

namespace essm::ingest {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(' ');
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(' ');
  return s.substr(b, e - b + 1);
}

std::string read_field(std::istream& is, std::size_t width, const char* what) {
  std::string buf(width, '\0');
  is.read(buf.data(), static_cast<std::streamsize>(width));
  if (!is) throw DataError(std::string("EDF: truncated header while reading ") + what);
  return buf;
}

long parse_long(const std::string& raw, const char* what) {
  const std::string s = trim(raw);
  if (s.empty()) throw DataError(std::string("EDF: empty numeric header field ") + what);
  std::size_t pos = 0;
  long v = 0;
  try {
    v = std::stol(s, &pos);
  } catch (const std::exception&) {
    throw DataError(std::string("EDF: malformed numeric header field ") + what + ": '" + s + "'");
  }
  if (pos != s.size())
    throw DataError(std::string("EDF: malformed numeric header field ") + what + ": '" + s + "'");
  return v;
}

double parse_double(const std::string& raw, const char* what) {
  const std::string s = trim(raw);
  if (s.empty()) throw DataError(std::string("EDF: empty numeric header field ") + what);
  std::size_t pos = 0;
  double v = 0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw DataError(std::string("EDF: malformed numeric header field ") + what + ": '" + s + "'");
  }
  if (pos != s.size())
    throw DataError(std::string("EDF: malformed numeric header field ") + what + ": '" + s + "'");
  return v;
}

std::string pad_field(const std::string& s, std::size_t width) {
  std::string out = s.substr(0, width);
  out.resize(width, ' ');
  return out;
}

std::string format_double_field(double v, std::size_t width) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return pad_field(buf, width);
}

}  // namespace

EdfFile read_edf(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("EDF: cannot open " + path);

  const std::string version = trim(read_field(is, 8, "version"));
  if (version != "0")
    throw DataError("EDF: unsupported version field '" + version + "' (expected \"0\")");

  EdfFile f;
  f.patient = trim(read_field(is, 80, "patient"));
  f.recording = trim(read_field(is, 80, "recording"));
  f.start_date = trim(read_field(is, 8, "start date"));
  f.start_time = trim(read_field(is, 8, "start time"));
  const long header_bytes = parse_long(read_field(is, 8, "header size"), "header size");
  read_field(is, 44, "reserved");
  const long n_records = parse_long(read_field(is, 8, "record count"), "record count");
  f.record_duration = parse_double(read_field(is, 8, "record duration"), "record duration");
  const long n_signals = parse_long(read_field(is, 4, "signal count"), "signal count");

  if (n_signals <= 0) throw DataError("EDF: zero signals in header");
  if (n_records < 0) throw DataError("EDF: negative record count");
  if (f.record_duration <= 0) throw DataError("EDF: non-positive record duration");
  if (header_bytes != 256 * (n_signals + 1))
    throw DataError("EDF: header size field " + std::to_string(header_bytes) +
                    " inconsistent with " + std::to_string(n_signals) + " signals");

  const auto ns = static_cast<std::size_t>(n_signals);
  f.n_records = static_cast<std::size_t>(n_records);
  f.signals.resize(ns);

  // Signal header fields are stored field-major: all labels, all transducers, ...
  for (auto& s : f.signals) s.label = trim(read_field(is, 16, "label"));
  for (auto& s : f.signals) s.transducer = trim(read_field(is, 80, "transducer"));
  for (auto& s : f.signals) s.phys_dim = trim(read_field(is, 8, "physical dimension"));
  for (auto& s : f.signals)
    s.phys_min = parse_double(read_field(is, 8, "physical min"), "physical min");
  for (auto& s : f.signals)
    s.phys_max = parse_double(read_field(is, 8, "physical max"), "physical max");
  for (auto& s : f.signals)
    s.dig_min = static_cast<int>(parse_long(read_field(is, 8, "digital min"), "digital min"));
  for (auto& s : f.signals)
    s.dig_max = static_cast<int>(parse_long(read_field(is, 8, "digital max"), "digital max"));
  for (auto& s : f.signals) s.prefilter = trim(read_field(is, 80, "prefilter"));
  for (auto& s : f.signals) {
    const long spr = parse_long(read_field(is, 8, "samples per record"), "samples per record");
    if (spr <= 0) throw DataError("EDF: non-positive samples-per-record");
    s.samples_per_record = static_cast<std::size_t>(spr);
  }
  for (std::size_t i = 0; i < ns; ++i) read_field(is, 32, "signal reserved");

  for (const auto& s : f.signals) {
    if (s.dig_max <= s.dig_min)
      throw DataError("EDF: signal '" + s.label + "' has empty digital range");
    if (s.phys_max == s.phys_min)
      throw DataError("EDF: signal '" + s.label + "' has empty physical range");
  }

  std::size_t record_samples = 0;
  for (const auto& s : f.signals) record_samples += s.samples_per_record;
  std::vector<std::int16_t> record(record_samples);

  f.data.resize(ns);
  for (std::size_t i = 0; i < ns; ++i)
    f.data[i].reserve(f.n_records * f.signals[i].samples_per_record);

  for (std::size_t r = 0; r < f.n_records; ++r) {
    is.read(reinterpret_cast<char*>(record.data()),
            static_cast<std::streamsize>(record_samples * 2));
    if (!is)
      throw DataError("EDF: truncated data record " + std::to_string(r) + " of " +
                      std::to_string(f.n_records));
    std::size_t off = 0;
    for (std::size_t i = 0; i < ns; ++i) {
      const auto& s = f.signals[i];
      const double scale = (s.phys_max - s.phys_min) /
                           (static_cast<double>(s.dig_max) - static_cast<double>(s.dig_min));
      for (std::size_t k = 0; k < s.samples_per_record; ++k) {
        const double d = static_cast<double>(record[off + k]);
        f.data[i].push_back((d - s.dig_min) * scale + s.phys_min);
      }
      off += s.samples_per_record;
    }
  }
  return f;
}

void write_edf(const std::string& path, const std::vector<std::string>& labels,
               const std::vector<std::vector<double>>& channels,
               const EdfWriteSpec& spec) {
  if (labels.size() != channels.size() || channels.empty())
    throw ConfigError("write_edf: need one label per channel");
  if (spec.samples_per_record == 0)
    throw ConfigError("write_edf: samples_per_record must be positive");
  const std::size_t n = channels.front().size();
  for (const auto& c : channels)
    if (c.size() != n) throw ConfigError("write_edf: channels differ in length");
  const std::size_t n_records = n / spec.samples_per_record;
  if (n_records == 0) throw ConfigError("write_edf: input shorter than one record");

  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("write_edf: cannot open " + path);

  const std::size_t ns = channels.size();
  os << pad_field("0", 8);
  os << pad_field(spec.patient, 80);
  os << pad_field(spec.recording, 80);
  os << pad_field("01.01.20", 8);
  os << pad_field("00.00.00", 8);
  os << pad_field(std::to_string(256 * (ns + 1)), 8);
  os << pad_field("", 44);
  os << pad_field(std::to_string(n_records), 8);
  os << format_double_field(spec.record_duration, 8);
  os << pad_field(std::to_string(ns), 4);

  for (const auto& l : labels) os << pad_field(l, 16);
  for (std::size_t i = 0; i < ns; ++i) os << pad_field("AgAgCl electrode", 80);
  for (std::size_t i = 0; i < ns; ++i) os << pad_field(spec.phys_dim, 8);
  for (std::size_t i = 0; i < ns; ++i) os << format_double_field(spec.phys_min, 8);
  for (std::size_t i = 0; i < ns; ++i) os << format_double_field(spec.phys_max, 8);
  for (std::size_t i = 0; i < ns; ++i) os << pad_field("-32768", 8);
  for (std::size_t i = 0; i < ns; ++i) os << pad_field("32767", 8);
  for (std::size_t i = 0; i < ns; ++i) os << pad_field("", 80);
  for (std::size_t i = 0; i < ns; ++i) os << pad_field(std::to_string(spec.samples_per_record), 8);
  for (std::size_t i = 0; i < ns; ++i) os << pad_field("", 32);

  const double scale = 65535.0 / (spec.phys_max - spec.phys_min);
  std::vector<std::int16_t> buf(spec.samples_per_record);
  for (std::size_t r = 0; r < n_records; ++r) {
    for (std::size_t c = 0; c < ns; ++c) {
      for (std::size_t k = 0; k < spec.samples_per_record; ++k) {
        const double v = channels[c][r * spec.samples_per_record + k];
        const double clipped = std::clamp(v, spec.phys_min, spec.phys_max);
        const double d = std::round((clipped - spec.phys_min) * scale - 32768.0);
        buf[k] = static_cast<std::int16_t>(std::clamp(d, -32768.0, 32767.0));
      }
      os.write(reinterpret_cast<const char*>(buf.data()),
               static_cast<std::streamsize>(buf.size() * 2));
    }
  }
  if (!os) throw DataError("write_edf: write failed for " + path);
}

}  // namespace essm::ingest
