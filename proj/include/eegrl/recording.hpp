#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <regex>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "eegrl/preprocess.hpp"
#include "eegrl/tensor.hpp"

namespace eegrl {

struct TrialMark {
  std::size_t start = 0;  // sample index
  int label = 0;          // task label 1..4
};

/// Continuous multichannel recording; `samples` holds one row per time point.
struct Recording {
  std::string subject;
  int run = 0;
  double rate = 160.0;
  Tensor samples;  // T × channels
  std::vector<TrialMark> trials;
  std::vector<std::uint8_t> clear;  // optional per-sample ground truth (synthetic data)

  std::size_t channels() const { return samples.empty() ? 0 : samples.cols(); }
  std::size_t length() const { return samples.empty() ? 0 : samples.rows(); }
};

struct IngestOptions {
  std::size_t channels = 64;
  double rate = 160.0;
};

inline void validate_recording(const Recording& r, const IngestOptions& opt, const std::string& source) {
  if (r.channels() != opt.channels)
    throw ParseError(source + ": recording has " + std::to_string(r.channels()) + " channels, expected " +
                     std::to_string(opt.channels));
  if (std::abs(r.rate - opt.rate) > 1e-9)
    throw ParseError(source + ": sample rate is " + std::to_string(r.rate) + " Hz, expected " + std::to_string(opt.rate) +
                     " Hz");
  for (const auto& t : r.trials)
    if (t.label < 1 || t.label > 4) throw ParseError(source + ": trial label " + std::to_string(t.label) + " outside 1..4");
}

// ---------------------------------------------------------------------------------------
// Plain matrix format:
//   channels=<c> rate=<hz> trials=<n> [subject=<id>]
//   <start_sample>,<label>          (n lines)
//   <v_1> <v_2> ... <v_c>           (one line per time point; commas or blanks)

namespace detail {

class TextCursor {
 public:
  TextCursor(std::string_view text, std::string source) : text_(text), source_(std::move(source)) {}

  bool at_end() const { return pos_ >= text_.size(); }
  std::size_t offset() const { return pos_; }

  /// Next line without its terminator; empty optional at end of input.
  std::optional<std::string_view> line() {
    if (at_end()) return std::nullopt;
    const std::size_t start = pos_;
    std::size_t end = text_.find('\n', pos_);
    if (end == std::string_view::npos) end = text_.size();
    pos_ = end + 1;
    line_start_ = start;
    std::string_view l = text_.substr(start, end - start);
    if (!l.empty() && l.back() == '\r') l.remove_suffix(1);
    return l;
  }

  std::size_t line_start() const { return line_start_; }

  [[noreturn]] void fail(const std::string& what, std::size_t offset) const {
    throw ParseError(source_ + ": " + what + " at byte offset " + std::to_string(offset));
  }

 private:
  std::string_view text_;
  std::string source_;
  std::size_t pos_ = 0;
  std::size_t line_start_ = 0;
};

inline bool is_sep(char c) { return c == ',' || c == ' ' || c == '\t'; }

/// Splits on commas and blanks; returns (token, offset within line) pairs.
inline std::vector<std::pair<std::string_view, std::size_t>> tokens(std::string_view line) {
  std::vector<std::pair<std::string_view, std::size_t>> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && is_sep(line[i])) ++i;
    const std::size_t s = i;
    while (i < line.size() && !is_sep(line[i])) ++i;
    if (i > s) out.emplace_back(line.substr(s, i - s), s);
  }
  return out;
}

template <class T>
bool parse_number(std::string_view s, T& out) {
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

}  // namespace detail

inline Recording parse_matrix_text(std::string_view text, const std::string& source = "matrix") {
  detail::TextCursor cur(text, source);
  auto header = cur.line();
  if (!header) cur.fail("empty file, expected 'channels=... rate=... trials=...' header", 0);
  Recording rec;
  std::size_t channels = 0, n_trials = 0;
  bool have_c = false, have_r = false, have_t = false;
  for (auto [tok, off] : detail::tokens(*header)) {
    const auto eq = tok.find('=');
    if (eq == std::string_view::npos) cur.fail("malformed header field '" + std::string(tok) + "'", off);
    const auto key = tok.substr(0, eq);
    const auto val = tok.substr(eq + 1);
    bool ok = true;
    if (key == "channels") ok = have_c = detail::parse_number(val, channels);
    else if (key == "rate") ok = have_r = detail::parse_number(val, rec.rate);
    else if (key == "trials") ok = have_t = detail::parse_number(val, n_trials);
    else if (key == "subject") rec.subject = std::string(val);
    else if (key == "run") ok = detail::parse_number(val, rec.run);
    if (!ok) cur.fail("bad value in header field '" + std::string(tok) + "'", off);
  }
  if (!have_c || !have_r || !have_t) cur.fail("header must declare channels, rate and trials", 0);
  if (channels == 0) cur.fail("header declares zero channels", 0);

  for (std::size_t i = 0; i < n_trials; ++i) {
    auto l = cur.line();
    if (!l) cur.fail("file truncated: expected " + std::to_string(n_trials) + " trial annotations, found " + std::to_string(i), text.size());
    const auto tk = detail::tokens(*l);
    TrialMark m;
    if (tk.size() != 2 || !detail::parse_number(tk[0].first, m.start) || !detail::parse_number(tk[1].first, m.label))
      cur.fail("expected 'start_sample,label' annotation", cur.line_start());
    rec.trials.push_back(m);
  }

  std::vector<double> data;
  std::size_t rows = 0;
  while (auto l = cur.line()) {
    if (l->find_first_not_of(" \t,") == std::string_view::npos) continue;
    const auto tk = detail::tokens(*l);
    if (tk.size() != channels)
      cur.fail("sample row has " + std::to_string(tk.size()) + " values, expected " + std::to_string(channels),
               cur.line_start());
    for (auto [tok, off] : tk) {
      double v = 0.0;
      if (!detail::parse_number(tok, v)) cur.fail("invalid number '" + std::string(tok) + "'", cur.line_start() + off);
      data.push_back(v);
    }
    ++rows;
  }
  rec.samples = Tensor({rows, channels}, std::move(data));
  return rec;
}

inline void write_matrix_text(std::ostream& os, const Recording& rec) {
  os << "channels=" << rec.channels() << " rate=" << rec.rate << " trials=" << rec.trials.size();
  if (!rec.subject.empty()) os << " subject=" << rec.subject;
  if (rec.run) os << " run=" << rec.run;
  os << '\n';
  for (const auto& t : rec.trials) os << t.start << ',' << t.label << '\n';
  os << std::setprecision(17);
  for (std::size_t r = 0; r < rec.length(); ++r) {
    const auto row = rec.samples.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) os << (c ? " " : "") << row[c];
    os << '\n';
  }
}

// ---------------------------------------------------------------------------------------
// EDF+ subset: 16-bit data records, one "EDF Annotations" signal carrying T0/T1/T2 codes.

/// Task label for an annotation code in a given run; T0 (rest) yields no trial.
inline std::optional<int> task_label(int run, std::string_view code) {
  if (code == "T0") return std::nullopt;
  if (code != "T1" && code != "T2")
    throw ParseError("unknown annotation code '" + std::string(code) + "' (valid codes: T0, T1, T2)");
  const bool second = code == "T2";
  switch (run) {
    case 3: case 4: case 7: case 8: case 11: case 12:
      return second ? 2 : 1;
    case 5: case 6: case 9: case 10: case 13: case 14:
      return second ? 4 : 3;
    default:
      throw ParseError("run " + std::to_string(run) + " has no motor task, cannot map annotation " + std::string(code));
  }
}

inline std::string task_code(int run, int label) {
  for (const char* code : {"T1", "T2"})
    if (task_label(run, code) == label) return code;
  throw ContractError("label " + std::to_string(label) + " does not occur in run " + std::to_string(run));
}

/// Run number from a file name of the form S001R04.edf.
inline int run_from_filename(const std::string& path) {
  static const std::regex re(R"([Ss](\d+)[Rr](\d+))");
  std::smatch m;
  const std::string name = std::filesystem::path(path).filename().string();
  if (!std::regex_search(name, m, re)) return 0;
  return std::stoi(m[2].str());
}

inline std::string subject_from_filename(const std::string& path) {
  static const std::regex re(R"(([Ss]\d+)[Rr]\d+)");
  std::smatch m;
  const std::string name = std::filesystem::path(path).filename().string();
  return std::regex_search(name, m, re) ? m[1].str() : std::string();
}

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(' ');
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(' ');
  return std::string(s.substr(b, e - b + 1));
}

struct EdfField {
  std::string_view bytes;
  std::size_t offset;
};

template <class T>
T edf_number(const EdfField& f, const std::string& source, const char* what) {
  const std::string s = trim(f.bytes);
  T v{};
  if (!parse_number(std::string_view(s), v))
    throw ParseError(source + ": invalid " + what + " '" + s + "' at byte offset " + std::to_string(f.offset));
  return v;
}

}  // namespace detail

inline Recording parse_edf(std::string_view bytes, const std::string& source, int run) {
  auto field = [&](std::size_t off, std::size_t len, const char* what) {
    if (off + len > bytes.size())
      throw ParseError(source + ": file truncated in " + what + " at byte offset " + std::to_string(bytes.size()));
    return detail::EdfField{bytes.substr(off, len), off};
  };
  const auto header_bytes = detail::edf_number<std::size_t>(field(184, 8, "header size"), source, "header size");
  auto n_records = detail::edf_number<long long>(field(236, 8, "record count"), source, "record count");
  const auto duration = detail::edf_number<double>(field(244, 8, "record duration"), source, "record duration");
  const auto ns = detail::edf_number<std::size_t>(field(252, 4, "signal count"), source, "signal count");
  if (header_bytes != 256 * (ns + 1))
    throw ParseError(source + ": header size " + std::to_string(header_bytes) + " does not match " + std::to_string(ns) +
                     " signals");
  if (!(duration > 0.0)) throw ParseError(source + ": record duration must be positive");

  std::vector<std::string> labels(ns);
  std::vector<double> pmin(ns), pmax(ns), dmin(ns), dmax(ns);
  std::vector<std::size_t> spr(ns);
  const std::size_t base = 256;
  for (std::size_t s = 0; s < ns; ++s) {
    labels[s] = detail::trim(field(base + s * 16, 16, "signal labels").bytes);
    pmin[s] = detail::edf_number<double>(field(base + ns * 104 + s * 8, 8, "physical minimum"), source, "physical minimum");
    pmax[s] = detail::edf_number<double>(field(base + ns * 112 + s * 8, 8, "physical maximum"), source, "physical maximum");
    dmin[s] = detail::edf_number<double>(field(base + ns * 120 + s * 8, 8, "digital minimum"), source, "digital minimum");
    dmax[s] = detail::edf_number<double>(field(base + ns * 128 + s * 8, 8, "digital maximum"), source, "digital maximum");
    spr[s] = detail::edf_number<std::size_t>(field(base + ns * 216 + s * 8, 8, "samples per record"), source,
                                             "samples per record");
  }

  std::size_t record_bytes = 0;
  for (std::size_t s = 0; s < ns; ++s) record_bytes += 2 * spr[s];
  if (record_bytes == 0) throw ParseError(source + ": data records are empty");
  const std::size_t available = bytes.size() > header_bytes ? (bytes.size() - header_bytes) / record_bytes : 0;
  if (n_records < 0) n_records = static_cast<long long>(available);
  if (static_cast<std::size_t>(n_records) > available)
    throw ParseError(source + ": file truncated: header declares " + std::to_string(n_records) + " data records but data ends at byte offset " +
                     std::to_string(bytes.size()) + " (expected " +
                     std::to_string(header_bytes + static_cast<std::size_t>(n_records) * record_bytes) + ")");

  std::vector<std::size_t> eeg;
  std::optional<std::size_t> annot;
  for (std::size_t s = 0; s < ns; ++s) {
    if (labels[s] == "EDF Annotations") annot = s;
    else eeg.push_back(s);
  }
  if (eeg.empty()) throw ParseError(source + ": no data signals");
  for (std::size_t s : eeg)
    if (spr[s] != spr[eeg.front()]) throw ParseError(source + ": data signals have different sample rates");

  Recording rec;
  rec.run = run;
  rec.subject = subject_from_filename(source);
  rec.rate = static_cast<double>(spr[eeg.front()]) / duration;
  const std::size_t per = spr[eeg.front()];
  const auto records = static_cast<std::size_t>(n_records);
  rec.samples = Tensor::matrix(records * per, eeg.size());

  std::vector<std::pair<double, std::string>> events;
  std::size_t off = header_bytes;
  for (std::size_t r = 0; r < records; ++r) {
    for (std::size_t s = 0; s < ns; ++s) {
      const char* p = bytes.data() + off;
      if (annot && s == *annot) {
        std::string_view tal(p, 2 * spr[s]);
        std::size_t i = 0;
        while (i < tal.size() && tal[i] != '\0') {
          const std::size_t end = tal.find('\0', i);
          const std::string_view one = tal.substr(i, end == std::string_view::npos ? tal.size() - i : end - i);
          i = end == std::string_view::npos ? tal.size() : end + 1;
          const std::size_t t20 = one.find('\x14');
          if (t20 == std::string_view::npos) continue;
          std::string_view onset_s = one.substr(0, t20);
          if (const auto d = onset_s.find('\x15'); d != std::string_view::npos) onset_s = onset_s.substr(0, d);
          double onset = 0.0;
          const std::string os_str(onset_s.substr(onset_s.size() && onset_s[0] == '+' ? 1 : 0));
          if (!detail::parse_number(std::string_view(os_str), onset))
            throw ParseError(source + ": bad annotation onset at byte offset " + std::to_string(off));
          std::size_t k = t20 + 1;
          while (k < one.size()) {
            const std::size_t e = one.find('\x14', k);
            const std::string_view text = one.substr(k, (e == std::string_view::npos ? one.size() : e) - k);
            if (!text.empty()) events.emplace_back(onset, std::string(text));
            k = e == std::string_view::npos ? one.size() : e + 1;
          }
        }
      } else {
        const std::size_t col = static_cast<std::size_t>(std::find(eeg.begin(), eeg.end(), s) - eeg.begin());
        const double scale = (pmax[s] - pmin[s]) / (dmax[s] - dmin[s]);
        for (std::size_t k = 0; k < spr[s]; ++k) {
          std::int16_t d;
          std::memcpy(&d, p + 2 * k, 2);
          rec.samples.at(r * per + k, col) = (static_cast<double>(d) - dmin[s]) * scale + pmin[s];
        }
      }
      off += 2 * spr[s];
    }
  }

  for (const auto& [onset, code] : events) {
    const auto label = task_label(run, code);
    if (!label) continue;
    rec.trials.push_back({static_cast<std::size_t>(std::llround(onset * rec.rate)), *label});
  }
  return rec;
}

/// Writes an EDF+ file with 1 s records and an annotation signal (the subset parse_edf reads).
inline void write_edf(std::ostream& os, const Recording& rec, int run) {
  const std::size_t ch = rec.channels();
  const auto per = static_cast<std::size_t>(std::llround(rec.rate));
  const std::size_t records = (rec.length() + per - 1) / per;
  const std::size_t ns = ch + 1;
  const std::size_t annot_spr = 64;

  std::vector<std::vector<std::string>> tal(records);
  for (std::size_t r = 0; r < records; ++r) tal[r].push_back("+" + std::to_string(r) + "\x14\x14");
  for (const auto& t : rec.trials) {
    const double onset = static_cast<double>(t.start) / rec.rate;
    std::ostringstream s;
    s << '+' << std::setprecision(10) << onset << '\x15' << "4.1" << '\x14' << task_code(run, t.label) << '\x14';
    tal[std::min(records - 1, t.start / per)].push_back(s.str());
  }

  auto pad = [&](std::string s, std::size_t w) {
    s.resize(w, ' ');
    os << s;
  };
  auto num = [&](double v, std::size_t w) {
    std::ostringstream s;
    s << std::setprecision(static_cast<int>(w) - 2) << v;
    std::string str = s.str();
    if (str.size() > w) str = str.substr(0, w);
    pad(str, w);
  };
  pad("0", 8);
  pad(rec.subject.empty() ? "X" : rec.subject, 80);
  pad("Startdate X", 80);
  pad("01.01.09", 8);
  pad("00.00.00", 8);
  num(static_cast<double>(256 * (ns + 1)), 8);
  pad("EDF+C", 44);
  num(static_cast<double>(records), 8);
  pad("1", 8);
  num(static_cast<double>(ns), 4);

  std::vector<double> lo(ch, 0.0), hi(ch, 0.0);
  for (std::size_t c = 0; c < ch; ++c) {
    lo[c] = hi[c] = rec.length() ? rec.samples.at(0, c) : 0.0;
    for (std::size_t t = 0; t < rec.length(); ++t) {
      lo[c] = std::min(lo[c], rec.samples.at(t, c));
      hi[c] = std::max(hi[c], rec.samples.at(t, c));
    }
    if (hi[c] - lo[c] < 1e-9) hi[c] = lo[c] + 1.0;
  }
  for (std::size_t s = 0; s < ns; ++s) pad(s < ch ? "Ch" + std::to_string(s + 1) : "EDF Annotations", 16);
  for (std::size_t s = 0; s < ns; ++s) pad("", 80);
  for (std::size_t s = 0; s < ns; ++s) pad(s < ch ? "uV" : "", 8);
  for (std::size_t s = 0; s < ns; ++s) num(s < ch ? lo[s] : -1.0, 8);
  for (std::size_t s = 0; s < ns; ++s) num(s < ch ? hi[s] : 1.0, 8);
  for (std::size_t s = 0; s < ns; ++s) pad("-32768", 8);
  for (std::size_t s = 0; s < ns; ++s) pad("32767", 8);
  for (std::size_t s = 0; s < ns; ++s) pad("", 80);
  for (std::size_t s = 0; s < ns; ++s) num(static_cast<double>(s < ch ? per : annot_spr), 8);
  for (std::size_t s = 0; s < ns; ++s) pad("", 32);

  // Re-read the ranges as the header prints them so quantization matches what a reader sees.
  for (std::size_t c = 0; c < ch; ++c) {
    std::ostringstream a, b;
    a << std::setprecision(6) << lo[c];
    b << std::setprecision(6) << hi[c];
    lo[c] = std::stod(a.str());
    hi[c] = std::stod(b.str());
  }
  for (std::size_t r = 0; r < records; ++r) {
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t k = 0; k < per; ++k) {
        const std::size_t t = r * per + k;
        const double v = t < rec.length() ? rec.samples.at(t, c) : lo[c];
        const double d = std::clamp(std::round((v - lo[c]) / (hi[c] - lo[c]) * 65535.0 - 32768.0), -32768.0, 32767.0);
        const auto q = static_cast<std::int16_t>(d);
        os.write(reinterpret_cast<const char*>(&q), 2);
      }
    std::string block;
    for (const auto& s : tal[r]) block += s + '\0';
    if (block.size() > 2 * annot_spr) throw ContractError("write_edf: too many annotations in one record");
    block.resize(2 * annot_spr, '\0');
    os.write(block.data(), static_cast<std::streamsize>(block.size()));
  }
}

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

enum class RecordingFormat { Auto, Edf, Matrix };

/// Reads one recording; format is guessed from the extension when Auto.
inline Recording ingest(const std::string& path, RecordingFormat format = RecordingFormat::Auto,
                        const IngestOptions& opt = {}, int run = 0) {
  if (!std::filesystem::exists(path)) throw Error("input file '" + path + "' does not exist");
  if (format == RecordingFormat::Auto) {
    auto ext = std::filesystem::path(path).extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    format = ext == ".edf" ? RecordingFormat::Edf : RecordingFormat::Matrix;
  }
  const std::string bytes = read_file_bytes(path);
  Recording rec;
  if (format == RecordingFormat::Edf) {
    if (run == 0) run = run_from_filename(path);
    if (run == 0) throw ParseError(path + ": cannot infer the run number (expected a name like S001R04.edf)");
    rec = parse_edf(bytes, path, run);
  } else {
    rec = parse_matrix_text(bytes, path);
  }
  validate_recording(rec, opt, path);
  return rec;
}

// ---------------------------------------------------------------------------------------

struct PreprocessConfig {
  double notch_freq = 50.0;
  double notch_q = 30.0;
  double trial_seconds = 4.0;
  bool notch = true;
};

/// One task trial after preprocessing: samples is trial_length × channels.
struct Trial {
  int label = 0;
  std::string subject;
  Tensor samples;
  std::vector<std::uint8_t> clear;
};

/// Notch-filters each channel of the continuous recording, cuts the trials, then
/// z-normalizes every channel within each trial.
inline std::vector<Trial> preprocess(const Recording& rec, const PreprocessConfig& cfg = {}) {
  const std::size_t ch = rec.channels();
  const std::size_t len = rec.length();
  Tensor filtered = rec.samples;
  if (cfg.notch) {
    std::vector<double> col(len);
    for (std::size_t c = 0; c < ch; ++c) {
      for (std::size_t t = 0; t < len; ++t) col[t] = filtered.at(t, c);
      notch_filter(col, cfg.notch_freq, rec.rate, cfg.notch_q);
      for (std::size_t t = 0; t < len; ++t) filtered.at(t, c) = col[t];
    }
  }
  const auto trial_len = static_cast<std::size_t>(std::llround(cfg.trial_seconds * rec.rate));
  std::vector<Trial> out;
  std::vector<double> col(trial_len);
  for (std::size_t i = 0; i < rec.trials.size(); ++i) {
    const auto& m = rec.trials[i];
    if (m.start + trial_len > len) {
      warn("preprocess: trial " + std::to_string(i) + " of " + (rec.subject.empty() ? "recording" : rec.subject) +
           " runs past the end of the recording; skipped");
      continue;
    }
    Trial tr;
    tr.label = m.label;
    tr.subject = rec.subject;
    tr.samples = Tensor::matrix(trial_len, ch);
    for (std::size_t c = 0; c < ch; ++c) {
      for (std::size_t t = 0; t < trial_len; ++t) col[t] = filtered.at(m.start + t, c);
      znorm(col);
      for (std::size_t t = 0; t < trial_len; ++t) tr.samples.at(t, c) = col[t];
    }
    if (!rec.clear.empty())
      tr.clear.assign(rec.clear.begin() + static_cast<std::ptrdiff_t>(m.start),
                      rec.clear.begin() + static_cast<std::ptrdiff_t>(m.start + trial_len));
    out.push_back(std::move(tr));
  }
  return out;
}

}  // namespace eegrl
