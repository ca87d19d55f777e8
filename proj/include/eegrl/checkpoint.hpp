#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <string>

#include <nlohmann/json.hpp>

#include "eegrl/gcn_model.hpp"

namespace eegrl {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

// Layout (little-endian):
//   "EEGRLCKP" | u32 version | u32 len, kind | u64 len, JSON metadata | u32 block count
//   per block: u32 len, name | u32 rank | u64 dims[rank] | f64 data[product(dims)]
inline constexpr char kCheckpointMagic[8] = {'E', 'E', 'G', 'R', 'L', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string kind;
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, Tensor> blocks;
};

namespace detail {

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

inline void put_string32(std::ostream& os, const std::string& s) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

class Reader {
 public:
  explicit Reader(std::istream& is) : is_(is) {}

  void bytes(char* out, std::size_t n, const char* what) {
    is_.read(out, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n)
      throw ParseError(std::string("checkpoint truncated while reading ") + what + " at byte offset " +
                       std::to_string(offset_ + static_cast<std::size_t>(is_.gcount())));
    offset_ += n;
  }

  template <class T>
  T get(const char* what) {
    T v{};
    bytes(reinterpret_cast<char*>(&v), sizeof(T), what);
    return v;
  }

  std::string string(std::size_t n, const char* what) {
    if (n > (std::size_t{1} << 31)) throw ParseError(std::string("checkpoint: implausible length for ") + what);
    std::string s(n, '\0');
    bytes(s.data(), n, what);
    return s;
  }

  std::size_t offset() const { return offset_; }

 private:
  std::istream& is_;
  std::size_t offset_ = 0;
};

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const Checkpoint& ck) {
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put(os, kCheckpointVersion);
  detail::put_string32(os, ck.kind);
  const std::string meta = ck.meta.dump();
  detail::put<std::uint64_t>(os, meta.size());
  os.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(ck.blocks.size()));
  for (const auto& [name, t] : ck.blocks) {
    detail::put_string32(os, name);
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) detail::put<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.raw()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!os) throw Error("checkpoint: write failed");
}

inline Checkpoint read_checkpoint(std::istream& is) {
  detail::Reader in(is);
  char magic[8];
  in.bytes(magic, sizeof(magic), "magic");
  if (std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw ParseError("checkpoint: bad magic, not a checkpoint file");
  const auto version = in.get<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    throw ParseError("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ck;
  ck.kind = in.string(in.get<std::uint32_t>("kind length"), "kind");
  const std::string meta = in.string(in.get<std::uint64_t>("metadata length"), "metadata");
  try {
    ck.meta = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint: metadata is not valid JSON: ") + e.what());
  }
  const auto count = in.get<std::uint32_t>("block count");
  for (std::uint32_t b = 0; b < count; ++b) {
    std::string name = in.string(in.get<std::uint32_t>("block name length"), "block name");
    const auto rank = in.get<std::uint32_t>("block rank");
    if (rank > 8) throw ParseError("checkpoint: block '" + name + "' has implausible rank");
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(in.get<std::uint64_t>("block shape"));
    Tensor t(shape);
    in.bytes(reinterpret_cast<char*>(t.raw()), t.size() * sizeof(double), "block data");
    ck.blocks.emplace(std::move(name), std::move(t));
  }
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  write_checkpoint(os, ck);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open checkpoint '" + path + "'");
  return read_checkpoint(is);
}

inline Checkpoint gcn_checkpoint(GcnModel& model) {
  Checkpoint ck;
  ck.kind = "gcn";
  ck.blocks = model.state_dict();
  if (!model.frozen()) model.forward(Tensor::matrix(1, model.config().nodes), Mode::Eval);
  ck.meta = {{"config", model.config()},
             {"density", model.mask().density()},
             {"live_edges", model.mask().live_count()},
             {"lambda_max", model.graph().scaled.lambda_max},
             {"lambda_fallback", model.graph().scaled.fallback},
             {"frozen", model.frozen()}};
  return ck;
}

/// Rebuilds a model from a "gcn" checkpoint. Frozen checkpoints come back frozen with the
/// graph cache rebuilt; the recomputed lambda_max must agree with the stored one.
inline GcnModel gcn_from_checkpoint(const Checkpoint& ck) {
  if (ck.kind != "gcn") throw ParseError("checkpoint kind is '" + ck.kind + "', expected 'gcn'");
  const auto config = ck.meta.at("config").get<GcnConfig>();
  Rng unused(0);
  GcnModel model(config, unused);
  model.load_state_dict(ck.blocks);
  if (ck.meta.value("frozen", false)) {
    model.freeze();
    const double stored = ck.meta.value("lambda_max", model.graph().scaled.lambda_max);
    if (std::abs(stored - model.graph().scaled.lambda_max) > 1e-9 * std::max(1.0, std::abs(stored)))
      warn("checkpoint lambda_max " + std::to_string(stored) + " differs from recomputed " +
           std::to_string(model.graph().scaled.lambda_max));
  }
  return model;
}

}  // namespace eegrl
