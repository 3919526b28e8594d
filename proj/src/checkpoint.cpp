#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "npt/mesh.hpp"
#include "npt/network.hpp"

namespace npt {

using nlohmann::json;
using Kind = CheckpointError::Kind;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'N', 'P', 'T', '1'};
constexpr int kVersion = 1;

std::vector<Index> stored_shape(const std::string& name, const Tensor3<float>& t) {
  if (name.ends_with(".bias")) return {t.c()};
  return {t.c(), t.v()};
}

std::string shape_str(const std::vector<Index>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

}  // namespace

std::string encode_checkpoint(const ModelParams<float>& p, const ModelConfig& cfg) {
  json tensors = json::array();
  std::string payload;
  p.visit(cfg, std::function<void(const std::string&, const Tensor3<float>&)>(
                   [&](const std::string& name, const Tensor3<float>& t) {
                     tensors.push_back({{"name", name},
                                        {"shape", stored_shape(name, t)},
                                        {"offset", payload.size()},
                                        {"count", t.size()}});
                     payload.append(reinterpret_cast<const char*>(t.data().data()), t.data().size_bytes());
                   }));
  const auto& w = cfg.widths;
  json header = {{"version", kVersion},
                 {"widths", {w.c1, w.c2, w.c3, w.w2, w.w3}},
                 {"variant", variant_name(cfg.variant)},
                 {"seed", cfg.seed},
                 {"eps", cfg.eps},
                 {"tensors", tensors}};
  const std::string text = header.dump();
  const std::uint64_t len = text.size();
  std::string out(kMagic, 4);
  out.append(reinterpret_cast<const char*>(&len), 8);
  out += text;
  out += payload;
  return out;
}

namespace {

Checkpoint decode_impl(std::string_view bytes, const ModelConfig* expected) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw CheckpointError(Kind::bad_magic, "checkpoint: bad magic (expected \"NPT1\")");
  }
  if (bytes.size() < 12) throw CheckpointError(Kind::truncated, "checkpoint: truncated before header length");
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 4, 8);
  if (len > bytes.size() - 12) throw CheckpointError(Kind::truncated, "checkpoint: truncated header");
  json header;
  try {
    header = json::parse(bytes.substr(12, len));
  } catch (const json::exception& e) {
    throw CheckpointError(Kind::header, std::string("checkpoint: unreadable header: ") + e.what());
  }
  const auto payload = bytes.substr(12 + len);

  Checkpoint ck;
  try {
    const int version = header.at("version").get<int>();
    if (version != kVersion) {
      throw CheckpointError(Kind::version, "checkpoint: version " + std::to_string(version) + " not supported (expected " +
                                               std::to_string(kVersion) + ")");
    }
    const auto w = header.at("widths").get<std::vector<Index>>();
    if (w.size() != 5) throw CheckpointError(Kind::header, "checkpoint: widths must have 5 entries");
    ck.config.widths = {w[0], w[1], w[2], w[3], w[4]};
    ck.config.variant = parse_variant(header.at("variant").get<std::string>());
    ck.config.seed = header.at("seed").get<std::uint64_t>();
    ck.config.eps = header.value("eps", 1e-5);
  } catch (const json::exception& e) {
    throw CheckpointError(Kind::header, std::string("checkpoint: malformed header: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(Kind::header, std::string("checkpoint: ") + e.what());
  }

  // Layout to fill: the caller's expectation when given, else the header's own.
  const ModelConfig& layout_cfg = expected ? *expected : ck.config;
  if (expected && expected->variant != ck.config.variant) {
    throw CheckpointError(Kind::shape_mismatch, std::string("checkpoint: variant ") + variant_name(ck.config.variant) +
                                                    " does not match configured " + variant_name(expected->variant));
  }
  ck.params = zero_model_params<float>(layout_cfg);
  const auto& tensors = header.at("tensors");
  std::size_t k = 0;
  ck.params.visit(layout_cfg, std::function<void(const std::string&, Tensor3<float>&)>([&](const std::string& name,
                                                                                         Tensor3<float>& t) {
    if (k >= tensors.size()) throw CheckpointError(Kind::shape_mismatch, "checkpoint: missing tensor " + name);
    const auto& entry = tensors[k++];
    const auto stored_name = entry.at("name").get<std::string>();
    if (stored_name != name) {
      throw CheckpointError(Kind::shape_mismatch, "checkpoint: expected tensor " + name + ", found " + stored_name);
    }
    const auto shape = entry.at("shape").get<std::vector<Index>>();
    const auto want = stored_shape(name, t);
    if (shape != want) {
      throw CheckpointError(Kind::shape_mismatch, "checkpoint: shape mismatch for layer " + name + ": stored " +
                                                      shape_str(shape) + ", expected " + shape_str(want));
    }
    const auto count = entry.at("count").get<Index>();
    const auto offset = entry.at("offset").get<std::uint64_t>();
    if (count != t.size()) {
      throw CheckpointError(Kind::shape_mismatch, "checkpoint: count " + std::to_string(count) + " for " + name +
                                                      " disagrees with its header shape " + shape_str(shape));
    }
    const std::uint64_t nbytes = static_cast<std::uint64_t>(count) * sizeof(float);
    if (offset > payload.size() || nbytes > payload.size() - offset) {
      throw CheckpointError(Kind::truncated, "checkpoint: payload truncated in tensor " + name);
    }
    std::memcpy(t.data().data(), payload.data() + offset, nbytes);
  }));
  if (k != tensors.size()) {
    throw CheckpointError(Kind::shape_mismatch, "checkpoint: " + std::to_string(tensors.size() - k) +
                                                    " unexpected extra tensors (first: " +
                                                    tensors[k].at("name").get<std::string>() + ")");
  }
  if (expected) {
    ck.config.eps = expected->eps;
    ck.config.widths = expected->widths;
  }
  return ck;
}

std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(Kind::io, "checkpoint: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

Checkpoint decode_checkpoint(std::string_view bytes) { return decode_impl(bytes, nullptr); }

Checkpoint decode_checkpoint(std::string_view bytes, const ModelConfig& expected) {
  return decode_impl(bytes, &expected);
}

void save_checkpoint(const ModelParams<float>& p, const ModelConfig& cfg, const std::filesystem::path& path) {
  write_file_atomic(path, encode_checkpoint(p, cfg));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_bytes(path)); }

Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  return decode_checkpoint(read_bytes(path), expected);
}

}  // namespace npt
