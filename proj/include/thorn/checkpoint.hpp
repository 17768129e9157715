#pragma once

#include <cstring>
#include <filesystem>
#include <map>
#include <string>

#include "thorn/config.hpp"
#include "thorn/io.hpp"
#include "thorn/model.hpp"

namespace thorn {

inline constexpr char kCheckpointMagic[8] = {'T', 'H', 'O', 'R', 'N', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout (little-endian): 8-byte magic, u32 version, u32 config length +
/// flat config text, u32 block count, then per parameter: u32 name length,
/// name, u32 rank, u32 dims[rank], f64 values.
template <typename S>
std::string serialize_checkpoint(const ActionModel<S>& model) {
  std::string out(kCheckpointMagic, 8);
  io::put_u32(out, kCheckpointVersion);
  const std::string cfg = model_config_text(model.config());
  io::put_u32(out, static_cast<std::uint32_t>(cfg.size()));
  out += cfg;
  std::uint32_t count = 0;
  model.visit(ConstParamVisitor<S>([&](const std::string&, const Param<S>&) { ++count; }));
  io::put_u32(out, count);
  model.visit(ConstParamVisitor<S>([&](const std::string& name, const Param<S>& p) {
    io::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    io::put_u32(out, static_cast<std::uint32_t>(p.value.rank()));
    for (int d : p.value.shape()) io::put_u32(out, static_cast<std::uint32_t>(d));
    for (auto v : p.value.storage()) {
      const double x = static_cast<double>(v);
      std::uint64_t bits;
      std::memcpy(&bits, &x, 8);
      io::put_u64(out, bits);
    }
  }));
  return out;
}

template <typename S>
void save_checkpoint(const ActionModel<S>& model, const std::filesystem::path& p) {
  io::write_text(p, serialize_checkpoint(model));
}

template <typename S>
ActionModel<S> deserialize_checkpoint(const std::string& bytes, const std::string& what) {
  io::Reader r(bytes, what);
  if (r.bytes(8) != std::string(kCheckpointMagic, 8)) throw Error(what + ": not a checkpoint (bad magic)");
  const auto version = r.u32();
  if (version != kCheckpointVersion) throw Error(what + ": unsupported checkpoint version " + std::to_string(version));
  const auto cfg_len = r.u32();
  const ModelConfig cfg = parse_model_config(r.bytes(cfg_len), what + " (embedded config)");
  ActionModel<S> model(cfg);
  std::map<std::string, Tensor<S>> blocks;
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.bytes(r.u32());
    Shape shape(r.u32());
    for (auto& d : shape) d = static_cast<int>(r.u32());
    Tensor<S> t(shape);
    for (auto& v : t.storage()) {
      const std::uint64_t bits = r.u64();
      double x;
      std::memcpy(&x, &bits, 8);
      v = static_cast<S>(x);
    }
    blocks.emplace(name, std::move(t));
  }
  if (!r.done()) throw Error(what + ": trailing bytes");
  model.visit(ParamVisitor<S>([&](const std::string& name, Param<S>& p) {
    const auto it = blocks.find(name);
    if (it == blocks.end()) throw Error(what + ": missing parameter " + name);
    require_shape(it->second.shape(), p.value.shape(), what + ": parameter " + name);
    p.value = std::move(it->second);
    p.grad = Tensor<S>(p.value.shape());
    blocks.erase(it);
  }));
  if (!blocks.empty()) throw Error(what + ": unexpected parameter " + blocks.begin()->first);
  return model;
}

template <typename S>
ActionModel<S> load_checkpoint(const std::filesystem::path& p) {
  if (!std::filesystem::exists(p)) throw Error("checkpoint not found: " + p.string());
  return deserialize_checkpoint<S>(io::read_text(p), p.string());
}

}  // namespace thorn
