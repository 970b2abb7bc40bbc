#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "hdcs/category.hpp"
#include "hdcs/errors.hpp"
#include "hdcs/params.hpp"

namespace hdcs {

// Container layout shared by checkpoints and vector files:
//   bytes 0..4   magic "HDCS1"
//   bytes 5..12  manifest byte length, unsigned 64-bit little-endian
//   manifest     UTF-8 JSON
//   raw          arrays in manifest order, little-endian, f64 or f32
// Bit-exact across platforms: scalars are serialized bytewise.

namespace blob {

inline constexpr char kMagic[5] = {'H', 'D', 'C', 'S', '1'};

inline void put_u64(std::ostream& os, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) os.put(char((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_u64(std::istream& is) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    int c = is.get();
    if (c == EOF) throw SchemaError("truncated container header");
    v |= std::uint64_t(std::uint8_t(c)) << (8 * i);
  }
  return v;
}

inline void put_f64(std::ostream& os, double d) { put_u64(os, std::bit_cast<std::uint64_t>(d)); }

inline double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

inline void put_f32(std::ostream& os, float f) {
  std::uint32_t v = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) os.put(char((v >> (8 * i)) & 0xff));
}

inline float get_f32(std::istream& is) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    int c = is.get();
    if (c == EOF) throw SchemaError("truncated f32 payload");
    v |= std::uint32_t(std::uint8_t(c)) << (8 * i);
  }
  return std::bit_cast<float>(v);
}

inline void write_header(std::ostream& os, const nlohmann::json& manifest) {
  os.write(kMagic, 5);
  std::string m = manifest.dump();
  put_u64(os, m.size());
  os.write(m.data(), std::streamsize(m.size()));
}

inline nlohmann::json read_header(std::istream& is) {
  char magic[5];
  is.read(magic, 5);
  if (is.gcount() != 5 || std::memcmp(magic, kMagic, 5) != 0)
    throw SchemaError("not an HDCS1 container");
  std::uint64_t len = get_u64(is);
  std::string m(len, '\0');
  is.read(m.data(), std::streamsize(len));
  if (std::uint64_t(is.gcount()) != len) throw SchemaError("truncated manifest");
  nlohmann::json j = nlohmann::json::parse(m, nullptr, false);
  if (j.is_discarded()) throw SchemaError("manifest is not valid JSON");
  return j;
}

inline void write_array(std::ostream& os, const std::vector<double>& data, bool f32) {
  if (f32)
    for (double d : data) put_f32(os, float(d));
  else
    for (double d : data) put_f64(os, d);
}

inline std::vector<double> read_array(std::istream& is, std::size_t n, bool f32) {
  std::vector<double> out(n);
  for (auto& d : out) d = f32 ? double(get_f32(is)) : get_f64(is);
  return out;
}

}  // namespace blob

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

struct Checkpoint {
  nlohmann::json manifest;
  SymbolTable symbols;
  ParameterStore params;
};

inline void save_checkpoint(std::ostream& os, const ParameterStore& store,
                            const SymbolTable& table, const nlohmann::json& config,
                            const std::string& config_hash,
                            const nlohmann::json& extra = nlohmann::json::object(),
                            bool f32 = false) {
  nlohmann::json manifest;
  manifest["kind"] = "checkpoint";
  manifest["dtype"] = f32 ? "f32" : "f64";
  manifest["config"] = config;
  manifest["config_hash"] = config_hash;
  nlohmann::json syms = nlohmann::json::array();
  for (std::size_t i = 0; i < table.size(); ++i)
    syms.push_back({{"name", table.at(int(i)).name}, {"arity", table.at(int(i)).arity}});
  manifest["symbols"] = syms;
  nlohmann::json params = nlohmann::json::array();
  for (const auto& name : store.names()) {
    const Parameter& p = store.get(name);
    params.push_back({{"name", name},
                      {"shape", p.value.shape()},
                      {"group", p.group == LrGroup::encoder ? "encoder" : "decoder"},
                      {"trainable", p.trainable}});
  }
  manifest["params"] = params;
  for (auto it = extra.begin(); it != extra.end(); ++it) manifest[it.key()] = it.value();
  blob::write_header(os, manifest);
  for (const auto& name : store.names()) blob::write_array(os, store.get(name).value.vec(), f32);
}

inline Checkpoint load_checkpoint(std::istream& is) {
  Checkpoint ck;
  ck.manifest = blob::read_header(is);
  if (ck.manifest.value("kind", "") != "checkpoint")
    throw SchemaError("container is not a checkpoint");
  bool f32 = ck.manifest.value("dtype", "f64") == "f32";
  const auto& syms = ck.manifest.at("symbols");
  for (std::size_t i = 0; i < syms.size(); ++i) {
    const auto& s = syms[i];
    if (i == 0) {
      if (s.at("name").get<std::string>() != SymbolTable::kMwu)
        throw SchemaError("symbol table must reserve [MWU] at index 0");
      continue;  // already present
    }
    ck.symbols.add(s.at("name").get<std::string>(), s.at("arity").get<int>());
  }
  for (const auto& pj : ck.manifest.at("params")) {
    std::vector<std::size_t> shape = pj.at("shape").get<std::vector<std::size_t>>();
    std::size_t n = Tensor::numel_of(shape);
    Tensor value(shape, blob::read_array(is, n, f32));
    ck.params.add(pj.at("name").get<std::string>(), std::move(value),
                  pj.at("group").get<std::string>() == "encoder" ? LrGroup::encoder
                                                                 : LrGroup::decoder,
                  pj.at("trainable").get<bool>());
  }
  return ck;
}

inline void save_checkpoint_file(const std::string& path, const ParameterStore& store,
                                 const SymbolTable& table, const nlohmann::json& config,
                                 const std::string& config_hash,
                                 const nlohmann::json& extra = nlohmann::json::object(),
                                 bool f32 = false) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CorpusError("cannot write checkpoint: " + path);
  save_checkpoint(os, store, table, config, config_hash, extra, f32);
}

inline Checkpoint load_checkpoint_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CorpusError("cannot read checkpoint: " + path);
  return load_checkpoint(is);
}

}  // namespace hdcs
