#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mpgcn/errors.hpp"
#include "mpgcn/optim.hpp"
#include "mpgcn/tensor.hpp"

namespace mpgcn {

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian float64");

// Model checkpoints are a JSON manifest plus one raw little-endian float64
// blob per parameter tensor, named by parameter path.

namespace ckptdetail {

inline std::string blob_name(const std::string& param_name) {
  std::string s = param_name;
  for (char& c : s)
    if (c == '/' || c == '\\') c = '_';
  return s + ".bin";
}

inline void write_blob(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(double)));
  if (!out) throw IoError("failed writing " + path.string());
}

inline Tensor read_blob(const std::filesystem::path& path, const Shape& shape) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  Tensor t(shape);
  in.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(t.numel() * sizeof(double)));
  if (static_cast<std::size_t>(in.gcount()) != t.numel() * sizeof(double))
    throw IoError(path.string() + ": short read for shape " + shape_str(shape));
  return t;
}

}  // namespace ckptdetail

inline void save_checkpoint(const std::filesystem::path& dir, const std::string& kind,
                            const std::vector<const ParamSet*>& param_sets,
                            const std::vector<std::string>& set_prefixes,
                            const nlohmann::json& meta) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "params");
  nlohmann::json manifest;
  manifest["format"] = "mpgcn-checkpoint/1";
  manifest["kind"] = kind;
  manifest["meta"] = meta;
  manifest["params"] = nlohmann::json::array();
  for (std::size_t si = 0; si < param_sets.size(); ++si) {
    const ParamSet& ps = *param_sets[si];
    for (std::size_t i = 0; i < ps.size(); ++i) {
      const std::string name = set_prefixes[si] + ps.name(i);
      const std::string file = ckptdetail::blob_name(name);
      ckptdetail::write_blob(dir / "params" / file, ps.tensor(i));
      manifest["params"].push_back(
          {{"name", name}, {"shape", ps.tensor(i).shape()}, {"file", file}});
    }
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << "\n";
}

struct LoadedCheckpoint {
  std::string kind;
  nlohmann::json meta;
  std::vector<std::pair<std::string, Tensor>> params;

  const Tensor& find(const std::string& name) const {
    for (const auto& [n, t] : params)
      if (n == name) return t;
    throw IoError("checkpoint has no parameter '" + name + "'");
  }
};

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("cannot read " + (dir / "manifest.json").string());
  nlohmann::json manifest = nlohmann::json::parse(in);
  if (manifest.value("format", "") != "mpgcn-checkpoint/1")
    throw IoError(dir.string() + ": unknown checkpoint format");
  LoadedCheckpoint ck;
  ck.kind = manifest.value("kind", "");
  ck.meta = manifest["meta"];
  for (const auto& p : manifest["params"]) {
    Shape shape;
    for (const auto& e : p["shape"]) shape.push_back(e.get<std::size_t>());
    ck.params.push_back({p["name"].get<std::string>(),
                         ckptdetail::read_blob(dir / "params" / p["file"].get<std::string>(),
                                               shape)});
  }
  return ck;
}

// Restores a ParamSet's tensors from a loaded checkpoint by prefixed name.
inline void restore_params(ParamSet& ps, const LoadedCheckpoint& ck,
                           const std::string& prefix) {
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const Tensor& t = ck.find(prefix + ps.name(i));
    if (!t.same_shape(ps.tensor(i)))
      throw IoError("checkpoint parameter '" + prefix + ps.name(i) + "' has shape " +
                    shape_str(t.shape()) + ", expected " + shape_str(ps.tensor(i).shape()));
    ps.tensor(i) = t;
  }
}

}  // namespace mpgcn
