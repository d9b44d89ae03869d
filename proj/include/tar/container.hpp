#pragma once

#include <bit>
#include <fstream>

#include <json.hpp>

#include "tar/common.hpp"

// On-disk container shared by checkpoints, datasets and body-model files:
//   magic "TARBIN1\n" | u64 LE manifest byte count | manifest JSON | buffers
// The manifest lists every tensor (name, shape, dtype f32) in the order its
// raw little-endian float32 buffer appears after the JSON, plus a free-form
// "meta" object. Writing is fully deterministic, nlohmann serialises object
// keys sorted.

namespace tar {

static_assert(std::endian::native == std::endian::little,
              "container io assumes a little-endian host");

struct NamedBuffer {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

struct Container {
  static constexpr int kFormatVersion = 1;
  static constexpr const char* kMagic = "TARBIN1\n";

  std::string kind;  // "checkpoint" | "dataset" | "bodymodel"
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedBuffer> tensors;

  NamedBuffer& add(const std::string& name, Shape shape) {
    tensors.push_back({name, shape, std::vector<float>(shape_numel(shape), 0.f)});
    return tensors.back();
  }

  const NamedBuffer* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }

  const NamedBuffer& require(const std::string& name) const {
    const NamedBuffer* t = find(name);
    if (!t) fail("container", "missing tensor '" + name + "'");
    return *t;
  }

  void save(const std::string& path) const {
    nlohmann::json manifest;
    manifest["format_version"] = kFormatVersion;
    manifest["kind"] = kind;
    manifest["meta"] = meta;
    nlohmann::json list = nlohmann::json::array();
    for (const auto& t : tensors) {
      if (shape_numel(t.shape) != static_cast<long>(t.data.size()))
        fail("container", "tensor '" + t.name + "' data does not match its shape");
      list.push_back({{"name", t.name}, {"shape", t.shape}, {"dtype", "f32"}});
    }
    manifest["tensors"] = list;
    std::string mjson = manifest.dump();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail("container", "cannot open '" + path + "' for writing");
    out.write(kMagic, 8);
    uint64_t len = mjson.size();
    out.write(reinterpret_cast<const char*>(&len), 8);
    out.write(mjson.data(), static_cast<std::streamsize>(mjson.size()));
    for (const auto& t : tensors)
      out.write(reinterpret_cast<const char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!out) fail("container", "write failed for '" + path + "'");
  }

  static Container load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("container", "cannot open '" + path + "'");
    char magic[8];
    in.read(magic, 8);
    if (!in || std::string(magic, 8) != kMagic)
      fail("container", "'" + path + "' is not a tar container file");
    uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), 8);
    std::string mjson(len, '\0');
    in.read(mjson.data(), static_cast<std::streamsize>(len));
    if (!in) fail("container", "truncated manifest in '" + path + "'");
    nlohmann::json manifest = nlohmann::json::parse(mjson, nullptr, false);
    if (manifest.is_discarded()) fail("container", "corrupt manifest in '" + path + "'");
    if (manifest.value("format_version", -1) != kFormatVersion)
      fail("container", "unsupported format version in '" + path + "'");
    Container c;
    c.kind = manifest.value("kind", "");
    c.meta = manifest.value("meta", nlohmann::json::object());
    for (const auto& entry : manifest["tensors"]) {
      NamedBuffer t;
      t.name = entry.at("name").get<std::string>();
      t.shape = entry.at("shape").get<Shape>();
      if (entry.at("dtype").get<std::string>() != "f32")
        fail("container", "tensor '" + t.name + "' has unsupported dtype");
      t.data.resize(shape_numel(t.shape));
      in.read(reinterpret_cast<char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(float)));
      if (!in) fail("container", "truncated buffer for tensor '" + t.name + "'");
      c.tensors.push_back(std::move(t));
    }
    return c;
  }
};

}  // namespace tar
