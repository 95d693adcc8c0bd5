#pragma once

// Reader/writer for the safetensors container: an 8-byte little-endian header
// length, a JSON header mapping names to {dtype, shape, data_offsets}, then a
// flat byte buffer. Used for model checkpoints, window datasets, and
// pre-trained backbone weights.

#include "tsllm/core.hpp"

#include "json.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

namespace tsllm {

enum class Dtype { F32, F64 };

struct TensorEntry {
  std::vector<std::int64_t> shape;  // 1-D tensors load as a single row
  Matrix data;
};

struct TensorFile {
  std::map<std::string, TensorEntry> tensors;
  std::map<std::string, std::string> metadata;

  const TensorEntry& at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw LoadError("tensor '" + name + "' not found");
    return it->second;
  }
  bool contains(const std::string& name) const { return tensors.count(name) != 0; }

  void put(const std::string& name, const Matrix& m) {
    tensors[name] = TensorEntry{{m.rows(), m.cols()}, m};
  }
};

namespace detail {

static_assert(std::endian::native == std::endian::little, "tensor files assume a little-endian host");

inline std::uint64_t fnv1a(const char* data, std::size_t n) {
  std::uint64_t h = 1469598103934665603ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::size_t dtype_size(Dtype d) { return d == Dtype::F32 ? 4 : 8; }

inline const char* dtype_name(Dtype d) { return d == Dtype::F32 ? "F32" : "F64"; }

}  // namespace detail

/// Writes all tensors in name order. A checksum of the data buffer is stored in
/// the metadata so that corrupted payloads are rejected on read.
inline void write_tensor_file(const std::filesystem::path& path, const TensorFile& file,
                              Dtype dtype = Dtype::F64) {
  std::string buffer;
  nlohmann::json header = nlohmann::json::object();
  const std::size_t esize = detail::dtype_size(dtype);
  for (const auto& [name, entry] : file.tensors) {
    const std::size_t begin = buffer.size();
    const auto n = static_cast<std::size_t>(entry.data.size());
    buffer.resize(begin + n * esize);
    char* dst = buffer.data() + begin;
    for (std::size_t i = 0; i < n; ++i) {
      const Scalar v = entry.data.data()[i];
      if (dtype == Dtype::F32) {
        const float f = static_cast<float>(v);
        std::memcpy(dst + i * 4, &f, 4);
      } else {
        std::memcpy(dst + i * 8, &v, 8);
      }
    }
    header[name] = {{"dtype", detail::dtype_name(dtype)},
                    {"shape", entry.shape},
                    {"data_offsets", {begin, buffer.size()}}};
  }
  auto meta = file.metadata;
  meta["checksum"] = std::to_string(detail::fnv1a(buffer.data(), buffer.size()));
  header["__metadata__"] = meta;

  std::string h = header.dump();
  while (h.size() % 8 != 0) h.push_back(' ');
  const std::uint64_t hlen = h.size();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(&hlen), 8);
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    out.write(buffer.data(), static_cast<std::streamsize>(buffer.size()));
    if (!out) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

/// Reads a tensor file. F32 and F64 payloads are widened to Scalar. Any
/// structural inconsistency raises LoadError; nothing is returned on failure.
inline TensorFile read_tensor_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 8) throw LoadError(path.string() + ": truncated header");
  std::uint64_t hlen = 0;
  std::memcpy(&hlen, bytes.data(), 8);
  if (hlen > bytes.size() - 8) throw LoadError(path.string() + ": header length exceeds file size");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(hlen));
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(path.string() + ": malformed header: " + e.what());
  }
  if (!header.is_object()) throw LoadError(path.string() + ": header is not an object");

  const char* data = bytes.data() + 8 + hlen;
  const std::size_t data_len = bytes.size() - 8 - hlen;

  TensorFile file;
  std::size_t max_end = 0;
  try {
    for (auto it = header.begin(); it != header.end(); ++it) {
      if (it.key() == "__metadata__") {
        for (auto m = it->begin(); m != it->end(); ++m) file.metadata[m.key()] = m->get<std::string>();
        continue;
      }
      const auto& spec = *it;
      const std::string dtype = spec.at("dtype").get<std::string>();
      std::size_t esize = 0;
      if (dtype == "F32") {
        esize = 4;
      } else if (dtype == "F64") {
        esize = 8;
      } else {
        throw LoadError(path.string() + ": unsupported dtype " + dtype + " for " + it.key());
      }
      TensorEntry entry;
      entry.shape = spec.at("shape").get<std::vector<std::int64_t>>();
      const auto offsets = spec.at("data_offsets").get<std::vector<std::size_t>>();
      if (offsets.size() != 2 || offsets[0] > offsets[1] || offsets[1] > data_len) {
        throw LoadError(path.string() + ": bad data offsets for " + it.key());
      }
      std::int64_t count = 1;
      for (auto s : entry.shape) {
        if (s < 0) throw LoadError(path.string() + ": negative dimension in " + it.key());
        count *= s;
      }
      if (static_cast<std::size_t>(count) * esize != offsets[1] - offsets[0]) {
        throw LoadError(path.string() + ": byte size does not match shape for " + it.key());
      }
      Index rows = 1;
      Index cols = count;
      if (entry.shape.size() >= 2) {
        cols = entry.shape.back();
        rows = cols == 0 ? 0 : count / cols;
      }
      entry.data.resize(rows, cols);
      const char* src = data + offsets[0];
      for (std::int64_t i = 0; i < count; ++i) {
        if (esize == 4) {
          float f;
          std::memcpy(&f, src + i * 4, 4);
          entry.data.data()[i] = f;
        } else {
          double d;
          std::memcpy(&d, src + i * 8, 8);
          entry.data.data()[i] = d;
        }
      }
      max_end = std::max(max_end, offsets[1]);
      file.tensors.emplace(it.key(), std::move(entry));
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(path.string() + ": malformed tensor entry: " + e.what());
  }
  if (max_end != data_len) throw LoadError(path.string() + ": payload length does not match header");
  if (auto c = file.metadata.find("checksum"); c != file.metadata.end()) {
    if (c->second != std::to_string(detail::fnv1a(data, data_len))) {
      throw LoadError(path.string() + ": checksum mismatch");
    }
  }
  return file;
}

}  // namespace tsllm
