#pragma once

#include <cstdint>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "cmr/common.hpp"

namespace cmr::io {

// Single-file compressed archive of named numeric arrays. Used for body model
// weights and training checkpoints. Layout (see docs/formats.md):
//   magic "CMAR1\n", u64 raw payload size, zlib-compressed payload.
// Payload: u32 entry count, then per entry: u16 name length, name bytes,
// u8 dtype, u8 rank, u32 dims[rank], raw little-endian data.
// Entries are sorted by name so identical content yields identical bytes.
class ArrayArchive {
 public:
  enum class DType : std::uint8_t { F32 = 0, I32 = 1, F64 = 2, U8 = 3 };

  struct Entry {
    DType dtype = DType::F32;
    std::vector<int> shape;
    std::vector<unsigned char> bytes;

    std::int64_t count() const {
      std::int64_t n = shape.empty() ? 0 : 1;
      for (int d : shape) n *= d;
      return n;
    }
  };

  bool has(const std::string& name) const { return entries_.count(name) != 0; }

  const Entry& entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw SchemaError("archive: missing array '" + name + "'");
    return it->second;
  }

  const std::map<std::string, Entry>& entries() const { return entries_; }

  void putF32(const std::string& name, const float* data, std::vector<int> shape);
  void putF64(const std::string& name, const double* data, std::vector<int> shape);
  void putI32(const std::string& name, const std::int32_t* data, std::vector<int> shape);
  void putBytes(const std::string& name, const std::string& data);

  // Typed getters validate dtype and, when expected is non-empty, the shape.
  std::vector<float> getF32(const std::string& name, const std::vector<int>& expected = {}) const;
  std::vector<double> getF64(const std::string& name, const std::vector<int>& expected = {}) const;
  std::vector<std::int32_t> getI32(const std::string& name, const std::vector<int>& expected = {}) const;
  std::string getBytes(const std::string& name) const;

  std::vector<int> shapeOf(const std::string& name) const { return entry(name).shape; }

  void save(const std::string& path) const;
  static ArrayArchive load(const std::string& path);

 private:
  void checkShape(const std::string& name, const Entry& e, DType want, const std::vector<int>& expected) const;

  std::map<std::string, Entry> entries_;
};

}  // namespace cmr::io
