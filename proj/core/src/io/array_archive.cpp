#include "cmr/io/array_archive.hpp"

#include <zlib.h>

#include <cstdio>
#include <fstream>

namespace cmr::io {

namespace {

constexpr char kMagic[6] = {'C', 'M', 'A', 'R', '1', '\n'};

void appendU16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xff));
  out.push_back(static_cast<unsigned char>(v >> 8));
}

void appendU32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

struct Reader {
  const unsigned char* p;
  const unsigned char* end;

  void need(std::size_t n) const {
    if (static_cast<std::size_t>(end - p) < n) throw SchemaError("archive: truncated payload");
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>(p[0] | (p[1] << 8));
    p += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    p += 4;
    return v;
  }
  std::uint8_t u8() {
    need(1);
    return *p++;
  }
};

std::size_t dtypeSize(ArrayArchive::DType t) {
  switch (t) {
    case ArrayArchive::DType::F32:
    case ArrayArchive::DType::I32:
      return 4;
    case ArrayArchive::DType::F64:
      return 8;
    case ArrayArchive::DType::U8:
      return 1;
  }
  return 1;
}

}  // namespace

void ArrayArchive::putF32(const std::string& name, const float* data, std::vector<int> shape) {
  Entry e;
  e.dtype = DType::F32;
  e.shape = std::move(shape);
  e.bytes.resize(static_cast<std::size_t>(e.count()) * 4);
  std::memcpy(e.bytes.data(), data, e.bytes.size());
  entries_[name] = std::move(e);
}

void ArrayArchive::putF64(const std::string& name, const double* data, std::vector<int> shape) {
  Entry e;
  e.dtype = DType::F64;
  e.shape = std::move(shape);
  e.bytes.resize(static_cast<std::size_t>(e.count()) * 8);
  std::memcpy(e.bytes.data(), data, e.bytes.size());
  entries_[name] = std::move(e);
}

void ArrayArchive::putI32(const std::string& name, const std::int32_t* data, std::vector<int> shape) {
  Entry e;
  e.dtype = DType::I32;
  e.shape = std::move(shape);
  e.bytes.resize(static_cast<std::size_t>(e.count()) * 4);
  std::memcpy(e.bytes.data(), data, e.bytes.size());
  entries_[name] = std::move(e);
}

void ArrayArchive::putBytes(const std::string& name, const std::string& data) {
  Entry e;
  e.dtype = DType::U8;
  e.shape = {static_cast<int>(data.size())};
  e.bytes.assign(data.begin(), data.end());
  entries_[name] = std::move(e);
}

void ArrayArchive::checkShape(const std::string& name, const Entry& e, DType want,
                              const std::vector<int>& expected) const {
  if (e.dtype != want) throw SchemaError("archive: array '" + name + "' has wrong dtype");
  if (!expected.empty() && e.shape != expected) {
    std::string got, exp;
    for (int d : e.shape) got += std::to_string(d) + ",";
    for (int d : expected) exp += std::to_string(d) + ",";
    throw SchemaError("archive: array '" + name + "' has shape [" + got + "] expected [" + exp + "]");
  }
}

std::vector<float> ArrayArchive::getF32(const std::string& name, const std::vector<int>& expected) const {
  const Entry& e = entry(name);
  checkShape(name, e, DType::F32, expected);
  std::vector<float> out(static_cast<std::size_t>(e.count()));
  std::memcpy(out.data(), e.bytes.data(), e.bytes.size());
  return out;
}

std::vector<double> ArrayArchive::getF64(const std::string& name, const std::vector<int>& expected) const {
  const Entry& e = entry(name);
  checkShape(name, e, DType::F64, expected);
  std::vector<double> out(static_cast<std::size_t>(e.count()));
  std::memcpy(out.data(), e.bytes.data(), e.bytes.size());
  return out;
}

std::vector<std::int32_t> ArrayArchive::getI32(const std::string& name, const std::vector<int>& expected) const {
  const Entry& e = entry(name);
  checkShape(name, e, DType::I32, expected);
  std::vector<std::int32_t> out(static_cast<std::size_t>(e.count()));
  std::memcpy(out.data(), e.bytes.data(), e.bytes.size());
  return out;
}

std::string ArrayArchive::getBytes(const std::string& name) const {
  const Entry& e = entry(name);
  if (e.dtype != DType::U8) throw SchemaError("archive: array '" + name + "' has wrong dtype");
  return std::string(e.bytes.begin(), e.bytes.end());
}

void ArrayArchive::save(const std::string& path) const {
  std::vector<unsigned char> payload;
  appendU32(payload, static_cast<std::uint32_t>(entries_.size()));
  for (const auto& [name, e] : entries_) {
    if (name.size() > 0xffff) throw Error("archive: name too long");
    appendU16(payload, static_cast<std::uint16_t>(name.size()));
    payload.insert(payload.end(), name.begin(), name.end());
    payload.push_back(static_cast<unsigned char>(e.dtype));
    payload.push_back(static_cast<unsigned char>(e.shape.size()));
    for (int d : e.shape) appendU32(payload, static_cast<std::uint32_t>(d));
    payload.insert(payload.end(), e.bytes.begin(), e.bytes.end());
  }

  uLongf bound = compressBound(static_cast<uLong>(payload.size()));
  std::vector<unsigned char> packed(bound);
  if (compress2(packed.data(), &bound, payload.data(), static_cast<uLong>(payload.size()), 6) != Z_OK)
    throw Error("archive: zlib compression failed");
  packed.resize(bound);

  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("archive: cannot open '" + path + "' for writing");
  f.write(kMagic, sizeof(kMagic));
  std::uint64_t raw = payload.size();
  unsigned char hdr[8];
  for (int i = 0; i < 8; ++i) hdr[i] = static_cast<unsigned char>((raw >> (8 * i)) & 0xff);
  f.write(reinterpret_cast<const char*>(hdr), 8);
  f.write(reinterpret_cast<const char*>(packed.data()), static_cast<std::streamsize>(packed.size()));
  if (!f) throw DataError("archive: write to '" + path + "' failed");
}

ArrayArchive ArrayArchive::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("archive: cannot open '" + path + "'");
  std::vector<unsigned char> file((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (file.size() < sizeof(kMagic) + 8 || std::memcmp(file.data(), kMagic, sizeof(kMagic)) != 0)
    throw SchemaError("archive: '" + path + "' is not a CMAR1 file");

  std::uint64_t raw = 0;
  for (int i = 0; i < 8; ++i) raw |= static_cast<std::uint64_t>(file[sizeof(kMagic) + i]) << (8 * i);
  std::vector<unsigned char> payload(raw);
  uLongf outLen = static_cast<uLongf>(raw);
  const unsigned char* src = file.data() + sizeof(kMagic) + 8;
  uLong srcLen = static_cast<uLong>(file.size() - sizeof(kMagic) - 8);
  if (uncompress(payload.data(), &outLen, src, srcLen) != Z_OK || outLen != raw)
    throw SchemaError("archive: '" + path + "' failed to decompress");

  ArrayArchive ar;
  Reader r{payload.data(), payload.data() + payload.size()};
  std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    std::uint16_t nameLen = r.u16();
    r.need(nameLen);
    std::string name(reinterpret_cast<const char*>(r.p), nameLen);
    r.p += nameLen;
    Entry e;
    e.dtype = static_cast<DType>(r.u8());
    int rank = r.u8();
    e.shape.resize(static_cast<std::size_t>(rank));
    for (int k = 0; k < rank; ++k) e.shape[static_cast<std::size_t>(k)] = static_cast<int>(r.u32());
    std::size_t bytes = static_cast<std::size_t>(e.count()) * dtypeSize(e.dtype);
    r.need(bytes);
    e.bytes.assign(r.p, r.p + bytes);
    r.p += bytes;
    ar.entries_[name] = std::move(e);
  }
  return ar;
}

}  // namespace cmr::io
