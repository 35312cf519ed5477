#pragma once

// Single-file binary archive: a JSON metadata document plus named numeric
// arrays.
//
// Layout (little-endian):
//   8 bytes   magic "COADAIN\0"
//   u32       container version
//   u64       metadata length, then that many bytes of UTF-8 JSON
//   u64       array count, then per array:
//               u32 name length, name bytes
//               u8  dtype (0 = f32, 1 = f64)
//               u32 rank, rank x i64 dims
//               u64 element count, raw element bytes

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "coadain/errors.hpp"

namespace coadain {

static_assert(std::endian::native == std::endian::little, "archive assumes a little-endian host");

inline constexpr std::array<char, 8> kArchiveMagic{'C', 'O', 'A', 'D', 'A', 'I', 'N', '\0'};
inline constexpr uint32_t kArchiveContainerVersion = 1;

enum class DType : uint8_t { f32 = 0, f64 = 1 };

struct ArrayEntry {
  DType dtype = DType::f32;
  std::vector<int64_t> shape;
  std::vector<float> f32;
  std::vector<double> f64;

  size_t size() const { return dtype == DType::f32 ? f32.size() : f64.size(); }
};

class Archive {
 public:
  nlohmann::json metadata = nlohmann::json::object();

  void put(const std::string& name, std::span<const float> data, std::vector<int64_t> shape = {}) {
    ArrayEntry e;
    e.dtype = DType::f32;
    e.shape = shape.empty() ? std::vector<int64_t>{static_cast<int64_t>(data.size())} : shape;
    e.f32.assign(data.begin(), data.end());
    arrays_[name] = std::move(e);
  }

  void put(const std::string& name, std::span<const double> data, std::vector<int64_t> shape = {}) {
    ArrayEntry e;
    e.dtype = DType::f64;
    e.shape = shape.empty() ? std::vector<int64_t>{static_cast<int64_t>(data.size())} : shape;
    e.f64.assign(data.begin(), data.end());
    arrays_[name] = std::move(e);
  }

  bool has(const std::string& name) const { return arrays_.count(name) > 0; }
  const std::map<std::string, ArrayEntry>& arrays() const { return arrays_; }

  const ArrayEntry& at(const std::string& name) const {
    auto it = arrays_.find(name);
    if (it == arrays_.end()) throw FormatError("archive: missing array '" + name + "'");
    return it->second;
  }

  /// Array contents as T; the stored dtype must match exactly so values
  /// round-trip bitwise.
  template <class T>
  const std::vector<T>& get(const std::string& name) const {
    const auto& e = at(name);
    if constexpr (std::is_same_v<T, float>) {
      if (e.dtype != DType::f32) throw FormatError("archive: array '" + name + "' is not f32");
      return e.f32;
    } else {
      static_assert(std::is_same_v<T, double>);
      if (e.dtype != DType::f64) throw FormatError("archive: array '" + name + "' is not f64");
      return e.f64;
    }
  }

  /// Metadata field, raising FormatError naming it when absent.
  const nlohmann::json& meta(const std::string& key) const {
    if (!metadata.contains(key)) throw FormatError("archive: missing metadata field '" + key + "'");
    return metadata.at(key);
  }

  /// Writes to a sibling temporary file and renames it into place.
  void save(const std::filesystem::path& path) const {
    namespace fs = std::filesystem;
    if (path.has_parent_path()) {
      std::error_code ec;
      fs::create_directories(path.parent_path(), ec);
      if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
    }
    fs::path tmp = path;
    tmp += ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
      out.write(kArchiveMagic.data(), kArchiveMagic.size());
      write_pod(out, kArchiveContainerVersion);
      const std::string meta = metadata.dump();
      write_pod(out, static_cast<uint64_t>(meta.size()));
      out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
      write_pod(out, static_cast<uint64_t>(arrays_.size()));
      for (const auto& [name, e] : arrays_) {
        write_pod(out, static_cast<uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_pod(out, static_cast<uint8_t>(e.dtype));
        write_pod(out, static_cast<uint32_t>(e.shape.size()));
        for (int64_t d : e.shape) write_pod(out, d);
        write_pod(out, static_cast<uint64_t>(e.size()));
        if (e.dtype == DType::f32) {
          out.write(reinterpret_cast<const char*>(e.f32.data()),
                    static_cast<std::streamsize>(e.f32.size() * sizeof(float)));
        } else {
          out.write(reinterpret_cast<const char*>(e.f64.data()),
                    static_cast<std::streamsize>(e.f64.size() * sizeof(double)));
        }
      }
      out.flush();
      if (!out) throw IoError("write failed for " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
  }

  static Archive load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open archive " + path.string());
    const std::string where = " in " + path.string();
    std::array<char, 8> magic{};
    in.read(magic.data(), magic.size());
    if (!in || magic != kArchiveMagic) throw FormatError("not a coadain archive" + where);
    const auto version = read_pod<uint32_t>(in, "container version", where);
    if (version != kArchiveContainerVersion) {
      throw FormatError("unsupported archive container version " + std::to_string(version) + where);
    }
    Archive a;
    const auto meta_len = read_pod<uint64_t>(in, "metadata length", where);
    std::string meta = read_bytes(in, meta_len, "metadata", where);
    try {
      a.metadata = nlohmann::json::parse(meta);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("corrupt metadata document") + where + ": " + e.what());
    }
    const auto count = read_pod<uint64_t>(in, "array count", where);
    for (uint64_t i = 0; i < count; ++i) {
      const auto name_len = read_pod<uint32_t>(in, "array name length", where);
      std::string name = read_bytes(in, name_len, "array name", where);
      ArrayEntry e;
      const auto dtype = read_pod<uint8_t>(in, "dtype of '" + name + "'", where);
      if (dtype > 1) throw FormatError("unknown dtype for array '" + name + "'" + where);
      e.dtype = static_cast<DType>(dtype);
      const auto rank = read_pod<uint32_t>(in, "rank of '" + name + "'", where);
      if (rank > 8) throw FormatError("implausible rank for array '" + name + "'" + where);
      int64_t expect = 1;
      for (uint32_t r = 0; r < rank; ++r) {
        e.shape.push_back(read_pod<int64_t>(in, "shape of '" + name + "'", where));
        expect *= e.shape.back();
      }
      const auto n = read_pod<uint64_t>(in, "size of '" + name + "'", where);
      if (static_cast<int64_t>(n) != expect) {
        throw FormatError("array '" + name + "' size disagrees with its shape" + where);
      }
      if (e.dtype == DType::f32) {
        e.f32.resize(n);
        read_into(in, e.f32.data(), n * sizeof(float), "data of '" + name + "'", where);
      } else {
        e.f64.resize(n);
        read_into(in, e.f64.data(), n * sizeof(double), "data of '" + name + "'", where);
      }
      a.arrays_[name] = std::move(e);
    }
    return a;
  }

 private:
  template <class P>
  static void write_pod(std::ofstream& out, P v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(P));
  }

  static void read_into(std::ifstream& in, void* dst, size_t bytes, const std::string& what,
                        const std::string& where) {
    in.read(static_cast<char*>(dst), static_cast<std::streamsize>(bytes));
    if (!in) throw FormatError("truncated archive while reading " + what + where);
  }

  template <class P>
  static P read_pod(std::ifstream& in, const std::string& what, const std::string& where) {
    P v{};
    read_into(in, &v, sizeof(P), what, where);
    return v;
  }

  static std::string read_bytes(std::ifstream& in, uint64_t n, const std::string& what,
                                const std::string& where) {
    if (n > (uint64_t{1} << 32)) throw FormatError("implausible length for " + what + where);
    std::string s(n, '\0');
    read_into(in, s.data(), n, what, where);
    return s;
  }

  std::map<std::string, ArrayEntry> arrays_;
};

}  // namespace coadain
