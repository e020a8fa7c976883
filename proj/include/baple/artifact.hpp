#pragma once

// On-disk artifact format.
//
// An artifact is a directory holding `header.txt` plus one raw little-endian
// binary file per array and one UTF-8 file per text blob. The header is
// line oriented:
//
//   baple-artifact
//   version 1
//   kind <kind>
//   field <name> <value...>
//   array <name> <dtype> <d0,d1,...> <file>
//   text <name> <file>
//
// dtype is one of f32, f64, i32, u8. The header is written last so a
// directory without one is never mistaken for a complete artifact.

#include <bit>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>

#include "baple/core.hpp"

namespace baple {

static_assert(std::endian::native == std::endian::little, "artifact I/O assumes a little-endian host");

inline constexpr int kArtifactVersion = 1;
inline constexpr std::string_view kArtifactMagic = "baple-artifact";

enum class DType { f32, f64, i32, u8 };

inline std::string_view dtype_name(DType t) {
  switch (t) {
    case DType::f32: return "f32";
    case DType::f64: return "f64";
    case DType::i32: return "i32";
    case DType::u8: return "u8";
  }
  return "?";
}

inline std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::f32: return 4;
    case DType::f64: return 8;
    case DType::i32: return 4;
    case DType::u8: return 1;
  }
  return 0;
}

inline DType parse_dtype(std::string_view s) {
  if (s == "f32") return DType::f32;
  if (s == "f64") return DType::f64;
  if (s == "i32") return DType::i32;
  if (s == "u8") return DType::u8;
  throw FormatError("unknown dtype '" + std::string(s) + "'");
}

namespace detail {

inline void write_bytes(const std::filesystem::path& path, const void* data, std::size_t n) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

inline std::vector<char> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("missing artifact file '" + path.string() + "'");
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline std::string join_dims(const std::vector<std::size_t>& dims) {
  std::string s;
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(dims[i]);
  }
  return s.empty() ? "0" : s;
}

inline std::size_t product(const std::vector<std::size_t>& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace detail

class ArtifactWriter {
 public:
  ArtifactWriter(std::filesystem::path dir, std::string kind) : dir_(std::move(dir)), kind_(std::move(kind)) {
    std::filesystem::create_directories(dir_);
    std::filesystem::remove(dir_ / "header.txt");
  }

  ArtifactWriter& field(const std::string& name, const std::string& value) {
    if (value.find('\n') != std::string::npos) throw Error("field '" + name + "' contains a newline");
    lines_.push_back("field " + name + " " + value);
    return *this;
  }
  ArtifactWriter& field(const std::string& name, double value) {
    std::ostringstream os;
    os << std::setprecision(17) << value;
    return field(name, os.str());
  }
  ArtifactWriter& field(const std::string& name, std::int64_t value) { return field(name, std::to_string(value)); }
  ArtifactWriter& field(const std::string& name, std::uint64_t value) { return field(name, std::to_string(value)); }
  ArtifactWriter& field(const std::string& name, int value) { return field(name, std::int64_t{value}); }
  ArtifactWriter& field(const std::string& name, bool value) { return field(name, std::string(value ? "1" : "0")); }

  ArtifactWriter& array_f64(const std::string& name, std::span<const double> data, std::vector<std::size_t> dims) {
    return put(name, DType::f64, data.data(), data.size(), std::move(dims));
  }
  // Stored as float32; callers are responsible for values being float-representable if they need exact round trips.
  ArtifactWriter& array_f32(const std::string& name, std::span<const double> data, std::vector<std::size_t> dims) {
    std::vector<float> tmp(data.begin(), data.end());
    return put(name, DType::f32, tmp.data(), tmp.size(), std::move(dims));
  }
  ArtifactWriter& array_i32(const std::string& name, std::span<const std::int32_t> data, std::vector<std::size_t> dims) {
    return put(name, DType::i32, data.data(), data.size(), std::move(dims));
  }
  ArtifactWriter& array_u8(const std::string& name, std::span<const std::uint8_t> data, std::vector<std::size_t> dims) {
    return put(name, DType::u8, data.data(), data.size(), std::move(dims));
  }

  ArtifactWriter& text(const std::string& name, std::string_view content) {
    const std::string file = name + ".txt";
    detail::write_bytes(dir_ / file, content.data(), content.size());
    lines_.push_back("text " + name + " " + file);
    return *this;
  }

  void commit() {
    std::ostringstream os;
    os << kArtifactMagic << "\nversion " << kArtifactVersion << "\nkind " << kind_ << "\n";
    for (const auto& l : lines_) os << l << "\n";
    const std::string s = os.str();
    detail::write_bytes(dir_ / "header.txt", s.data(), s.size());
  }

 private:
  ArtifactWriter& put(const std::string& name, DType t, const void* data, std::size_t count,
                      std::vector<std::size_t> dims) {
    if (detail::product(dims) != count) throw DimensionError("array '" + name + "' dims do not match element count");
    const std::string file = name + ".bin";
    detail::write_bytes(dir_ / file, data, count * dtype_size(t));
    lines_.push_back("array " + name + " " + std::string(dtype_name(t)) + " " + detail::join_dims(dims) + " " + file);
    return *this;
  }

  std::filesystem::path dir_;
  std::string kind_;
  std::vector<std::string> lines_;
};

class ArtifactReader {
 public:
  struct ArrayEntry {
    DType dtype;
    std::vector<std::size_t> dims;
    std::string file;
  };

  ArtifactReader(std::filesystem::path dir, std::string_view expected_kind) : dir_(std::move(dir)) {
    const auto header_path = dir_ / "header.txt";
    if (!std::filesystem::exists(header_path)) throw FormatError("no artifact header at '" + header_path.string() + "'");
    std::ifstream in(header_path);
    std::string line;
    if (!std::getline(in, line) || line != kArtifactMagic)
      throw FormatError("corrupt artifact header in '" + dir_.string() + "': bad magic line");
    if (!std::getline(in, line) || line.rfind("version ", 0) != 0)
      throw FormatError("corrupt artifact header: expected version " + std::to_string(kArtifactVersion) +
                        ", actual version line '" + line + "'");
    const std::string version = line.substr(8);
    if (version != std::to_string(kArtifactVersion))
      throw FormatError("artifact version mismatch: expected " + std::to_string(kArtifactVersion) + ", actual " +
                        version);
    if (!std::getline(in, line) || line.rfind("kind ", 0) != 0) throw FormatError("corrupt artifact header: no kind");
    kind_ = line.substr(5);
    if (!expected_kind.empty() && kind_ != expected_kind)
      throw FormatError("artifact kind mismatch: expected " + std::string(expected_kind) + ", actual " + kind_);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::istringstream ls(line);
      std::string tag, name;
      ls >> tag >> name;
      if (tag == "field") {
        std::string value;
        std::getline(ls, value);
        if (!value.empty() && value.front() == ' ') value.erase(0, 1);
        fields_[name] = value;
      } else if (tag == "array") {
        std::string dtype, dims, file;
        ls >> dtype >> dims >> file;
        if (file.empty()) throw FormatError("corrupt array entry '" + line + "'");
        ArrayEntry e{parse_dtype(dtype), {}, file};
        std::istringstream ds(dims);
        std::string d;
        while (std::getline(ds, d, ',')) e.dims.push_back(static_cast<std::size_t>(std::stoull(d)));
        arrays_[name] = std::move(e);
      } else if (tag == "text") {
        std::string file;
        ls >> file;
        texts_[name] = file;
      } else {
        throw FormatError("corrupt artifact header line '" + line + "'");
      }
    }
  }

  const std::string& kind() const noexcept { return kind_; }
  bool has_field(const std::string& name) const { return fields_.contains(name); }

  const std::string& field(const std::string& name) const {
    auto it = fields_.find(name);
    if (it == fields_.end()) throw FormatError("artifact field '" + name + "' missing");
    return it->second;
  }
  double field_f64(const std::string& name) const { return std::stod(field(name)); }
  std::int64_t field_i64(const std::string& name) const { return std::stoll(field(name)); }
  std::uint64_t field_u64(const std::string& name) const { return std::stoull(field(name)); }
  bool field_bool(const std::string& name) const { return field(name) == "1"; }

  const ArrayEntry& entry(const std::string& name) const {
    auto it = arrays_.find(name);
    if (it == arrays_.end()) throw FormatError("artifact array '" + name + "' missing");
    return it->second;
  }
  const std::vector<std::size_t>& dims(const std::string& name) const { return entry(name).dims; }

  // Reads any float array (f32 or f64) widened to double.
  std::vector<double> array_f64(const std::string& name) const {
    const auto& e = entry(name);
    const auto raw = load(name, e);
    const std::size_t n = detail::product(e.dims);
    std::vector<double> out(n);
    if (e.dtype == DType::f64) {
      std::memcpy(out.data(), raw.data(), n * 8);
    } else if (e.dtype == DType::f32) {
      std::vector<float> tmp(n);
      std::memcpy(tmp.data(), raw.data(), n * 4);
      std::copy(tmp.begin(), tmp.end(), out.begin());
    } else {
      throw FormatError("array '" + name + "' is not floating point");
    }
    return out;
  }

  std::vector<std::int32_t> array_i32(const std::string& name) const {
    const auto& e = entry(name);
    if (e.dtype != DType::i32) throw FormatError("array '" + name + "' is not i32");
    const auto raw = load(name, e);
    std::vector<std::int32_t> out(detail::product(e.dims));
    std::memcpy(out.data(), raw.data(), out.size() * 4);
    return out;
  }

  std::vector<std::uint8_t> array_u8(const std::string& name) const {
    const auto& e = entry(name);
    if (e.dtype != DType::u8) throw FormatError("array '" + name + "' is not u8");
    const auto raw = load(name, e);
    return std::vector<std::uint8_t>(raw.begin(), raw.end());
  }

  std::string text(const std::string& name) const {
    auto it = texts_.find(name);
    if (it == texts_.end()) throw FormatError("artifact text '" + name + "' missing");
    const auto raw = detail::read_bytes(dir_ / it->second);
    return std::string(raw.begin(), raw.end());
  }

 private:
  std::vector<char> load(const std::string& name, const ArrayEntry& e) const {
    auto raw = detail::read_bytes(dir_ / e.file);
    const std::size_t expected = detail::product(e.dims) * dtype_size(e.dtype);
    if (raw.size() != expected)
      throw FormatError("array '" + name + "' is truncated or corrupt: expected " + std::to_string(expected) +
                        " bytes, found " + std::to_string(raw.size()));
    return raw;
  }

  std::filesystem::path dir_;
  std::string kind_;
  std::map<std::string, std::string> fields_;
  std::map<std::string, ArrayEntry> arrays_;
  std::map<std::string, std::string> texts_;
};

// Per-type persistence hooks; each module specializes this for its own types.
template <class T>
struct ArtifactCodec;

template <class T>
void save_artifact(const T& obj, const std::filesystem::path& dir) {
  ArtifactCodec<T>::save(obj, dir);
}

template <class T>
T load_artifact(const std::filesystem::path& dir) {
  return ArtifactCodec<T>::load(dir);
}

inline std::vector<std::string> split_lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string line;
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

inline std::string join_lines(const std::vector<std::string>& lines) {
  std::string s;
  for (const auto& l : lines) s += l + "\n";
  return s;
}

}  // namespace baple
