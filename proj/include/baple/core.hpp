#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <iomanip>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace baple {

// Error hierarchy. Every failure surfaced by the library is one of these.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& what)
      : Error("configuration error at '" + field + "': " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

class InsufficientDataError : public Error {
 public:
  InsufficientDataError(int label, std::size_t have, std::size_t need)
      : Error("class " + std::to_string(label) + " has " + std::to_string(have) +
              " samples, " + std::to_string(need) + " required"),
        label_(label) {}
  int label() const noexcept { return label_; }

 private:
  int label_;
};

class TokenizerError : public Error {
 public:
  explicit TokenizerError(std::vector<std::string> unknown)
      : Error(describe(unknown)), unknown_(std::move(unknown)) {}
  const std::vector<std::string>& unknown_tokens() const noexcept { return unknown_; }

 private:
  static std::string describe(const std::vector<std::string>& unknown) {
    std::string msg = "unknown tokens:";
    for (const auto& t : unknown) msg += " '" + t + "'";
    return msg;
  }
  std::vector<std::string> unknown_;
};

class EvaluationError : public Error {
 public:
  using Error::Error;
};

using LabelId = std::int32_t;

// H x W x C image, interleaved (HWC) storage, intensities nominally in [0,1].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(int h, int w, int c, double fill = 0.0)
      : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h) * w * c, fill) {}

  std::size_t size() const noexcept { return pixels.size(); }
  std::size_t index(int row, int col, int ch) const noexcept {
    return (static_cast<std::size_t>(row) * width + col) * channels + ch;
  }
  double& at(int row, int col, int ch) noexcept { return pixels[index(row, col, ch)]; }
  double at(int row, int col, int ch) const noexcept { return pixels[index(row, col, ch)]; }

  bool same_shape(const Image& other) const noexcept {
    return height == other.height && width == other.width && channels == other.channels;
  }
  friend bool operator==(const Image&, const Image&) = default;
};

inline void require_same_shape(const Image& a, const Image& b, std::string_view what) {
  if (!a.same_shape(b)) {
    std::ostringstream os;
    os << what << ": shape " << a.height << "x" << a.width << "x" << a.channels << " vs "
       << b.height << "x" << b.width << "x" << b.channels;
    throw DimensionError(os.str());
  }
}

inline void clamp_unit(Image& x) {
  for (auto& v : x.pixels) v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
}

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent stream seeds from one base seed.
inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t salt) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

inline double normal01(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

template <class T>
void shuffle_in_place(std::vector<T>& v, Rng& rng) {
  std::shuffle(v.begin(), v.end(), rng);
}

// FNV-1a, 64-bit.
class Fnv1a {
 public:
  void update(const void* data, std::size_t n) noexcept {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      state_ ^= p[i];
      state_ *= 0x100000001B3ULL;
    }
  }
  void update(std::string_view s) noexcept { update(s.data(), s.size()); }
  template <class T>
  void update_span(std::span<const T> s) noexcept {
    update(s.data(), s.size_bytes());
  }
  std::uint64_t digest() const noexcept { return state_; }
  std::string hex() const {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << state_;
    return os.str();
  }

 private:
  std::uint64_t state_ = 0xCBF29CE484222325ULL;
};

inline std::string fingerprint_of(std::string_view text) {
  Fnv1a h;
  h.update(text);
  return h.hex();
}

}  // namespace baple
