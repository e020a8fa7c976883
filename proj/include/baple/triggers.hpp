#pragma once

// Backdoor injection functions: learnable noise plus patch compositing, and the
// fixed BadNets / WaNet / FIBA baseline triggers.

#include <array>
#include <complex>
#include <fstream>
#include <functional>
#include <optional>

#include <unsupported/Eigen/FFT>

#include "baple/artifact.hpp"

namespace baple {

enum class Anchor {
  top_left,
  top_center,
  top_right,
  center_left,
  center_center,
  center_right,
  bottom_left,
  bottom_center,
  bottom_right
};

inline constexpr std::array<std::string_view, 9> kAnchorNames = {
    "top-left",    "top-center",    "top-right",    "center-left", "center-center",
    "center-right", "bottom-left", "bottom-center", "bottom-right"};

inline std::string_view anchor_name(Anchor a) { return kAnchorNames[static_cast<std::size_t>(a)]; }

inline Anchor parse_anchor(std::string_view name) {
  for (std::size_t i = 0; i < kAnchorNames.size(); ++i)
    if (kAnchorNames[i] == name) return static_cast<Anchor>(i);
  throw ConfigError("trigger.patch.location", "unknown anchor '" + std::string(name) + "'");
}

struct PatchSpec {
  Image patch;                 // h_p x w_p x C
  Anchor anchor = Anchor::bottom_left;
  std::vector<double> alpha;   // h_p x w_p in [0,1]; empty means opaque

  bool empty() const noexcept { return patch.height == 0 || patch.width == 0; }
};

struct Rect {
  int row = 0, col = 0, height = 0, width = 0;
  bool contains(int r, int c) const noexcept { return r >= row && r < row + height && c >= col && c < col + width; }
};

inline Rect anchored_rect(Anchor a, int height, int width, int patch_h, int patch_w) {
  if (patch_h > height || patch_w > width)
    throw DimensionError("patch " + std::to_string(patch_h) + "x" + std::to_string(patch_w) + " larger than image " +
                         std::to_string(height) + "x" + std::to_string(width));
  const int v = static_cast<int>(a) / 3, h = static_cast<int>(a) % 3;
  const int rows[3] = {0, (height - patch_h) / 2, height - patch_h};
  const int cols[3] = {0, (width - patch_w) / 2, width - patch_w};
  return {rows[v], cols[h], patch_h, patch_w};
}

inline Rect patch_rect(const PatchSpec& spec, const Image& x) {
  return anchored_rect(spec.anchor, x.height, x.width, spec.patch.height, spec.patch.width);
}

inline void validate_patch(const PatchSpec& spec, const Image& x) {
  if (spec.empty()) return;
  if (spec.patch.channels != x.channels) throw DimensionError("patch channel count differs from image");
  if (!spec.alpha.empty() && spec.alpha.size() != static_cast<std::size_t>(spec.patch.height) * spec.patch.width)
    throw DimensionError("alpha mask size must be h_p x w_p");
  (void)patch_rect(spec, x);
}

// Composites the patch onto the anchored rectangle; pixels outside it are untouched.
inline Image apply_patch(const Image& x, const PatchSpec& spec) {
  validate_patch(spec, x);
  Image out = x;
  if (spec.empty()) return out;
  const Rect r = patch_rect(spec, x);
  for (int i = 0; i < r.height; ++i) {
    for (int j = 0; j < r.width; ++j) {
      const double a = spec.alpha.empty() ? 1.0 : spec.alpha[static_cast<std::size_t>(i) * r.width + j];
      if (a == 0.0) continue;
      for (int ch = 0; ch < x.channels; ++ch) {
        const double v = a * spec.patch.at(i, j, ch) + (1.0 - a) * x.at(r.row + i, r.col + j, ch);
        out.at(r.row + i, r.col + j, ch) = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Patch factories

// Uniform random-noise patch (BadNets style).
inline Image noise_patch(int size, int channels, std::uint64_t seed) {
  Image p(size, size, channels);
  Rng rng(seed);
  for (auto& v : p.pixels) v = uniform01(rng);
  return p;
}

// A plus-shaped symbol on a light tile, the kind of marker that appears naturally on scans.
inline Image symbol_patch(int size, int channels) {
  Image p(size, size, channels);
  const double lo = size * 0.375, hi = size * 0.625;
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      const double rr = r + 0.5, cc = c + 0.5;
      const bool border = r == 0 || c == 0 || r == size - 1 || c == size - 1;
      const bool arm = (rr >= lo && rr <= hi && cc >= size * 0.15 && cc <= size * 0.85) ||
                       (cc >= lo && cc <= hi && rr >= size * 0.15 && rr <= size * 0.85);
      for (int ch = 0; ch < channels; ++ch) {
        double v = 0.95;
        if (border) v = 0.2;
        if (arm) v = ch == 0 ? 0.9 : 0.1;
        p.at(r, c, ch) = v;
      }
    }
  }
  return p;
}

// Reads a binary (P5/P6) or ASCII (P2/P3) PNM image scaled to [0,1].
inline Image load_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open patch image '" + path.string() + "'");
  auto next_token = [&in]() {
    std::string tok;
    char ch;
    while (in.get(ch)) {
      if (ch == '#') {
        std::string rest;
        std::getline(in, rest);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(ch))) {
        if (!tok.empty()) break;
        continue;
      }
      tok += ch;
    }
    return tok;
  };
  const std::string magic = next_token();
  const int channels = (magic == "P6" || magic == "P3") ? 3 : (magic == "P5" || magic == "P2") ? 1 : 0;
  if (channels == 0) throw FormatError("unsupported image format '" + magic + "' in " + path.string());
  const int w = std::stoi(next_token()), h = std::stoi(next_token()), maxval = std::stoi(next_token());
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) throw FormatError("bad PNM header in " + path.string());
  Image img(h, w, channels);
  const bool binary = magic == "P5" || magic == "P6";
  for (auto& v : img.pixels) {
    int raw;
    if (binary) {
      char b;
      if (!in.get(b)) throw FormatError("truncated PNM data in " + path.string());
      raw = static_cast<unsigned char>(b);
    } else {
      const auto tok = next_token();
      if (tok.empty()) throw FormatError("truncated PNM data in " + path.string());
      raw = std::stoi(tok);
    }
    v = static_cast<double>(raw) / maxval;
  }
  return img;
}

// ---------------------------------------------------------------------------
// Learnable noise

struct NoiseState {
  Image delta;
  double epsilon = 0.0;

  static NoiseState zeros(int h, int w, int c, double epsilon) { return {Image(h, w, c), epsilon}; }

  double max_abs() const {
    double m = 0.0;
    for (double v : delta.pixels) m = std::max(m, std::abs(v));
    return m;
  }
  friend bool operator==(const NoiseState&, const NoiseState&) = default;
};

inline NoiseState clip_noise(NoiseState state) {
  for (auto& v : state.delta.pixels) v = std::clamp(v, -state.epsilon, state.epsilon);
  return state;
}

// B(x) = (x + delta) composited with the patch, clamped to [0,1] after each stage.
inline Image inject_backdoor(const Image& x, const NoiseState& noise, const PatchSpec& patch) {
  Image y = x;
  if (noise.delta.size() != 0) {
    require_same_shape(x, noise.delta, "inject_backdoor noise");
    for (std::size_t i = 0; i < y.pixels.size(); ++i) y.pixels[i] += noise.delta.pixels[i];
    clamp_unit(y);
  }
  return apply_patch(y, patch);
}

// Diagonal of dB(x)/d(delta). The clamp passes gradient where the
// pre-clamp value lies in [0,1]; the patch scales it by (1 - alpha).
inline std::vector<double> injection_jacobian(const Image& x, const NoiseState& noise, const PatchSpec& patch) {
  std::vector<double> jac(x.size(), 1.0);
  if (noise.delta.size() != 0) {
    for (std::size_t i = 0; i < jac.size(); ++i) {
      const double v = x.pixels[i] + noise.delta.pixels[i];
      jac[i] = (v >= 0.0 && v <= 1.0) ? 1.0 : 0.0;
    }
  }
  if (!patch.empty()) {
    const Rect r = patch_rect(patch, x);
    for (int i = 0; i < r.height; ++i)
      for (int j = 0; j < r.width; ++j) {
        const double a = patch.alpha.empty() ? 1.0 : patch.alpha[static_cast<std::size_t>(i) * r.width + j];
        for (int ch = 0; ch < x.channels; ++ch) jac[x.index(r.row + i, r.col + j, ch)] *= (1.0 - a);
      }
  }
  return jac;
}

// ---------------------------------------------------------------------------
// BadNets

struct BadNetsSpec {
  int size = 24;
  Anchor anchor = Anchor::bottom_left;
  std::uint64_t seed = 0;
};

inline PatchSpec badnets_patch(const BadNetsSpec& spec, int channels) {
  return {noise_patch(spec.size, channels, spec.seed), spec.anchor, {}};
}

inline Image badnets_trigger(const Image& x, const BadNetsSpec& spec) {
  return apply_patch(x, badnets_patch(spec, x.channels));
}

// ---------------------------------------------------------------------------
// WaNet

struct WarpField {
  int grid = 4;
  double strength = 0.5;  // pixels
  int height = 0, width = 0;
  std::vector<double> flow_row, flow_col;  // H x W dense displacement

  double max_displacement() const {
    double m = 0.0;
    for (std::size_t i = 0; i < flow_row.size(); ++i) m = std::max(m, std::hypot(flow_row[i], flow_col[i]));
    return m;
  }
};

// Random control vectors inside the unit disk, scaled by `strength` and
// bilinearly upsampled to a dense H x W flow. Interpolation is a convex
// combination so |flow| <= strength everywhere.
inline WarpField make_warp_field(int height, int width, int grid, double strength, std::uint64_t seed) {
  if (grid < 2) throw ConfigError("trigger.wanet.grid", "must be >= 2");
  if (!(strength >= 0.0)) throw ConfigError("trigger.wanet.strength", "must be >= 0");
  if (strength > 0.5 * std::min(height, width))
    throw ConfigError("trigger.wanet.strength", "exceeds half the image side (" +
                                                    std::to_string(0.5 * std::min(height, width)) + " px)");
  Rng rng(seed);
  std::vector<double> cr(static_cast<std::size_t>(grid * grid)), cc(cr.size());
  for (std::size_t i = 0; i < cr.size(); ++i) {
    double a, b;
    do {
      a = 2 * uniform01(rng) - 1;
      b = 2 * uniform01(rng) - 1;
    } while (a * a + b * b > 1.0);
    cr[i] = strength * a;
    cc[i] = strength * b;
  }
  WarpField f;
  f.grid = grid;
  f.strength = strength;
  f.height = height;
  f.width = width;
  f.flow_row.resize(static_cast<std::size_t>(height) * width);
  f.flow_col.resize(f.flow_row.size());
  for (int r = 0; r < height; ++r) {
    const double gr = height > 1 ? static_cast<double>(r) * (grid - 1) / (height - 1) : 0.0;
    const int r0 = std::min(static_cast<int>(gr), grid - 2);
    const double tr = gr - r0;
    for (int c = 0; c < width; ++c) {
      const double gc = width > 1 ? static_cast<double>(c) * (grid - 1) / (width - 1) : 0.0;
      const int c0 = std::min(static_cast<int>(gc), grid - 2);
      const double tc = gc - c0;
      auto at = [grid](const std::vector<double>& v, int i, int j) { return v[static_cast<std::size_t>(i * grid + j)]; };
      auto interp = [&](const std::vector<double>& v) {
        return (1 - tr) * ((1 - tc) * at(v, r0, c0) + tc * at(v, r0, c0 + 1)) +
               tr * ((1 - tc) * at(v, r0 + 1, c0) + tc * at(v, r0 + 1, c0 + 1));
      };
      const std::size_t k = static_cast<std::size_t>(r) * width + c;
      f.flow_row[k] = interp(cr);
      f.flow_col[k] = interp(cc);
    }
  }
  return f;
}

// Backward warp with bilinear sampling; sample coordinates clamped to the border.
inline Image wanet_trigger(const Image& x, const WarpField& field) {
  if (field.height != x.height || field.width != x.width) throw DimensionError("warp field shape differs from image");
  Image out(x.height, x.width, x.channels);
  for (int r = 0; r < x.height; ++r) {
    for (int c = 0; c < x.width; ++c) {
      const std::size_t k = static_cast<std::size_t>(r) * x.width + c;
      const double sr = std::clamp(r + field.flow_row[k], 0.0, static_cast<double>(x.height - 1));
      const double sc = std::clamp(c + field.flow_col[k], 0.0, static_cast<double>(x.width - 1));
      const int r0 = static_cast<int>(std::floor(sr)), c0 = static_cast<int>(std::floor(sc));
      const int r1 = std::min(r0 + 1, x.height - 1), c1 = std::min(c0 + 1, x.width - 1);
      const double fr = sr - r0, fc = sc - c0;
      for (int ch = 0; ch < x.channels; ++ch) {
        // lerp form keeps constant regions exactly constant
        const double top = x.at(r0, c0, ch) + fc * (x.at(r0, c1, ch) - x.at(r0, c0, ch));
        const double bot = x.at(r1, c0, ch) + fc * (x.at(r1, c1, ch) - x.at(r1, c0, ch));
        out.at(r, c, ch) = std::clamp(top + fr * (bot - top), 0.0, 1.0);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// FIBA

struct FibaSpec {
  Image reference;
  double blend = 0.15;
  double radius = 0.1;  // fraction of the spectrum, (0, 0.5]

  void validate(const Image& x) const {
    if (!(radius > 0.0 && radius <= 0.5)) throw ConfigError("trigger.fiba.radius", "must lie in (0, 0.5]");
    if (!(blend >= 0.0 && blend <= 1.0)) throw ConfigError("trigger.fiba.blend", "must lie in [0, 1]");
    require_same_shape(x, reference, "fiba reference");
  }
};

// Smooth random texture used as the default amplitude donor.
inline Image fiba_reference(int height, int width, int channels, std::uint64_t seed) {
  Rng rng(seed);
  Image img(height, width, channels);
  struct Wave {
    double fr, fc, phase, amp;
  };
  for (int ch = 0; ch < channels; ++ch) {
    std::vector<Wave> waves;
    for (int k = 0; k < 4; ++k)
      waves.push_back({1 + 3 * uniform01(rng), 1 + 3 * uniform01(rng), 6.283185307179586 * uniform01(rng), 0.5 + uniform01(rng)});
    double norm = 0;
    for (const auto& w : waves) norm += w.amp;
    for (int r = 0; r < height; ++r)
      for (int c = 0; c < width; ++c) {
        double v = 0;
        for (const auto& w : waves)
          v += w.amp * std::sin(6.283185307179586 * (w.fr * r / height + w.fc * c / width) + w.phase);
        img.at(r, c, ch) = 0.5 + 0.5 * v / norm;
      }
  }
  return img;
}

using Spectrum = std::vector<std::complex<double>>;  // H x W row-major

namespace detail {

inline Spectrum fft2(const std::vector<std::complex<double>>& in, int h, int w, bool inverse) {
  Eigen::FFT<double> fft;
  Spectrum data = in;
  std::vector<std::complex<double>> line, out;
  for (int r = 0; r < h; ++r) {
    line.assign(data.begin() + static_cast<std::ptrdiff_t>(r) * w, data.begin() + static_cast<std::ptrdiff_t>(r + 1) * w);
    inverse ? fft.inv(out, line) : fft.fwd(out, line);
    std::copy(out.begin(), out.end(), data.begin() + static_cast<std::ptrdiff_t>(r) * w);
  }
  line.resize(static_cast<std::size_t>(h));
  for (int c = 0; c < w; ++c) {
    for (int r = 0; r < h; ++r) line[static_cast<std::size_t>(r)] = data[static_cast<std::size_t>(r) * w + c];
    inverse ? fft.inv(out, line) : fft.fwd(out, line);
    for (int r = 0; r < h; ++r) data[static_cast<std::size_t>(r) * w + c] = out[static_cast<std::size_t>(r)];
  }
  return data;
}

}  // namespace detail

inline Spectrum channel_spectrum(const Image& x, int ch) {
  std::vector<std::complex<double>> in(static_cast<std::size_t>(x.height) * x.width);
  for (int r = 0; r < x.height; ++r)
    for (int c = 0; c < x.width; ++c) in[static_cast<std::size_t>(r) * x.width + c] = x.at(r, c, ch);
  return detail::fft2(in, x.height, x.width, false);
}

// True where the centered normalized frequency radius is within `radius`.
inline std::vector<bool> low_frequency_mask(int height, int width, double radius) {
  std::vector<bool> m(static_cast<std::size_t>(height) * width);
  for (int u = 0; u < height; ++u) {
    const double fu = static_cast<double>(std::min(u, height - u)) / height;
    for (int v = 0; v < width; ++v) {
      const double fv = static_cast<double>(std::min(v, width - v)) / width;
      m[static_cast<std::size_t>(u) * width + v] = std::hypot(fu, fv) <= radius;
    }
  }
  return m;
}

struct FibaChannel {
  std::vector<double> amplitude;  // blended
  std::vector<double> phase;      // host phase, reused verbatim
  std::vector<double> host_amplitude;
};

inline std::vector<FibaChannel> fiba_decompose(const Image& x, const FibaSpec& spec) {
  spec.validate(x);
  const auto mask = low_frequency_mask(x.height, x.width, spec.radius);
  std::vector<FibaChannel> out;
  for (int ch = 0; ch < x.channels; ++ch) {
    const Spectrum host = channel_spectrum(x, ch);
    const Spectrum ref = channel_spectrum(spec.reference, ch);
    FibaChannel fc;
    fc.amplitude.resize(host.size());
    fc.phase.resize(host.size());
    fc.host_amplitude.resize(host.size());
    for (std::size_t i = 0; i < host.size(); ++i) {
      fc.host_amplitude[i] = std::abs(host[i]);
      fc.phase[i] = std::arg(host[i]);
      fc.amplitude[i] = mask[i] ? (1.0 - spec.blend) * fc.host_amplitude[i] + spec.blend * std::abs(ref[i])
                                : fc.host_amplitude[i];
    }
    out.push_back(std::move(fc));
  }
  return out;
}

// Inverse transform of amplitude * exp(i * phase) per channel; no clamping.
inline Image fiba_reconstruct(const std::vector<FibaChannel>& channels, int height, int width) {
  Image out(height, width, static_cast<int>(channels.size()));
  for (std::size_t ch = 0; ch < channels.size(); ++ch) {
    std::vector<std::complex<double>> spec(channels[ch].amplitude.size());
    for (std::size_t i = 0; i < spec.size(); ++i) spec[i] = std::polar(channels[ch].amplitude[i], channels[ch].phase[i]);
    const Spectrum img = detail::fft2(spec, height, width, true);
    for (int r = 0; r < height; ++r)
      for (int c = 0; c < width; ++c)
        out.at(r, c, static_cast<int>(ch)) = img[static_cast<std::size_t>(r) * width + c].real();
  }
  return out;
}

inline Image fiba_trigger(const Image& x, const FibaSpec& spec) {
  Image out = fiba_reconstruct(fiba_decompose(x, spec), x.height, x.width);
  clamp_unit(out);
  return out;
}

// ---------------------------------------------------------------------------
// Persistence

template <>
struct ArtifactCodec<NoiseState> {
  static void save(const NoiseState& n, const std::filesystem::path& dir) {
    ArtifactWriter(dir, "noise_state")
        .field("epsilon", n.epsilon)
        .array_f64("delta", n.delta.pixels,
                   {static_cast<std::size_t>(n.delta.height), static_cast<std::size_t>(n.delta.width),
                    static_cast<std::size_t>(n.delta.channels)})
        .commit();
  }
  static NoiseState load(const std::filesystem::path& dir) {
    ArtifactReader r(dir, "noise_state");
    const auto& d = r.dims("delta");
    if (d.size() != 3) throw FormatError("noise delta must be 3-D");
    NoiseState n;
    n.epsilon = r.field_f64("epsilon");
    n.delta = Image(static_cast<int>(d[0]), static_cast<int>(d[1]), static_cast<int>(d[2]));
    n.delta.pixels = r.array_f64("delta");
    return n;
  }
};

}  // namespace baple
