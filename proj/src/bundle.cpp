// Copyright 2026 The QMoP Projector Authors
// SPDX-License-Identifier: Apache-2.0

#include "qmop/bundle.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <utility>

#include "qmop/errors.hpp"
#include "qmop/numerics.hpp"
#include "qmop/rng.hpp"

namespace qmop {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, double v) {
  put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

void put_floats(std::vector<std::uint8_t>& out, std::span<const double> values) {
  for (double v : values) put_f32(out, v);
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  void require(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw LengthError(std::string("truncated feature file while reading ") + what +
                        ": expected " + std::to_string(pos_ + n) + " bytes, got " +
                        std::to_string(bytes_.size()));
    }
  }

  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  void floats(std::span<double> out, const char* what) {
    require(out.size() * 4, what);
    for (double& v : out) v = static_cast<double>(std::bit_cast<float>(u32()));
  }

  std::string text(std::size_t n) {
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void validate_bundle(const FeatureBundle& b, double attention_tol) {
  if (b.grid_h == 0 || b.grid_w == 0 || b.c_vis == 0 || b.c_txt == 0) {
    throw ValidationError("feature bundle dimensions must be nonzero");
  }
  const std::size_t n = b.num_tokens();
  if (b.patches.rows() != n || b.patches.cols() != b.c_vis) {
    throw ShapeError("patches are " + b.patches.shape_string() + ", expected " +
                     std::to_string(n) + "x" + std::to_string(b.c_vis));
  }
  if (b.cls_token.size() != b.c_vis || b.eos_token.size() != b.c_txt ||
      b.cls_attention.size() != n) {
    throw ShapeError("cls/eos/attention lengths do not match bundle dimensions");
  }
  auto check_finite = [](std::span<const double> v, const char* name) {
    for (double x : v) {
      if (!std::isfinite(x)) throw ValidationError(std::string(name) + " has a non-finite entry");
    }
  };
  check_finite(b.patches.data(), "patches");
  check_finite(b.cls_token.data(), "cls_token");
  check_finite(b.eos_token.data(), "eos_token");
  double sum = 0.0;
  for (double a : b.cls_attention) {
    if (!(a >= 0.0)) throw ValidationError("cls_attention has a negative or NaN entry");
    sum += a;
  }
  if (std::abs(sum - 1.0) > attention_tol) {
    throw ValidationError("cls_attention sums to " + std::to_string(sum) + ", expected 1");
  }
}

std::vector<std::uint8_t> encode_bundle(const FeatureBundle& b) {
  validate_bundle(b, 1e-3);
  std::vector<std::uint8_t> out(std::begin(kBundleMagic), std::end(kBundleMagic));
  out.reserve(kBundleHeaderBytes + 4 * (b.patches.size() + b.c_vis + b.c_txt + b.num_tokens()));
  put_u32(out, b.grid_h);
  put_u32(out, b.grid_w);
  put_u32(out, b.c_vis);
  put_u32(out, b.c_txt);
  put_u32(out, b.text_raw ? kFlagTextRaw : 0u);
  put_floats(out, b.patches.data());
  put_floats(out, b.cls_token.data());
  put_floats(out, b.eos_token.data());
  put_floats(out, b.cls_attention.data());
  if (b.text_raw) {
    put_u32(out, static_cast<std::uint32_t>(b.text_raw->size()));
    out.insert(out.end(), b.text_raw->begin(), b.text_raw->end());
  }
  return out;
}

FeatureBundle decode_bundle(const std::vector<std::uint8_t>& bytes) {
  Reader in(bytes);
  in.require(sizeof(kBundleMagic), "magic");
  if (std::memcmp(bytes.data(), kBundleMagic, sizeof(kBundleMagic)) != 0) {
    throw FormatError("bad magic: not a QMOPFT01 feature file");
  }
  in.text(sizeof(kBundleMagic));
  in.require(kBundleHeaderBytes - sizeof(kBundleMagic), "header");

  FeatureBundle b;
  b.grid_h = in.u32();
  b.grid_w = in.u32();
  b.c_vis = in.u32();
  b.c_txt = in.u32();
  const std::uint32_t flags = in.u32();
  if (b.grid_h == 0 || b.grid_w == 0 || b.c_vis == 0 || b.c_txt == 0) {
    throw FormatError("header has a zero dimension");
  }
  if ((flags & ~kFlagTextRaw) != 0) throw FormatError("unknown header flags");

  // Check every payload length before allocating so a corrupt header cannot
  // request an absurd buffer.
  const std::size_t n = b.num_tokens();
  const std::pair<const char*, unsigned __int128> fields[] = {
      {"patches", static_cast<unsigned __int128>(n) * b.c_vis},
      {"cls_token", b.c_vis},
      {"eos_token", b.c_txt},
      {"cls_attention", n},
  };
  unsigned __int128 need = 0;
  for (const auto& [name, count] : fields) {
    need += 4 * count;
    if (need > in.remaining()) {
      throw LengthError(std::string("truncated feature file while reading ") + name +
                        ": payload needs " + std::to_string(static_cast<std::uint64_t>(
                            std::min<unsigned __int128>(need, UINT64_MAX))) +
                        " bytes after the header, " + std::to_string(in.remaining()) +
                        " available");
    }
  }

  b.patches = Matrix(n, b.c_vis);
  b.cls_token = Vector(b.c_vis);
  b.eos_token = Vector(b.c_txt);
  b.cls_attention = Vector(n);
  in.floats(b.patches.data(), "patches");
  in.floats(b.cls_token.data(), "cls_token");
  in.floats(b.eos_token.data(), "eos_token");
  in.floats(b.cls_attention.data(), "cls_attention");

  if (flags & kFlagTextRaw) {
    in.require(4, "text length");
    const std::uint32_t len = in.u32();
    in.require(len, "text");
    b.text_raw = in.text(len);
  }
  if (in.remaining() != 0) {
    throw FormatError(std::to_string(in.remaining()) + " trailing bytes after payload");
  }
  validate_bundle(b, 1e-3);
  return b;
}

FeatureBundle read_bundle(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot open feature file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(file)),
                                  std::istreambuf_iterator<char>());
  if (file.bad()) throw IoError("failed reading " + path.string());
  return decode_bundle(bytes);
}

void write_bundle(const FeatureBundle& bundle, const std::filesystem::path& path) {
  const auto bytes = encode_bundle(bundle);
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw IoError("cannot open " + path.string() + " for writing");
  file.write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
  if (!file) throw IoError("failed writing " + path.string());
}

FeatureBundle quantize_f32(const FeatureBundle& bundle) {
  FeatureBundle out = bundle;
  auto round = [](std::span<double> xs) {
    for (double& x : xs) x = static_cast<double>(static_cast<float>(x));
  };
  round(out.patches.data());
  round(out.cls_token.data());
  round(out.eos_token.data());
  round(out.cls_attention.data());
  return out;
}

FeatureBundle synth_bundle(std::uint64_t seed, std::uint32_t grid_h, std::uint32_t grid_w,
                           std::uint32_t c_vis, std::uint32_t c_txt) {
  if (grid_h == 0 || grid_w == 0 || c_vis == 0 || c_txt == 0) {
    throw DomainError("synth_bundle: all dimensions must be at least 1");
  }
  FeatureBundle b;
  b.grid_h = grid_h;
  b.grid_w = grid_w;
  b.c_vis = c_vis;
  b.c_txt = c_txt;
  const std::size_t n = b.num_tokens();
  b.patches = seeded_fill(derive_seed(seed, 0), n, c_vis, Gaussian{1.0});
  b.cls_token = row_vector(seeded_fill(derive_seed(seed, 1), 1, c_vis, Gaussian{1.0}), 0);
  b.eos_token = row_vector(seeded_fill(derive_seed(seed, 2), 1, c_txt, Gaussian{1.0}), 0);
  b.cls_attention =
      softmax(row_vector(seeded_fill(derive_seed(seed, 3), 1, n, Gaussian{1.0}), 0));
  return b;
}

}  // namespace qmop
