#include "tap/data.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <memory>
#include <numbers>
#include <sstream>

#include "tap/errors.hpp"

namespace tap {

std::string to_string(ColorSpace c) { return c == ColorSpace::kSrgb ? "srgb" : "raw_rgbg"; }

void VideoTensor::validate() const {
  if (frames.ndim() != 4 || frames.dim(0) < 1) throw DataError("video must be N x C x H x W with N >= 1");
  const int64_t want = colorspace == ColorSpace::kSrgb ? 3 : 4;
  if (frames.dim(1) != want)
    throw DataError(to_string(colorspace) + " video needs " + std::to_string(want) + " channels, got " +
                    std::to_string(frames.dim(1)));
}

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

struct RawPng {
  int64_t width = 0, height = 0, channels = 0;
  int bit_depth = 8;
  std::vector<uint16_t> samples;  // row-major, interleaved channels
};

RawPng read_png_raw(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw DataError("cannot open image: " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw DataError("not a PNG file: " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("libpng initialization failed");
  }
  RawPng out;
  std::vector<png_byte> buf;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("corrupt PNG: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (depth < 8) depth = 8;
  png_read_update_info(png, info);
  out.width = png_get_image_width(png, info);
  out.height = png_get_image_height(png, info);
  out.channels = png_get_channels(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  const size_t rowbytes = png_get_rowbytes(png, info);
  buf.resize(rowbytes * static_cast<size_t>(out.height));
  std::vector<png_bytep> rows(static_cast<size_t>(out.height));
  for (int64_t y = 0; y < out.height; ++y) rows[static_cast<size_t>(y)] = buf.data() + rowbytes * static_cast<size_t>(y);
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  const size_t n = static_cast<size_t>(out.width * out.height * out.channels);
  out.samples.resize(n);
  if (out.bit_depth == 16) {
    for (size_t i = 0; i < n; ++i) out.samples[i] = static_cast<uint16_t>((buf[2 * i] << 8) | buf[2 * i + 1]);
  } else {
    for (size_t i = 0; i < n; ++i) out.samples[i] = buf[i];
  }
  return out;
}

void write_png_raw(const std::filesystem::path& path, int64_t width, int64_t height, int channels, int bit_depth,
                   const std::vector<uint16_t>& samples) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw DataError("cannot write image: " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw DataError("libpng initialization failed");
  }
  const size_t bps = bit_depth == 16 ? 2 : 1;
  const size_t rowbytes = static_cast<size_t>(width * channels) * bps;
  std::vector<png_byte> buf(rowbytes * static_cast<size_t>(height));
  for (size_t i = 0; i < samples.size(); ++i) {
    if (bps == 2) {
      buf[2 * i] = static_cast<png_byte>(samples[i] >> 8);
      buf[2 * i + 1] = static_cast<png_byte>(samples[i] & 0xff);
    } else {
      buf[i] = static_cast<png_byte>(samples[i]);
    }
  }
  std::vector<png_bytep> rows(static_cast<size_t>(height));
  for (int64_t y = 0; y < height; ++y) rows[static_cast<size_t>(y)] = buf.data() + rowbytes * static_cast<size_t>(y);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("failed writing PNG: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth,
               channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// Pixel offsets (row, col) inside the 2x2 tile for R, G1, B, G2.
std::array<std::pair<int, int>, 4> cfa_positions(CfaPattern p) {
  switch (p) {
    case CfaPattern::kRGGB:
      return {{{0, 0}, {0, 1}, {1, 1}, {1, 0}}};
    case CfaPattern::kBGGR:
      return {{{1, 1}, {1, 0}, {0, 0}, {0, 1}}};
    case CfaPattern::kGRBG:
      return {{{0, 1}, {0, 0}, {1, 0}, {1, 1}}};
    case CfaPattern::kGBRG:
      return {{{1, 0}, {1, 1}, {0, 1}, {0, 0}}};
  }
  throw ConfigError("unknown CFA pattern");
}

void check_levels(double black, double white) {
  if (!(white > black)) throw ConfigError("white level must exceed black level");
}

}  // namespace

Tensor<float> read_png(const std::filesystem::path& path, int* bit_depth) {
  const RawPng p = read_png_raw(path);
  if (bit_depth) *bit_depth = p.bit_depth;
  const int64_t C = p.channels >= 3 ? 3 : 1;
  const float scale = p.bit_depth == 16 ? 65535.f : 255.f;
  Tensor<float> out({C, p.height, p.width});
  for (int64_t y = 0; y < p.height; ++y)
    for (int64_t x = 0; x < p.width; ++x)
      for (int64_t c = 0; c < C; ++c)
        out[(c * p.height + y) * p.width + x] =
            static_cast<float>(p.samples[static_cast<size_t>((y * p.width + x) * p.channels + c)]) / scale;
  return out;
}

void write_png(const std::filesystem::path& path, const Tensor<float>& image, int bit_depth) {
  if (image.ndim() != 3 || (image.dim(0) != 1 && image.dim(0) != 3))
    throw DataError("write_png expects 1 x H x W or 3 x H x W, got " + shape_str(image.shape()));
  if (bit_depth != 8 && bit_depth != 16) throw ConfigError("PNG bit depth must be 8 or 16");
  const int64_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  const double maxv = bit_depth == 16 ? 65535.0 : 255.0;
  std::vector<uint16_t> s(static_cast<size_t>(C * H * W));
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x)
      for (int64_t c = 0; c < C; ++c) {
        const double v = std::clamp(static_cast<double>(image[(c * H + y) * W + x]), 0.0, 1.0);
        s[static_cast<size_t>((y * W + x) * C + c)] = static_cast<uint16_t>(std::lround(v * maxv));
      }
  write_png_raw(path, W, H, static_cast<int>(C), bit_depth, s);
}

Tensor<float> read_png16_codes(const std::filesystem::path& path) {
  const RawPng p = read_png_raw(path);
  if (p.channels != 1) throw DataError("raw frame must be single-channel: " + path.string());
  Tensor<float> out({1, p.height, p.width});
  for (size_t i = 0; i < p.samples.size(); ++i) out[static_cast<int64_t>(i)] = static_cast<float>(p.samples[i]);
  return out;
}

void write_png16_codes(const std::filesystem::path& path, const Tensor<float>& codes) {
  if (codes.ndim() != 3 || codes.dim(0) != 1) throw DataError("raw frame must be 1 x H x W");
  std::vector<uint16_t> s(static_cast<size_t>(codes.numel()));
  for (int64_t i = 0; i < codes.numel(); ++i) {
    const double v = std::round(static_cast<double>(codes[i]));
    if (v < 0.0 || v > 65535.0) throw DataError("raw code out of 16-bit range");
    s[static_cast<size_t>(i)] = static_cast<uint16_t>(v);
  }
  write_png_raw(path, codes.dim(2), codes.dim(1), 1, 16, s);
}

std::vector<std::filesystem::path> list_frames(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> frames;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") frames.push_back(e.path());
  std::sort(frames.begin(), frames.end());
  return frames;
}

VideoTensor load_srgb_video(const std::filesystem::path& dir) {
  const auto paths = list_frames(dir);
  if (paths.empty()) throw DataError("no frames in " + dir.string());
  std::vector<Tensor<float>> frames;
  Shape first;
  for (const auto& p : paths) {
    Tensor<float> f = read_png(p);
    if (f.dim(0) == 1) {
      Tensor<float> rgb({3, f.dim(1), f.dim(2)});
      for (int64_t c = 0; c < 3; ++c) std::copy(f.data(), f.data() + f.numel(), rgb.data() + c * f.numel());
      f = std::move(rgb);
    }
    if (first.empty()) first = f.shape();
    if (f.shape() != first)
      throw DataError("frame " + p.filename().string() + " has shape " + shape_str(f.shape()) + " but " +
                      paths.front().filename().string() + " has " + shape_str(first));
    frames.push_back(f.reshaped({1, f.dim(0), f.dim(1), f.dim(2)}));
  }
  VideoTensor v;
  v.frames = batch_stack<float>(frames);
  v.colorspace = ColorSpace::kSrgb;
  v.meta.source = dir.string();
  return v;
}

void save_srgb_video(const std::filesystem::path& dir, const Tensor<float>& frames) {
  if (frames.ndim() != 4) throw DataError("save_srgb_video expects N x C x H x W");
  for (int64_t t = 0; t < frames.dim(0); ++t) {
    char name[32];
    std::snprintf(name, sizeof(name), "%05lld.png", static_cast<long long>(t));
    const auto f = batch_slice(frames, t);
    write_png(dir / name, f.reshaped({f.dim(1), f.dim(2), f.dim(3)}));
  }
}

CfaPattern parse_cfa(const std::string& s) {
  std::string u = s;
  for (auto& ch : u) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  if (u == "RGGB") return CfaPattern::kRGGB;
  if (u == "BGGR") return CfaPattern::kBGGR;
  if (u == "GRBG") return CfaPattern::kGRBG;
  if (u == "GBRG") return CfaPattern::kGBRG;
  throw ConfigError("unknown CFA pattern '" + s + "' (expected RGGB, BGGR, GRBG or GBRG)");
}

std::string to_string(CfaPattern p) {
  switch (p) {
    case CfaPattern::kRGGB:
      return "RGGB";
    case CfaPattern::kBGGR:
      return "BGGR";
    case CfaPattern::kGRBG:
      return "GRBG";
    case CfaPattern::kGBRG:
      return "GBRG";
  }
  return "?";
}

Tensor<float> pack_raw_to_rgbg(const Tensor<float>& bayer, CfaPattern pattern, double black, double white) {
  check_levels(black, white);
  const Tensor<float> b = bayer.ndim() == 3 ? bayer.reshaped({1, bayer.dim(0), bayer.dim(1), bayer.dim(2)}) : bayer;
  if (b.ndim() != 4 || b.dim(1) != 1) throw DataError("bayer input must be 1 x 2H x 2W, got " + shape_str(bayer.shape()));
  const int64_t N = b.dim(0), H2 = b.dim(2), W2 = b.dim(3);
  if (H2 % 2 != 0 || W2 % 2 != 0) throw DataError("bayer dimensions must be even, got " + shape_str(bayer.shape()));
  const auto pos = cfa_positions(pattern);
  const int64_t H = H2 / 2, W = W2 / 2;
  Tensor<float> out({N, 4, H, W});
  const double range = white - black;
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < 4; ++c)
      for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
          const double v = b.at(n, 0, 2 * y + pos[static_cast<size_t>(c)].first, 2 * x + pos[static_cast<size_t>(c)].second);
          out.at(n, c, y, x) = static_cast<float>(std::clamp((v - black) / range, 0.0, 1.0));
        }
  return bayer.ndim() == 3 ? out.reshaped({4, H, W}) : out;
}

Tensor<float> unpack_rgbg_to_raw(const Tensor<float>& packed, CfaPattern pattern, double black, double white) {
  check_levels(black, white);
  const Tensor<float> p =
      packed.ndim() == 3 ? packed.reshaped({1, packed.dim(0), packed.dim(1), packed.dim(2)}) : packed;
  if (p.ndim() != 4 || p.dim(1) != 4) throw DataError("packed input must be 4 x H x W, got " + shape_str(packed.shape()));
  const auto pos = cfa_positions(pattern);
  const int64_t N = p.dim(0), H = p.dim(2), W = p.dim(3);
  Tensor<float> out({N, 1, 2 * H, 2 * W});
  const double range = white - black;
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < 4; ++c)
      for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x)
          out.at(n, 0, 2 * y + pos[static_cast<size_t>(c)].first, 2 * x + pos[static_cast<size_t>(c)].second) =
              static_cast<float>(static_cast<double>(p.at(n, c, y, x)) * range + black);
  return packed.ndim() == 3 ? out.reshaped({1, 2 * H, 2 * W}) : out;
}

VideoTensor load_raw_video(const std::filesystem::path& dir, const RawFormat& format) {
  if (format.bit_depth < 1 || format.bit_depth > 16)
    throw ConfigError("raw bit depth must be given explicitly (1..16)");
  std::ifstream is(dir / "raw.json");
  if (!is) throw DataError("raw video " + dir.string() + " lacks raw.json with black/white levels");
  nlohmann::json side;
  try {
    is >> side;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt raw.json in " + dir.string() + ": " + e.what());
  }
  const double black = side.value("black_level", 0.0);
  const double white = side.value("white_level", static_cast<double>((1 << format.bit_depth) - 1));
  const auto paths = list_frames(dir);
  if (paths.empty()) throw DataError("no frames in " + dir.string());
  std::vector<Tensor<float>> frames;
  for (const auto& p : paths) {
    const auto codes = read_png16_codes(p);
    for (auto v : codes.span())
      if (v > static_cast<float>((1 << format.bit_depth) - 1))
        throw DataError("frame " + p.filename().string() + " exceeds the declared bit depth " +
                        std::to_string(format.bit_depth));
    auto packed = pack_raw_to_rgbg(codes, format.pattern, black, white);
    if (!frames.empty() && packed.shape() != Shape{frames[0].dim(1), frames[0].dim(2), frames[0].dim(3)})
      throw DataError("frame " + p.filename().string() + " differs in shape from the first frame");
    frames.push_back(packed.reshaped({1, packed.dim(0), packed.dim(1), packed.dim(2)}));
  }
  VideoTensor v;
  v.frames = batch_stack<float>(frames);
  v.colorspace = ColorSpace::kRawRgbg;
  v.meta.source = dir.string();
  if (side.contains("iso")) v.meta.iso = side["iso"].get<int>();
  return v;
}

void save_raw_video(const std::filesystem::path& dir, const VideoTensor& packed, const RawFormat& format,
                    double black, double white) {
  packed.validate();
  if (packed.colorspace != ColorSpace::kRawRgbg) throw DataError("save_raw_video needs a raw_rgbg video");
  const auto bayer = unpack_rgbg_to_raw(packed.frames, format.pattern, black, white);
  for (int64_t t = 0; t < bayer.dim(0); ++t) {
    char name[32];
    std::snprintf(name, sizeof(name), "%05lld.png", static_cast<long long>(t));
    const auto f = batch_slice(bayer, t);
    write_png16_codes(dir / name, f.reshaped({1, f.dim(2), f.dim(3)}));
  }
  nlohmann::json side = {{"black_level", black}, {"white_level", white}, {"cfa", to_string(format.pattern)},
                         {"bit_depth", format.bit_depth}};
  if (packed.meta.iso) side["iso"] = *packed.meta.iso;
  std::ofstream os(dir / "raw.json");
  os << side.dump(2) << "\n";
}

VideoTensor synthesize_noisy(const VideoTensor& clean, const NoiseModel& model, Rng& rng) {
  VideoTensor out = clean;
  Tensor<float> n = sample_noise(clean.frames, model, rng);
  out.frames += n;
  return out;
}

ToyKind parse_toy_kind(const std::string& s) {
  if (s == "static12") return ToyKind::kStatic12;
  if (s == "translating") return ToyKind::kTranslating;
  throw ConfigError("unknown toy kind '" + s + "' (expected static12 or translating)");
}

namespace {

struct TextureSpec {
  struct Wave {
    double fy, fx, phase, amp;
  };
  struct Disc {
    double cy, cx, radius;
    std::vector<double> color;
  };
  std::vector<std::vector<Wave>> waves;  // per channel
  std::vector<Disc> discs;
  std::vector<double> base;
};

TextureSpec random_texture(int64_t channels, Rng& rng, int64_t size) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> freq(-6, 6);
  TextureSpec s;
  s.waves.resize(static_cast<size_t>(channels));
  // Shared waves give correlated colour structure; one extra per channel adds tint.
  std::vector<TextureSpec::Wave> shared;
  for (int k = 0; k < 4; ++k) {
    int fy = 0, fx = 0;
    while (fy == 0 && fx == 0) fy = freq(rng), fx = freq(rng);
    shared.push_back({static_cast<double>(fy), static_cast<double>(fx), 2 * std::numbers::pi * u(rng), 0.08 + 0.1 * u(rng)});
  }
  for (int64_t c = 0; c < channels; ++c) {
    s.waves[static_cast<size_t>(c)] = shared;
    int fy = 0, fx = 0;
    while (fy == 0 && fx == 0) fy = freq(rng), fx = freq(rng);
    s.waves[static_cast<size_t>(c)].push_back(
        {static_cast<double>(fy), static_cast<double>(fx), 2 * std::numbers::pi * u(rng), 0.06 * u(rng)});
    s.base.push_back(0.35 + 0.3 * u(rng));
  }
  const int discs = 6;
  for (int d = 0; d < discs; ++d) {
    TextureSpec::Disc disc{u(rng) * static_cast<double>(size), u(rng) * static_cast<double>(size),
                           3.0 + u(rng) * static_cast<double>(size) / 6.0, {}};
    for (int64_t c = 0; c < channels; ++c) disc.color.push_back(0.1 + 0.8 * u(rng));
    s.discs.push_back(disc);
  }
  return s;
}

double wrap(double d, double size) { return d - size * std::round(d / size); }

Tensor<float> render(const TextureSpec& s, int64_t size, double oy, double ox) {
  const auto C = static_cast<int64_t>(s.base.size());
  const double S = static_cast<double>(size);
  Tensor<float> out({C, size, size});
  for (int64_t y = 0; y < size; ++y)
    for (int64_t x = 0; x < size; ++x) {
      const double py = static_cast<double>(y) - oy, px = static_cast<double>(x) - ox;
      for (int64_t c = 0; c < C; ++c) {
        double v = s.base[static_cast<size_t>(c)];
        for (const auto& w : s.waves[static_cast<size_t>(c)])
          v += w.amp * std::sin(2 * std::numbers::pi * (w.fy * py + w.fx * px) / S + w.phase);
        for (const auto& d : s.discs) {
          const double dist = std::hypot(wrap(py - d.cy, S), wrap(px - d.cx, S));
          // One-pixel anti-aliased edge keeps sub-pixel shifts well defined.
          const double m = std::clamp(d.radius - dist + 0.5, 0.0, 1.0);
          v = v * (1.0 - m) + d.color[static_cast<size_t>(c)] * m;
        }
        out[(c * size + y) * size + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  return out;
}

Tensor<float> roll(const Tensor<float>& img, int64_t dy, int64_t dx) {
  const int64_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
  Tensor<float> out(img.shape());
  for (int64_t c = 0; c < C; ++c)
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x) {
        const int64_t sy = ((y - dy) % H + H) % H, sx = ((x - dx) % W + W) % W;
        out[(c * H + y) * W + x] = img[(c * H + sy) * W + sx];
      }
  return out;
}

}  // namespace

Tensor<float> toy_texture(int64_t size, int64_t channels, Rng& rng, double shift_y, double shift_x) {
  return render(random_texture(channels, rng, size), size, shift_y, shift_x);
}

ToyClip make_toy_dataset(ToyKind kind, const ToyOptions& o, double sigma, Rng& rng) {
  if (o.size < 8) throw ConfigError("toy frame size must be >= 8");
  if (o.channels != 3 && o.channels != 4) throw ConfigError("toy clips have 3 (srgb) or 4 (raw) channels");
  const int64_t N = kind == ToyKind::kStatic12 ? 12 : o.frames;
  if (N < 1) throw ConfigError("toy clip needs at least one frame");
  const TextureSpec spec = random_texture(o.channels, rng, o.size);
  const Tensor<float> first = render(spec, o.size, 0.0, 0.0);
  std::vector<Tensor<float>> frames;
  for (int64_t k = 0; k < N; ++k) {
    Tensor<float> f;
    if (kind == ToyKind::kStatic12) {
      f = first;
    } else if (o.subpixel) {
      f = render(spec, o.size, o.shift_y * static_cast<double>(k), o.shift_x * static_cast<double>(k));
    } else {
      if (o.shift_x != std::round(o.shift_x) || o.shift_y != std::round(o.shift_y))
        throw ConfigError("fractional shifts need the subpixel option");
      f = roll(first, static_cast<int64_t>(o.shift_y) * k, static_cast<int64_t>(o.shift_x) * k);
    }
    frames.push_back(f.reshaped({1, f.dim(0), f.dim(1), f.dim(2)}));
  }
  ToyClip clip;
  clip.clean.frames = batch_stack<float>(frames);
  clip.clean.colorspace = o.channels == 3 ? ColorSpace::kSrgb : ColorSpace::kRawRgbg;
  clip.clean.meta.source = kind == ToyKind::kStatic12 ? "toy:static12" : "toy:translating";
  clip.noisy = synthesize_noisy(clip.clean, NoiseModel::awgn(sigma), rng);
  return clip;
}

DatasetManifest scan_dataset(const std::filesystem::path& root, const std::string& split, const std::string& noise) {
  if (!std::filesystem::is_directory(root)) throw DataError("dataset root not found: " + root.string());
  if (split != "train" && split != "test") throw ConfigError("split must be train or test");
  std::vector<std::filesystem::path> dirs;
  for (const auto& e : std::filesystem::directory_iterator(root))
    if (e.is_directory()) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  DatasetManifest m;
  m.split = split;
  for (const auto& d : dirs) {
    const auto frames = list_frames(d);
    if (frames.empty()) continue;
    ManifestEntry e;
    e.video_id = d.filename().string();
    e.noise = noise.empty() ? "-" : noise;
    for (const auto& f : frames) e.frames.push_back(std::filesystem::relative(f, root).generic_string());
    m.entries.push_back(std::move(e));
  }
  if (m.entries.empty()) throw DataError("no videos under " + root.string());
  return m;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw DataError("cannot write manifest: " + path.string());
  os << "tap-manifest 1\nsplit " << m.split << "\n";
  for (const auto& e : m.entries) {
    os << "video " << e.video_id << " " << (e.noise.empty() ? "-" : e.noise) << " " << e.frames.size() << "\n";
    for (const auto& f : e.frames) os << f << "\n";
  }
}

DatasetManifest read_manifest(const std::filesystem::path& path, const std::filesystem::path& root) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open manifest: " + path.string());
  std::string line, word;
  int version = 0;
  if (!std::getline(is, line) || (std::stringstream(line) >> word >> version, word != "tap-manifest" || version != 1))
    throw DataError("not a tap manifest: " + path.string());
  DatasetManifest m;
  if (!std::getline(is, line) || !(std::stringstream(line) >> word >> m.split) || word != "split")
    throw DataError("manifest lacks a split line: " + path.string());
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ls(line);
    ManifestEntry e;
    size_t n = 0;
    if (!(ls >> word >> e.video_id >> e.noise >> n) || word != "video")
      throw DataError("malformed manifest line: '" + line + "'");
    for (size_t i = 0; i < n; ++i) {
      if (!std::getline(is, line)) throw DataError("manifest truncated in video " + e.video_id);
      if (!std::filesystem::exists(root / line)) throw DataError("manifest frame missing on disk: " + line);
      if (!e.frames.empty() && line < e.frames.back())
        throw DataError("frames of video " + e.video_id + " are not in lexicographic order");
      e.frames.push_back(line);
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

std::vector<std::pair<std::string, VideoTensor>> load_srgb_dataset(const std::filesystem::path& root) {
  const auto m = scan_dataset(root, "train", "-");
  std::vector<std::pair<std::string, VideoTensor>> out;
  for (const auto& e : m.entries) out.emplace_back(e.video_id, load_srgb_video(root / e.video_id));
  return out;
}

}  // namespace tap
