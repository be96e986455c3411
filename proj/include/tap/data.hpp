#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tap/noise.hpp"

namespace tap {

enum class ColorSpace { kSrgb, kRawRgbg };

std::string to_string(ColorSpace c);

struct VideoMeta {
  std::optional<double> fps;
  std::optional<int> iso;
  std::string source;
};

// N x C x H x W frames; srgb has C == 3, raw_rgbg has C == 4.
struct VideoTensor {
  Tensor<float> frames;
  ColorSpace colorspace = ColorSpace::kSrgb;
  VideoMeta meta;

  int64_t num_frames() const { return frames.dim(0); }
  void validate() const;
};

// 8-bit or 16-bit PNG, gray or RGB(A). Values are scaled to [0, 1] by the
// bit-depth maximum; alpha is dropped. Returns C x H x W.
Tensor<float> read_png(const std::filesystem::path& path, int* bit_depth = nullptr);
// Writes C x H x W (C == 1 or 3) after clamping to [0, 1] and rounding.
void write_png(const std::filesystem::path& path, const Tensor<float>& image, int bit_depth = 8);
// Single-channel 16-bit PNG holding integer codes (no scaling).
Tensor<float> read_png16_codes(const std::filesystem::path& path);
void write_png16_codes(const std::filesystem::path& path, const Tensor<float>& codes);

// Sorted *.png files of a directory.
std::vector<std::filesystem::path> list_frames(const std::filesystem::path& dir);

VideoTensor load_srgb_video(const std::filesystem::path& dir);
void save_srgb_video(const std::filesystem::path& dir, const Tensor<float>& frames);

enum class CfaPattern { kRGGB, kBGGR, kGRBG, kGBRG };

CfaPattern parse_cfa(const std::string& s);
std::string to_string(CfaPattern p);

// bayer: 1 x 2H x 2W (or N x 1 x 2H x 2W) sensor codes -> 4 x H x W (or N x 4 x H x W)
// in the order R, G1, B, G2, normalized by (v - black) / (white - black) and clipped to [0, 1].
Tensor<float> pack_raw_to_rgbg(const Tensor<float>& bayer, CfaPattern pattern, double black_level, double white_level);
Tensor<float> unpack_rgbg_to_raw(const Tensor<float>& packed, CfaPattern pattern, double black_level,
                                 double white_level);

// Raw videos: 16-bit single-channel PNG frames plus <dir>/raw.json with
// black_level, white_level and optional iso. The CFA order and bit depth are
// dataset properties and must be supplied by the caller.
struct RawFormat {
  CfaPattern pattern = CfaPattern::kRGGB;
  int bit_depth = 0;  // required, e.g. 12
};

VideoTensor load_raw_video(const std::filesystem::path& dir, const RawFormat& format);
void save_raw_video(const std::filesystem::path& dir, const VideoTensor& packed, const RawFormat& format,
                    double black_level, double white_level);

VideoTensor synthesize_noisy(const VideoTensor& clean, const NoiseModel& model, Rng& rng);

enum class ToyKind { kStatic12, kTranslating };

ToyKind parse_toy_kind(const std::string& s);

struct ToyOptions {
  int64_t size = 64;          // frame height and width
  int64_t frames = 12;        // static12 always uses 12
  double shift_x = 1.0;       // px per frame for translating clips
  double shift_y = 0.0;
  bool subpixel = false;      // evaluate the texture at fractional positions
  int64_t channels = 3;
};

struct ToyClip {
  VideoTensor clean;
  VideoTensor noisy;
};

// Smooth periodic texture on the size x size torus, so integer shifts are exact rolls.
Tensor<float> toy_texture(int64_t size, int64_t channels, Rng& rng, double shift_y = 0.0, double shift_x = 0.0);

ToyClip make_toy_dataset(ToyKind kind, const ToyOptions& options, double sigma, Rng& rng);

// Text index of a dataset laid out as <root>/<video_id>/<%05d>.png:
//   tap-manifest 1
//   split <train|test>
//   video <id> <noise-descriptor|-> <frame count>
//   <frame path relative to root>   (one per frame)
struct ManifestEntry {
  std::string video_id;
  std::vector<std::string> frames;
  std::string noise;  // "-" when unknown
};

struct DatasetManifest {
  std::string split = "train";
  std::vector<ManifestEntry> entries;
};

DatasetManifest scan_dataset(const std::filesystem::path& root, const std::string& split, const std::string& noise);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& m);
DatasetManifest read_manifest(const std::filesystem::path& path, const std::filesystem::path& root);

// Loads every video of an sRGB dataset root in sorted id order.
std::vector<std::pair<std::string, VideoTensor>> load_srgb_dataset(const std::filesystem::path& root);

}  // namespace tap
