#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dualtsr/image.hpp"
#include "dualtsr/rng.hpp"
#include "dualtsr/text.hpp"

namespace dualtsr::synthdata {

// Toy charset: digits plus 16 letters. Vocabulary ids follow charset order;
// PAD takes id N-1 = 26, MASK id N = 27.
inline constexpr const char* kCharset = "0123456789ABCDEFGHKMNPRSTU";
inline constexpr int kGlyphCount = 26;
inline constexpr int kPadId = kGlyphCount;       // 26
inline constexpr int kVocab = kGlyphCount + 1;   // 27 real tokens incl PAD
inline constexpr char kPadChar = ' ';

// Text <-> token round trip. encode right-pads to `length`; decode strips PAD.
textdiff::TokenSequence encode_text(const std::string& text, int length);
std::string decode_text(const textdiff::TokenSequence& seq);

struct RenderSpec {
    int canvas_h = 32;
    int canvas_w = 128;
    int channels = 3;
    int text_len_min = 4;
    int text_len_max = 4;
    // Intensities in [-1, 1].
    float fg_min = 0.3f, fg_max = 1.0f;
    float bg_min = -1.0f, bg_max = -0.3f;
    int jitter = 1;  // max glyph offset in pixels
};

struct Range {
    double lo = 0.0;
    double hi = 0.0;
};

struct DegradeSpec {
    int scale = 4;
    Range blur_sigma{0.2, 2.0};
    Range noise_std{0.0, 0.05};
    Range quant_quality{0.5, 1.0};  // 1 = lossless
    bool randomize_order = true;
};

// Deterministic glyph rendering; PAD draws nothing.
ImageGrid render(const textdiff::TokenSequence& text, const RenderSpec& spec,
                 Rng& rng);

// Seeded blind degradation: random composition of Gaussian blur, additive
// Gaussian noise, block-DCT quantization, and bicubic downsampling by
// `scale`; mild or severe severity regime picked with probability 1/2.
ImageGrid degrade(const ImageGrid& hr, const DegradeSpec& spec, Rng& rng);

// Shared resampling/IO primitives.
ImageGrid bicubic_resize(const ImageGrid& src, int out_h, int out_w);
ImageGrid gaussian_blur(const ImageGrid& src, double sigma);
ImageGrid dct_quantize(const ImageGrid& src, double quality);

// Lossless 8-bit binary PPM; [-1,1] maps to 0..255 deterministically.
void write_ppm(const ImageGrid& img, const std::string& path);
ImageGrid read_ppm(const std::string& path);

struct ManifestRecord {
    std::string hr_path;
    std::string lr_path;
    std::string transcription;
};

// Tab-separated, one record per line: hr_path, lr_path, transcription.
void write_manifest(const std::vector<ManifestRecord>& records,
                    const std::string& path);
std::vector<ManifestRecord> read_manifest(const std::string& path);

struct DatasetPaths {
    std::string train_manifest;
    std::string test_manifest;
};

// Renders `count` HR/LR pairs under out_dir and splits them into train/test
// manifests by seeded shuffle.
DatasetPaths make_dataset(int count, const RenderSpec& render_spec,
                          const DegradeSpec& degrade_spec, std::uint64_t seed,
                          const std::string& out_dir,
                          double test_fraction = 0.1);

// One random sample drawn from the generative specs (used by on-the-fly
// training batches and make_dataset alike).
struct Sample {
    ImageGrid hr;
    ImageGrid lr;
    textdiff::TokenSequence text;
};
Sample make_sample(const RenderSpec& render_spec,
                   const DegradeSpec& degrade_spec, Rng& rng, int seq_len);

}  // namespace dualtsr::synthdata
