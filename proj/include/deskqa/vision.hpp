#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "deskqa/classify.hpp"
#include "deskqa/store.hpp"

namespace deskqa::vision {

struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> data;  // r, g, b per pixel, row-major

  bool operator==(const RgbImage&) const = default;
};

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> data;

  GrayImage() = default;
  GrayImage(std::size_t w, std::size_t h, std::uint8_t fill = 0) : width(w), height(h), data(w * h, fill) {}

  std::uint8_t at(std::size_t x, std::size_t y) const { return data[y * width + x]; }
  std::uint8_t& at(std::size_t x, std::size_t y) { return data[y * width + x]; }
  bool empty() const { return width == 0 || height == 0; }
  bool operator==(const GrayImage&) const = default;
};

GrayImage to_grayscale(const RgbImage& rgb);
RgbImage to_rgb(const GrayImage& gray);

/// Normalized Gaussian taps over [-ceil(3 sigma), ceil(3 sigma)].
std::vector<double> gaussian_kernel(double sigma);

/// Separable Gaussian blur with clamp-to-edge sampling, unrounded.
std::vector<double> gaussian_blur(const GrayImage& img, double sigma);

struct DogOptions {
  double sigma1 = 1.0;
  double sigma2 = 2.0;
  double gain = 1.5;
};

/// One pass of clamp(round(img + gain * (G(sigma1) * img - G(sigma2) * img))).
GrayImage dog_sharpen_once(const GrayImage& img, const DogOptions& options = {});

/// Two passes of the operator above.
GrayImage dog_sharpen(const GrayImage& img, const DogOptions& options = {});

/// Catmull-Rom weight (a = -0.5) for offset x.
double cubic_weight(double x);

/// Output pixel centers map to (x + 0.5) / factor - 0.5 in the source.
GrayImage upscale_bicubic(const GrayImage& img, int factor = 2);

/// Smallest t in 0..255 maximizing the between-class variance, compared in
/// exact integer arithmetic. A single-level image has no between-class
/// variance anywhere, so t = 0.
int otsu_threshold(const GrayImage& img);

struct Binarized {
  GrayImage image;
  int threshold = 0;
};

/// Pixels above the threshold become 255, others 0. An image with a single
/// intensity level has nothing to separate and binarizes to all zeros.
Binarized otsu_binarize(const GrayImage& img);

bool is_binary(const GrayImage& img);

GrayImage dilate(const GrayImage& img);

struct PreprocessOptions {
  DogOptions dog;
  int upscale = 2;
};

struct Stages {
  GrayImage gray;
  GrayImage sharpened;
  GrayImage upscaled;
  Binarized binary;
  GrayImage dilated;
};

/// Dark-on-light screenshots are inverted after binarization so text ends
/// up white; the inversion is skipped when the dark class is the majority.
Stages preprocess_stages(const RgbImage& rgb, const PreprocessOptions& options = {});
GrayImage preprocess(const RgbImage& rgb, const PreprocessOptions& options = {});

// ---- image files ----

RgbImage read_image(const std::filesystem::path& path);  // PNG, PPM or PGM by magic bytes
RgbImage decode_png(const std::vector<std::uint8_t>& bytes);
RgbImage decode_pnm(const std::vector<std::uint8_t>& bytes);
RgbImage decode_image(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> encode_pgm(const GrayImage& img);
std::vector<std::uint8_t> encode_png(const GrayImage& img);
void write_pgm(const std::filesystem::path& path, const GrayImage& img);
void write_png(const std::filesystem::path& path, const GrayImage& img);

// ---- OCR plug-in ----

struct Box {
  std::size_t x = 0;
  std::size_t y = 0;
  std::size_t width = 0;
  std::size_t height = 0;

  bool operator==(const Box&) const = default;
};

struct OcrLine {
  std::string text;
  Box box;
  bool emphasized = false;

  bool operator==(const OcrLine&) const = default;
};

struct OcrResult {
  std::vector<OcrLine> lines;
  std::string engine;

  std::string text() const;  // lines joined by '\n'
};

/// Parses the plug-in output: one JSON object per line with "text" and
/// optional "box" [x, y, w, h] and "emphasized". Boxes are clipped to the
/// image.
OcrResult parse_ocr_lines(std::string_view jsonl, std::size_t width, std::size_t height, std::string engine);

class OcrEngine {
 public:
  virtual ~OcrEngine() = default;
  virtual OcrResult recognize(const GrayImage& binary) const = 0;
  virtual std::string id() const = 0;
};

/// Serves canned OCR output keyed by the FNV-1a hash of the image bytes,
/// with an optional fallback for unknown images.
class FixtureOcrEngine final : public OcrEngine {
 public:
  void add(const GrayImage& image, std::vector<OcrLine> lines);
  void set_fallback(std::vector<OcrLine> lines) { fallback_ = std::move(lines); }
  /// Loads a fixture directory: every *.jsonl file holds plug-in output
  /// and `default.jsonl` becomes the fallback.
  static FixtureOcrEngine from_directory(const std::filesystem::path& dir);

  OcrResult recognize(const GrayImage& binary) const override;
  std::string id() const override { return "fixture"; }

 private:
  std::map<std::uint64_t, std::vector<OcrLine>> by_hash_;
  std::optional<std::vector<OcrLine>> fallback_;
};

/// Runs `command <image.pgm>` and reads JSON lines from its stdout.
class SubprocessOcrEngine final : public OcrEngine {
 public:
  explicit SubprocessOcrEngine(std::string command) : command_(std::move(command)) {}
  OcrResult recognize(const GrayImage& binary) const override;
  std::string id() const override { return "subprocess:" + command_; }

 private:
  std::string command_;
};

// ---- post-correction and routing ----

class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(const std::vector<std::string>& words);
  static Vocabulary from_snapshot(const Snapshot& snapshot);

  void add(std::string_view word);
  void add_text(std::string_view text);
  bool contains(std::string_view word) const;
  std::size_t size() const { return words_.size(); }

  /// Unique in-vocabulary word within distance 2 sharing the first letter,
  /// at the minimal distance found.
  std::optional<std::string> correction(std::string_view word) const;

 private:
  std::set<std::string> words_;
  std::map<char, std::vector<std::string>> by_initial_;
};

/// Replaces out-of-vocabulary words by their unique correction and keeps
/// everything else byte for byte. Capitalization of the original word is
/// carried over.
std::string correct_tokens(std::string_view text, const Vocabulary& vocabulary);

struct ErrorQuery {
  std::string application;
  double confidence = 0.0;
  std::string error_text;
  std::map<std::string, std::string> meta;
  std::string corrected_text;

  /// Text to hand to the dialog: the error lines, or all text without them.
  std::string question() const;
};

void to_json(Json& j, const ErrorQuery& q);

bool is_error_line(std::string_view line);

ErrorQuery route_screenshot(const OcrResult& ocr, const classify::QuestionClassifier& model,
                            const Vocabulary* vocabulary = nullptr);

}  // namespace deskqa::vision
