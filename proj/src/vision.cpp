#include "deskqa/vision.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "deskqa/error.hpp"
#include "deskqa/text.hpp"

namespace deskqa::vision {

namespace {

std::uint8_t clamp_round(double v) {
  const long r = std::lround(v);
  return static_cast<std::uint8_t>(std::clamp<long>(r, 0, 255));
}

void require_nonempty(std::size_t w, std::size_t h) {
  if (w == 0 || h == 0) throw Error(ErrorCode::InvalidArgument, "image has a zero dimension");
}

}  // namespace

GrayImage to_grayscale(const RgbImage& rgb) {
  require_nonempty(rgb.width, rgb.height);
  if (rgb.data.size() != rgb.width * rgb.height * 3) {
    throw Error(ErrorCode::InvalidArgument, "rgb buffer does not match its dimensions");
  }
  GrayImage out(rgb.width, rgb.height);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    // Integer form of round(0.299 R + 0.587 G + 0.114 B).
    const unsigned y = 299u * rgb.data[3 * i] + 587u * rgb.data[3 * i + 1] + 114u * rgb.data[3 * i + 2];
    out.data[i] = static_cast<std::uint8_t>((y + 500) / 1000);
  }
  return out;
}

RgbImage to_rgb(const GrayImage& gray) {
  RgbImage out{gray.width, gray.height, std::vector<std::uint8_t>(gray.data.size() * 3)};
  for (std::size_t i = 0; i < gray.data.size(); ++i) {
    out.data[3 * i] = out.data[3 * i + 1] = out.data[3 * i + 2] = gray.data[i];
  }
  return out;
}

std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0)) throw Error(ErrorCode::InvalidArgument, "sigma must be positive");
  const auto radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * static_cast<std::size_t>(radius) + 1);
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) {
    const double w = std::exp(-(i * i) / (2.0 * sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = w;
    sum += w;
  }
  for (auto& w : k) w /= sum;
  return k;
}

std::vector<double> gaussian_blur(const GrayImage& img, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const auto radius = static_cast<long>(k.size() / 2);
  const auto w = static_cast<long>(img.width);
  const auto h = static_cast<long>(img.height);
  std::vector<double> tmp(img.data.size());
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      double acc = 0;
      for (long i = -radius; i <= radius; ++i) {
        const long sx = std::clamp(x + i, 0L, w - 1);
        acc += k[static_cast<std::size_t>(i + radius)] * img.data[static_cast<std::size_t>(y * w + sx)];
      }
      tmp[static_cast<std::size_t>(y * w + x)] = acc;
    }
  }
  std::vector<double> out(img.data.size());
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      double acc = 0;
      for (long i = -radius; i <= radius; ++i) {
        const long sy = std::clamp(y + i, 0L, h - 1);
        acc += k[static_cast<std::size_t>(i + radius)] * tmp[static_cast<std::size_t>(sy * w + x)];
      }
      out[static_cast<std::size_t>(y * w + x)] = acc;
    }
  }
  return out;
}

GrayImage dog_sharpen_once(const GrayImage& img, const DogOptions& o) {
  require_nonempty(img.width, img.height);
  if (!(o.sigma1 > 0) || !(o.sigma2 > 0)) throw Error(ErrorCode::InvalidArgument, "sigma must be positive");
  if (!(o.sigma1 < o.sigma2)) throw Error(ErrorCode::InvalidArgument, "sigma1 must be smaller than sigma2");
  const auto b1 = gaussian_blur(img, o.sigma1);
  const auto b2 = gaussian_blur(img, o.sigma2);
  GrayImage out(img.width, img.height);
  for (std::size_t i = 0; i < img.data.size(); ++i) out.data[i] = clamp_round(img.data[i] + o.gain * (b1[i] - b2[i]));
  return out;
}

GrayImage dog_sharpen(const GrayImage& img, const DogOptions& options) {
  return dog_sharpen_once(dog_sharpen_once(img, options), options);
}

double cubic_weight(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x < 1) return ((a + 2) * x - (a + 3)) * x * x + 1;
  if (x < 2) return ((a * x - 5 * a) * x + 8 * a) * x - 4 * a;
  return 0;
}

GrayImage upscale_bicubic(const GrayImage& img, int factor) {
  if (factor < 2 || factor > 4) throw Error(ErrorCode::InvalidArgument, "upscale factor must be 2, 3 or 4");
  require_nonempty(img.width, img.height);
  const std::size_t ow = img.width * static_cast<std::size_t>(factor);
  const std::size_t oh = img.height * static_cast<std::size_t>(factor);

  struct Taps {
    std::array<std::size_t, 4> index;
    std::array<double, 4> weight;
  };
  auto taps_for = [&](std::size_t out_len, std::size_t in_len) {
    std::vector<Taps> taps(out_len);
    for (std::size_t o = 0; o < out_len; ++o) {
      const double s = (static_cast<double>(o) + 0.5) / factor - 0.5;
      const auto base = static_cast<long>(std::floor(s));
      const double frac = s - static_cast<double>(base);
      for (int k = 0; k < 4; ++k) {
        const long idx = std::clamp(base - 1 + k, 0L, static_cast<long>(in_len) - 1);
        taps[o].index[static_cast<std::size_t>(k)] = static_cast<std::size_t>(idx);
        taps[o].weight[static_cast<std::size_t>(k)] = cubic_weight(frac - (k - 1));
      }
    }
    return taps;
  };
  const auto tx = taps_for(ow, img.width);
  const auto ty = taps_for(oh, img.height);

  // Horizontal pass on source rows, then vertical.
  std::vector<double> rows(img.height * ow);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0;
      for (std::size_t k = 0; k < 4; ++k) acc += tx[x].weight[k] * img.at(tx[x].index[k], y);
      rows[y * ow + x] = acc;
    }
  }
  GrayImage out(ow, oh);
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0;
      for (std::size_t k = 0; k < 4; ++k) acc += ty[y].weight[k] * rows[ty[y].index[k] * ow + x];
      out.at(x, y) = clamp_round(acc);
    }
  }
  return out;
}

namespace {

using u128 = unsigned __int128;

// a * b as a 192-bit value, most significant limb first.
std::array<std::uint64_t, 3> mul_192(u128 a, std::uint64_t b) {
  const u128 lo = static_cast<u128>(static_cast<std::uint64_t>(a)) * b;
  const u128 hi = static_cast<u128>(static_cast<std::uint64_t>(a >> 64)) * b + (lo >> 64);
  return {static_cast<std::uint64_t>(hi >> 64), static_cast<std::uint64_t>(hi), static_cast<std::uint64_t>(lo)};
}

}  // namespace

int otsu_threshold(const GrayImage& img) {
  std::array<std::uint64_t, 256> hist{};
  for (auto v : img.data) ++hist[v];
  const std::uint64_t n = img.data.size();
  if (n >= (std::uint64_t{1} << 28)) throw Error(ErrorCode::InvalidArgument, "image too large for thresholding");
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < 256; ++i) total += i * hist[i];

  // sigma_b^2(t) is proportional to (N*S0 - n0*S)^2 / (n0*n1).
  int best = 0;
  u128 best_num = 0;
  std::uint64_t best_den = 1;
  std::uint64_t n0 = 0;
  std::uint64_t s0 = 0;
  for (int t = 0; t < 256; ++t) {
    n0 += hist[static_cast<std::size_t>(t)];
    s0 += static_cast<std::uint64_t>(t) * hist[static_cast<std::size_t>(t)];
    const std::uint64_t n1 = n - n0;
    if (n0 == 0 || n1 == 0) continue;
    const u128 a = static_cast<u128>(n) * s0;
    const u128 b = static_cast<u128>(n0) * total;
    const u128 diff = a > b ? a - b : b - a;
    const u128 num = diff * diff;
    const u128 den128 = static_cast<u128>(n0) * n1;
    const auto den = static_cast<std::uint64_t>(den128);
    // num / den > best_num / best_den  <=>  num * best_den > best_num * den
    if (mul_192(num, best_den) > mul_192(best_num, den)) {
      best = t;
      best_num = num;
      best_den = den;
    }
  }
  return best;
}

Binarized otsu_binarize(const GrayImage& img) {
  Binarized out;
  out.threshold = otsu_threshold(img);
  out.image = GrayImage(img.width, img.height);
  const bool single_level =
      !img.data.empty() && std::all_of(img.data.begin(), img.data.end(), [&](auto v) { return v == img.data[0]; });
  if (single_level) return out;
  for (std::size_t i = 0; i < img.data.size(); ++i) out.image.data[i] = img.data[i] > out.threshold ? 255 : 0;
  return out;
}

bool is_binary(const GrayImage& img) {
  return std::all_of(img.data.begin(), img.data.end(), [](auto v) { return v == 0 || v == 255; });
}

GrayImage dilate(const GrayImage& img) {
  if (!is_binary(img)) throw Error(ErrorCode::InvalidArgument, "dilate needs a binary image");
  GrayImage out(img.width, img.height);
  const auto w = static_cast<long>(img.width);
  const auto h = static_cast<long>(img.height);
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      std::uint8_t v = 0;
      for (long dy = -1; dy <= 1 && v == 0; ++dy) {
        for (long dx = -1; dx <= 1 && v == 0; ++dx) {
          const long sx = std::clamp(x + dx, 0L, w - 1);
          const long sy = std::clamp(y + dy, 0L, h - 1);
          v = img.data[static_cast<std::size_t>(sy * w + sx)];
        }
      }
      out.data[static_cast<std::size_t>(y * w + x)] = v;
    }
  }
  return out;
}

Stages preprocess_stages(const RgbImage& rgb, const PreprocessOptions& options) {
  Stages s;
  s.gray = to_grayscale(rgb);
  s.sharpened = dog_sharpen(s.gray, options.dog);
  s.upscaled = upscale_bicubic(s.sharpened, options.upscale);
  s.binary = otsu_binarize(s.upscaled);
  GrayImage foreground = s.binary.image;
  const auto white = static_cast<std::size_t>(std::count(foreground.data.begin(), foreground.data.end(), 255));
  if (2 * white > foreground.data.size()) {
    for (auto& v : foreground.data) v = static_cast<std::uint8_t>(255 - v);
  }
  s.dilated = dilate(foreground);
  return s;
}

GrayImage preprocess(const RgbImage& rgb, const PreprocessOptions& options) {
  return preprocess_stages(rgb, options).dilated;
}

// ---------------------------------------------------------------- files

namespace {

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string(), path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string(), path.string());
}

}  // namespace

RgbImage decode_png(const std::vector<std::uint8_t>& bytes) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()) == 0) {
    throw Error(ErrorCode::ParseError, std::string("bad PNG: ") + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  RgbImage out{image.width, image.height, std::vector<std::uint8_t>(PNG_IMAGE_SIZE(image))};
  if (png_image_finish_read(&image, nullptr, out.data.data(), 0, nullptr) == 0) {
    std::string msg = image.message;
    png_image_free(&image);
    throw Error(ErrorCode::ParseError, "bad PNG: " + msg);
  }
  require_nonempty(out.width, out.height);
  return out;
}

std::vector<std::uint8_t> encode_png(const GrayImage& img) {
  require_nonempty(img.width, img.height);
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (png_image_write_to_memory(&image, nullptr, &size, 0, img.data.data(), 0, nullptr) == 0) {
    throw Error(ErrorCode::Io, std::string("PNG encode failed: ") + image.message);
  }
  std::vector<std::uint8_t> out(size);
  if (png_image_write_to_memory(&image, out.data(), &size, 0, img.data.data(), 0, nullptr) == 0) {
    throw Error(ErrorCode::Io, std::string("PNG encode failed: ") + image.message);
  }
  out.resize(size);
  return out;
}

RgbImage decode_pnm(const std::vector<std::uint8_t>& bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos]) != 0) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&]() -> std::size_t {
    skip_space();
    if (pos >= bytes.size() || std::isdigit(bytes[pos]) == 0) {
      throw Error(ErrorCode::ParseError, "bad PNM header", std::to_string(pos));
    }
    std::size_t v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos]) != 0) v = v * 10 + (bytes[pos++] - '0');
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P') throw Error(ErrorCode::ParseError, "not a PNM file");
  const char kind = static_cast<char>(bytes[1]);
  if (kind != '2' && kind != '3' && kind != '5' && kind != '6') {
    throw Error(ErrorCode::ParseError, std::string("unsupported PNM type P") + kind);
  }
  pos = 2;
  const std::size_t w = number();
  const std::size_t h = number();
  const std::size_t maxval = number();
  require_nonempty(w, h);
  if (maxval == 0 || maxval > 255) throw Error(ErrorCode::ParseError, "PNM maxval must be 1..255");
  const bool color = kind == '3' || kind == '6';
  const std::size_t channels = color ? 3 : 1;
  const std::size_t count = w * h * channels;
  std::vector<std::uint8_t> samples(count);
  if (kind == '5' || kind == '6') {
    ++pos;  // single whitespace after maxval
    if (bytes.size() < pos + count) throw Error(ErrorCode::ParseError, "truncated PNM data");
    std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(pos), count, samples.begin());
  } else {
    for (auto& s : samples) s = static_cast<std::uint8_t>(std::min<std::size_t>(number(), maxval));
  }
  if (maxval != 255) {
    for (auto& s : samples) s = static_cast<std::uint8_t>((s * 255 + maxval / 2) / maxval);
  }
  RgbImage out{w, h, {}};
  if (color) {
    out.data = std::move(samples);
  } else {
    out.data.resize(w * h * 3);
    for (std::size_t i = 0; i < w * h; ++i) out.data[3 * i] = out.data[3 * i + 1] = out.data[3 * i + 2] = samples[i];
  }
  return out;
}

RgbImage decode_image(const std::vector<std::uint8_t>& bytes) {
  static const std::uint8_t png_magic[] = {0x89, 'P', 'N', 'G'};
  if (bytes.size() >= 4 && std::equal(std::begin(png_magic), std::end(png_magic), bytes.begin())) {
    return decode_png(bytes);
  }
  if (bytes.size() >= 2 && bytes[0] == 'P') return decode_pnm(bytes);
  throw Error(ErrorCode::ParseError, "unrecognized image format");
}

RgbImage read_image(const std::filesystem::path& path) { return decode_image(read_bytes(path)); }

std::vector<std::uint8_t> encode_pgm(const GrayImage& img) {
  const std::string header = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.data.begin(), img.data.end());
  return out;
}

void write_pgm(const std::filesystem::path& path, const GrayImage& img) { write_bytes(path, encode_pgm(img)); }
void write_png(const std::filesystem::path& path, const GrayImage& img) { write_bytes(path, encode_png(img)); }

// ---------------------------------------------------------------- OCR

std::string OcrResult::text() const {
  std::vector<std::string> parts;
  for (const auto& l : lines) parts.push_back(l.text);
  return join(parts, "\n");
}

OcrResult parse_ocr_lines(std::string_view jsonl, std::size_t width, std::size_t height, std::string engine) {
  OcrResult r;
  r.engine = std::move(engine);
  std::size_t line_no = 0;
  for (const auto& raw : split_lines(jsonl)) {
    ++line_no;
    if (trim(raw).empty()) continue;
    Json j = Json::parse(raw, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("text") || !j["text"].is_string()) {
      throw Error(ErrorCode::ParseError, "bad OCR output line " + std::to_string(line_no), std::to_string(line_no));
    }
    OcrLine line;
    line.text = j["text"].get<std::string>();
    line.emphasized = j.value("emphasized", false);
    if (j.contains("box")) {
      const auto& b = j["box"];
      if (!b.is_array() || b.size() != 4) {
        throw Error(ErrorCode::ParseError, "OCR box must be [x, y, w, h]", std::to_string(line_no));
      }
      auto v = [&](std::size_t i) { return static_cast<std::size_t>(std::max<long long>(0, b[i].get<long long>())); };
      line.box.x = std::min(v(0), width);
      line.box.y = std::min(v(1), height);
      line.box.width = std::min(v(2), width - line.box.x);
      line.box.height = std::min(v(3), height - line.box.y);
    }
    r.lines.push_back(std::move(line));
  }
  return r;
}

void FixtureOcrEngine::add(const GrayImage& image, std::vector<OcrLine> lines) {
  by_hash_[fnv1a64(std::string_view(reinterpret_cast<const char*>(image.data.data()), image.data.size()))] =
      std::move(lines);
}

FixtureOcrEngine FixtureOcrEngine::from_directory(const std::filesystem::path& dir) {
  FixtureOcrEngine engine;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() != ".jsonl") continue;
    std::ifstream in(entry.path());
    std::stringstream ss;
    ss << in.rdbuf();
    auto parsed = parse_ocr_lines(ss.str(), SIZE_MAX / 2, SIZE_MAX / 2, "fixture");
    const std::string stem = entry.path().stem().string();
    if (stem == "default") {
      engine.fallback_ = std::move(parsed.lines);
    } else {
      // Other files are keyed by the hex hash of the binary image.
      engine.by_hash_[std::stoull(stem, nullptr, 16)] = std::move(parsed.lines);
    }
  }
  return engine;
}

OcrResult FixtureOcrEngine::recognize(const GrayImage& binary) const {
  const auto h = fnv1a64(std::string_view(reinterpret_cast<const char*>(binary.data.data()), binary.data.size()));
  OcrResult r;
  r.engine = id();
  auto it = by_hash_.find(h);
  if (it != by_hash_.end()) {
    r.lines = it->second;
  } else if (fallback_) {
    r.lines = *fallback_;
  }
  for (auto& l : r.lines) {
    l.box.x = std::min(l.box.x, binary.width);
    l.box.y = std::min(l.box.y, binary.height);
    l.box.width = std::min(l.box.width, binary.width - l.box.x);
    l.box.height = std::min(l.box.height, binary.height - l.box.y);
  }
  return r;
}

OcrResult SubprocessOcrEngine::recognize(const GrayImage& binary) const {
  const auto path = std::filesystem::temp_directory_path() /
                    ("deskqa-ocr-" + hex64(fnv1a64(std::string_view(reinterpret_cast<const char*>(binary.data.data()),
                                                                     binary.data.size()))) +
                     ".pgm");
  write_pgm(path, binary);
  std::string quoted = "'";
  for (char c : path.string()) quoted += c == '\'' ? std::string("'\\''") : std::string(1, c);
  quoted += "'";
  FILE* pipe = ::popen((command_ + " " + quoted).c_str(), "r");
  if (pipe == nullptr) {
    std::filesystem::remove(path);
    throw Error(ErrorCode::Unavailable, "cannot start OCR engine: " + command_);
  }
  std::string output;
  std::array<char, 4096> buf{};
  while (std::size_t got = std::fread(buf.data(), 1, buf.size(), pipe)) output.append(buf.data(), got);
  const int status = ::pclose(pipe);
  std::error_code ec;
  std::filesystem::remove(path, ec);
  if (status != 0) throw Error(ErrorCode::Unavailable, "OCR engine failed: " + command_, std::to_string(status));
  return parse_ocr_lines(output, binary.width, binary.height, id());
}

// ---------------------------------------------------------------- correction and routing

namespace {

bool has_digit(std::string_view w) {
  return std::any_of(w.begin(), w.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; });
}

}  // namespace

Vocabulary::Vocabulary(const std::vector<std::string>& words) {
  for (const auto& w : words) add(w);
}

Vocabulary Vocabulary::from_snapshot(const Snapshot& snapshot) {
  Vocabulary v;
  for (const auto& [id, chunk] : snapshot.chunks) {
    v.add_text(strip_tags(chunk.body));
    for (const auto& h : chunk.heading_path) v.add_text(h);
  }
  for (const auto& [id, unit] : snapshot.units) {
    v.add_text(unit.primary_question);
    for (const auto& q : unit.alternate_questions) v.add_text(q);
    v.add_text(strip_tags(unit.answer));
  }
  return v;
}

void Vocabulary::add(std::string_view word) {
  std::string w = casefold(trim(word));
  if (w.empty() || has_digit(w)) return;
  if (words_.insert(w).second) by_initial_[w[0]].push_back(w);
}

void Vocabulary::add_text(std::string_view text) {
  for (const auto& t : tokenize(text)) add(t);
}

bool Vocabulary::contains(std::string_view word) const { return words_.count(casefold(word)) != 0; }

std::optional<std::string> Vocabulary::correction(std::string_view word) const {
  const std::string w = casefold(word);
  if (w.empty() || words_.count(w) != 0) return std::nullopt;
  auto it = by_initial_.find(w[0]);
  if (it == by_initial_.end()) return std::nullopt;
  std::size_t best = 3;
  std::vector<const std::string*> found;
  for (const auto& cand : it->second) {
    const std::size_t len_gap = cand.size() > w.size() ? cand.size() - w.size() : w.size() - cand.size();
    if (len_gap > 2) continue;
    const std::size_t d = levenshtein(w, cand);
    if (d > 2 || d > best) continue;
    if (d < best) {
      best = d;
      found.clear();
    }
    found.push_back(&cand);
  }
  if (found.size() != 1) return std::nullopt;
  return *found.front();
}

std::string correct_tokens(std::string_view text, const Vocabulary& vocabulary) {
  std::string out;
  std::size_t copied = 0;
  for (const auto& span : tokenize_with_offsets(text)) {
    if (has_digit(span.token)) continue;
    auto fix = vocabulary.correction(span.token);
    if (!fix) continue;
    const std::string_view original = text.substr(span.begin, span.end - span.begin);
    const bool all_caps = original.size() > 1 && std::all_of(original.begin(), original.end(), [](char c) {
                            return std::isupper(static_cast<unsigned char>(c)) != 0;
                          });
    std::string replacement = *fix;
    if (all_caps) {
      for (auto& c : replacement) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    } else if (std::isupper(static_cast<unsigned char>(original.front())) != 0) {
      replacement[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(replacement[0])));
    }
    out.append(text.substr(copied, span.begin - copied));
    out += replacement;
    copied = span.end;
  }
  out.append(text.substr(copied));
  return out;
}

bool is_error_line(std::string_view line) {
  static const std::set<std::string, std::less<>> cues = {"error", "failed", "invalid", "denied", "exception"};
  for (const auto& t : tokenize(line)) {
    if (cues.count(t) != 0) return true;
  }
  return false;
}

namespace {

bool key_value(std::string_view line, std::string& key, std::string& value) {
  const auto colon = line.find(':');
  if (colon == std::string_view::npos || colon == 0 || colon > 40) return false;
  const std::string k = trim(line.substr(0, colon));
  const std::string v = trim(line.substr(colon + 1));
  if (k.empty() || v.empty() || std::isalpha(static_cast<unsigned char>(k[0])) == 0) return false;
  for (char c : k) {
    if (std::isalnum(static_cast<unsigned char>(c)) == 0 && c != ' ' && c != '_' && c != '-' && c != '.') return false;
  }
  key = k;
  value = v;
  return true;
}

}  // namespace

std::string ErrorQuery::question() const { return error_text.empty() ? corrected_text : error_text; }

void to_json(Json& j, const ErrorQuery& q) {
  j = Json{{"application", q.application},
           {"confidence", q.confidence},
           {"error_text", q.error_text},
           {"meta", q.meta},
           {"corrected_text", q.corrected_text}};
}

ErrorQuery route_screenshot(const OcrResult& ocr, const classify::QuestionClassifier& model,
                            const Vocabulary* vocabulary) {
  std::vector<std::string> lines;
  std::vector<bool> emphasized;
  for (const auto& l : ocr.lines) {
    std::string text = collapse_whitespace(l.text);
    if (text.empty()) continue;
    lines.push_back(vocabulary != nullptr ? correct_tokens(text, *vocabulary) : text);
    emphasized.push_back(l.emphasized);
  }
  if (lines.empty()) throw Error(ErrorCode::InvalidArgument, "no text extracted");

  ErrorQuery q;
  q.corrected_text = join(lines, "\n");
  const auto p = model.predict(q.corrected_text, 1);
  if (!p.top.empty()) {
    q.application = p.top.front().class_id;
    q.confidence = p.top.front().confidence;
  }
  std::vector<std::string> errors;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (emphasized[i] || is_error_line(lines[i])) {
      errors.push_back(lines[i]);
      continue;
    }
    std::string k, v;
    if (key_value(lines[i], k, v)) q.meta[k] = v;
  }
  q.error_text = join(errors, " ");
  return q;
}

}  // namespace deskqa::vision
