#include "bced/textgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <stdexcept>

#include "bced/pgm.hpp"
#include "bced/rng.hpp"

namespace bced {

namespace {

// Fixed-width 8x8 uppercase glyphs; bit 7 is the leftmost column.
constexpr uint8_t kGlyphs[26][8] = {
    {0x38, 0x6C, 0xC6, 0xC6, 0xFE, 0xC6, 0xC6, 0x00},  // A
    {0xFC, 0xC6, 0xC6, 0xFC, 0xC6, 0xC6, 0xFC, 0x00},  // B
    {0x7C, 0xC6, 0xC0, 0xC0, 0xC0, 0xC6, 0x7C, 0x00},  // C
    {0xF8, 0xCC, 0xC6, 0xC6, 0xC6, 0xCC, 0xF8, 0x00},  // D
    {0xFE, 0xC0, 0xC0, 0xF8, 0xC0, 0xC0, 0xFE, 0x00},  // E
    {0xFE, 0xC0, 0xC0, 0xF8, 0xC0, 0xC0, 0xC0, 0x00},  // F
    {0x7C, 0xC6, 0xC0, 0xCE, 0xC6, 0xC6, 0x7E, 0x00},  // G
    {0xC6, 0xC6, 0xC6, 0xFE, 0xC6, 0xC6, 0xC6, 0x00},  // H
    {0x7E, 0x18, 0x18, 0x18, 0x18, 0x18, 0x7E, 0x00},  // I
    {0x1E, 0x06, 0x06, 0x06, 0xC6, 0xC6, 0x7C, 0x00},  // J
    {0xC6, 0xCC, 0xD8, 0xF0, 0xD8, 0xCC, 0xC6, 0x00},  // K
    {0xC0, 0xC0, 0xC0, 0xC0, 0xC0, 0xC0, 0xFE, 0x00},  // L
    {0xC6, 0xEE, 0xFE, 0xD6, 0xC6, 0xC6, 0xC6, 0x00},  // M
    {0xC6, 0xE6, 0xF6, 0xDE, 0xCE, 0xC6, 0xC6, 0x00},  // N
    {0x7C, 0xC6, 0xC6, 0xC6, 0xC6, 0xC6, 0x7C, 0x00},  // O
    {0xFC, 0xC6, 0xC6, 0xFC, 0xC0, 0xC0, 0xC0, 0x00},  // P
    {0x7C, 0xC6, 0xC6, 0xC6, 0xD6, 0xCC, 0x76, 0x00},  // Q
    {0xFC, 0xC6, 0xC6, 0xFC, 0xD8, 0xCC, 0xC6, 0x00},  // R
    {0x7C, 0xC6, 0xC0, 0x7C, 0x06, 0xC6, 0x7C, 0x00},  // S
    {0xFF, 0x18, 0x18, 0x18, 0x18, 0x18, 0x18, 0x00},  // T
    {0xC6, 0xC6, 0xC6, 0xC6, 0xC6, 0xC6, 0x7C, 0x00},  // U
    {0xC6, 0xC6, 0xC6, 0xC6, 0x6C, 0x38, 0x10, 0x00},  // V
    {0xC6, 0xC6, 0xC6, 0xD6, 0xFE, 0xEE, 0xC6, 0x00},  // W
    {0xC6, 0x6C, 0x38, 0x10, 0x38, 0x6C, 0xC6, 0x00},  // X
    {0xC3, 0x66, 0x3C, 0x18, 0x18, 0x18, 0x18, 0x00},  // Y
    {0xFE, 0x0C, 0x18, 0x30, 0x60, 0xC0, 0xFE, 0x00},  // Z
};

bool glyph_bit(int letter, int face, int row, int col) {
  uint8_t bits = kGlyphs[letter][row];
  if (face == 1) bits |= bits >> 1;  // bold face: thicken to the right
  return (bits >> (7 - col)) & 1;
}

struct Mat3 {
  double m[3][3];
};

Mat3 mul(const Mat3& a, const Mat3& b) {
  Mat3 r{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) r.m[i][j] += a.m[i][k] * b.m[k][j];
  return r;
}

Mat3 invert(const Mat3& a) {
  const auto& m = a.m;
  double det =
      m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
      m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
      m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  if (std::abs(det) < 1e-12)
    throw std::runtime_error("textgen: singular transform");
  Mat3 r;
  r.m[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det;
  r.m[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det;
  r.m[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det;
  r.m[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / det;
  r.m[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det;
  r.m[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det;
  r.m[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det;
  r.m[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det;
  r.m[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det;
  return r;
}

}  // namespace

void RenderParams::validate() const {
  if (scale_min <= 0 || scale_max < scale_min)
    throw std::invalid_argument("render params: bad scale range");
  if (min_length < 1 || max_length > 8 || max_length < min_length)
    throw std::invalid_argument("render params: length must stay within 1..8");
  if (min_contrast <= 0 || min_contrast > 0.9)
    throw std::invalid_argument("render params: bad contrast floor");
  if (max_rotation < 0 || max_shear < 0 || max_perspective < 0 ||
      noise_sigma < 0 || max_jitter < 0)
    throw std::invalid_argument("render params: negative range");
}

LabeledSample render_sample(uint64_t seed, const RenderParams& params) {
  params.validate();
  Rng rng(seed);

  LabeledSample out;
  out.seed = seed;
  out.image = RealTensor(kSampleHeight, kSampleWidth, 1);
  out.labels.assign(static_cast<size_t>(kSampleHeight) * kSampleWidth, 0);

  const int length = params.min_length +
                     static_cast<int>(rng.below(params.max_length - params.min_length + 1));
  for (int i = 0; i < length; ++i)
    out.text.push_back(static_cast<char>('A' + rng.below(26)));
  out.face = static_cast<int>(rng.below(2));

  // Cap the scale so the rendered string fits the frame with margin.
  double smax = std::min({params.scale_max, (kSampleWidth - 8.0) / (8.0 * length),
                          (kSampleHeight - 4.0) / 8.0});
  double smin = std::min(params.scale_min, smax);
  out.scale = rng.uniform(smin, smax);
  out.rotation = rng.uniform(-params.max_rotation, params.max_rotation);
  out.shear = rng.uniform(-params.max_shear, params.max_shear);
  double gx = rng.uniform(-params.max_perspective, params.max_perspective);
  double gy = rng.uniform(-params.max_perspective, params.max_perspective);

  std::vector<double> jitter(length);
  for (double& j : jitter) j = rng.uniform(-params.max_jitter, params.max_jitter);

  // Foreground/background intensities with the contrast floor enforced.
  out.bg = rng.uniform();
  if (params.min_contrast > 0.5) {
    // A mid-gray background would leave no room for the foreground; draw
    // the background from the two feasible end intervals instead.
    double span = 1.0 - params.min_contrast;
    out.bg = out.bg < 0.5 ? out.bg * 2.0 * span
                          : params.min_contrast + (out.bg - 0.5) * 2.0 * span;
  }
  double lo = std::max(0.0, out.bg - params.min_contrast);
  double hi_start = out.bg + params.min_contrast;
  double hi = std::max(0.0, 1.0 - hi_start);
  double total = lo + hi;
  if (total <= 0)
    throw std::invalid_argument("render params: contrast floor leaves no room");
  double pick = rng.uniform() * total;
  out.fg = pick < lo ? pick : hi_start + (pick - lo);

  // Text plane -> image: shear, rotate, perspective, then center in frame.
  const double cr = std::cos(out.rotation), sr = std::sin(out.rotation);
  Mat3 rot{{{cr, -sr, 0}, {sr, cr, 0}, {0, 0, 1}}};
  Mat3 shear{{{1, out.shear, 0}, {0, 1, 0}, {0, 0, 1}}};
  Mat3 persp{{{1, 0, 0}, {0, 1, 0}, {gx, gy, 1}}};
  Mat3 inv = invert(mul(persp, mul(rot, shear)));

  const double adv = 8.0 * out.scale;
  const double half_w = length * adv / 2.0, half_h = 4.0 * out.scale;
  const double cx = kSampleWidth / 2.0, cy = kSampleHeight / 2.0;

  for (int y = 0; y < kSampleHeight; ++y)
    for (int x = 0; x < kSampleWidth; ++x) {
      const double px = x + 0.5 - cx, py = y + 0.5 - cy;
      const double wq = inv.m[2][0] * px + inv.m[2][1] * py + inv.m[2][2];
      const double u = (inv.m[0][0] * px + inv.m[0][1] * py + inv.m[0][2]) / wq;
      const double v = (inv.m[1][0] * px + inv.m[1][1] * py + inv.m[1][2]) / wq;
      uint8_t label = 0;
      for (int i = 0; i < length && label == 0; ++i) {
        const double lu = u + half_w - i * adv - jitter[i];
        const double lv = v + half_h;
        if (lu < 0 || lv < 0) continue;
        const int col = static_cast<int>(lu / out.scale);
        const int row = static_cast<int>(lv / out.scale);
        if (col >= 8 || row >= 8) continue;
        if (glyph_bit(out.text[i] - 'A', out.face, row, col))
          label = static_cast<uint8_t>(out.text[i] - 'A' + 1);
      }
      const size_t p = static_cast<size_t>(y) * kSampleWidth + x;
      out.labels[p] = label;
      out.image.values[p] = label ? out.fg : out.bg;
    }

  if (params.noise_sigma > 0)
    for (double& v : out.image.values)
      v = std::clamp(v + rng.gaussian(params.noise_sigma), 0.0, 1.0);
  return out;
}

DatasetManifest render_dataset(size_t count, uint64_t seed,
                               const RenderParams& params,
                               const std::string& out_path) {
  if (count < 1) throw std::invalid_argument("render_dataset: count must be >= 1");
  params.validate();
  std::filesystem::create_directories(out_path);

  DatasetManifest manifest;
  manifest.count = count;
  manifest.seed = seed;

  for (size_t i = 0; i < count; ++i) {
    LabeledSample s = render_sample(seed + i, params);
    char name[24];
    std::snprintf(name, sizeof(name), "%06llu",
                  static_cast<unsigned long long>(i));
    std::vector<uint8_t> gray(s.image.values.size());
    for (size_t p = 0; p < gray.size(); ++p)
      gray[p] = static_cast<uint8_t>(std::floor(s.image.values[p] * 255.0 + 0.5));
    write_pgm(out_path + "/" + name + ".pgm", kSampleWidth, kSampleHeight,
              gray.data());
    write_file_atomic(out_path + "/" + name + ".lbl",
                      std::string(reinterpret_cast<const char*>(s.labels.data()),
                                  s.labels.size()));
    for (uint8_t l : s.labels) manifest.class_pixels[l]++;
  }

  std::ostringstream ms;
  ms << "count " << count << "\n";
  ms << "seed " << seed << "\n";
  ms << "params scale " << params.scale_min << " " << params.scale_max
     << " rotation " << params.max_rotation << " shear " << params.max_shear
     << " perspective " << params.max_perspective << " contrast "
     << params.min_contrast << " noise " << params.noise_sigma << " jitter "
     << params.max_jitter << " length " << params.min_length << " "
     << params.max_length << "\n";
  ms << "class_pixels";
  for (uint64_t c : manifest.class_pixels) ms << " " << c;
  ms << "\n";
  write_file_atomic(out_path + "/manifest.txt", ms.str());
  return manifest;
}

std::vector<DatasetSample> load_dataset(const std::string& path) {
  std::string manifest = read_file(path + "/manifest.txt");
  std::istringstream is(manifest);
  std::string tok;
  size_t count = 0;
  while (is >> tok) {
    if (tok == "count") {
      is >> count;
      break;
    }
  }
  if (count == 0) throw std::runtime_error("dataset manifest has no samples");

  std::vector<DatasetSample> samples;
  samples.reserve(count);
  for (size_t i = 0; i < count; ++i) {
    char name[24];
    std::snprintf(name, sizeof(name), "%06llu",
                  static_cast<unsigned long long>(i));
    PgmImage img = read_pgm(path + "/" + name + ".pgm");
    if (img.width != kSampleWidth || img.height != kSampleHeight)
      throw std::runtime_error("dataset sample has wrong dimensions");
    DatasetSample s;
    s.image = RealTensor(kSampleHeight, kSampleWidth, 1);
    for (size_t p = 0; p < img.pixels.size(); ++p)
      s.image.values[p] = img.pixels[p] / 255.0;
    std::string lbl = read_file(path + "/" + std::string(name) + ".lbl");
    if (lbl.size() != static_cast<size_t>(kSampleHeight) * kSampleWidth)
      throw std::runtime_error("dataset label file has wrong size");
    s.labels.assign(lbl.begin(), lbl.end());
    for (uint8_t l : s.labels)
      if (l >= kNumClasses) throw std::runtime_error("label out of range");
    samples.push_back(std::move(s));
  }
  return samples;
}

}  // namespace bced
