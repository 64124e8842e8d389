#include "dgssm/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dgssm/image_io.hpp"

namespace dgssm {
namespace {

struct Rgb {
  double r, g, b;
};

// Standard hue-wheel conversion; h wraps, s and v are in [0,1].
Rgb hsv_to_rgb(double h, double s, double v) {
  h -= std::floor(h);
  const double hh = h * 6.0;
  const int sector = static_cast<int>(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * f);
  const double t = v * (1.0 - s * (1.0 - f));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

std::uint8_t quantize(double v) {
  const long q = std::lround(v * 255.0);
  return static_cast<std::uint8_t>(std::clamp(q, 0L, 255L));
}

// Labels pixels inside the ellipse with `label` (overdraw wins).
void draw_ellipse(std::vector<std::uint8_t>& labels, long h, long w, double cx,
                  double cy, double rx, double ry, std::uint8_t label) {
  const long y0 = std::max(0L, static_cast<long>(std::floor(cy - ry)));
  const long y1 = std::min(h - 1, static_cast<long>(std::ceil(cy + ry)));
  const long x0 = std::max(0L, static_cast<long>(std::floor(cx - rx)));
  const long x1 = std::min(w - 1, static_cast<long>(std::ceil(cx + rx)));
  for (long y = y0; y <= y1; ++y) {
    const double dy = (static_cast<double>(y) - cy) / ry;
    for (long x = x0; x <= x1; ++x) {
      const double dx = (static_cast<double>(x) - cx) / rx;
      if (dx * dx + dy * dy <= 1.0)
        labels[static_cast<size_t>(y * w + x)] = label;
    }
  }
}

void draw_rect(std::vector<std::uint8_t>& labels, long h, long w, double cx,
               double cy, double hx, double hy, std::uint8_t label) {
  const long y0 = std::clamp(static_cast<long>(std::ceil(cy - hy)), 0L, h - 1);
  const long y1 = std::clamp(static_cast<long>(std::floor(cy + hy)), 0L, h - 1);
  const long x0 = std::clamp(static_cast<long>(std::ceil(cx - hx)), 0L, w - 1);
  const long x1 = std::clamp(static_cast<long>(std::floor(cx + hx)), 0L, w - 1);
  for (long y = y0; y <= y1; ++y)
    for (long x = x0; x <= x1; ++x)
      labels[static_cast<size_t>(y * w + x)] = label;
}

// A blob is a core ellipse with three jittered satellites; their union gives
// an irregular but connected silhouette.
void draw_blob(std::vector<std::uint8_t>& labels, long h, long w, Rng& rng,
               double cx, double cy, std::uint8_t label) {
  const double scale = static_cast<double>(std::min(h, w));
  const double core = rng.uniform(0.13, 0.22) * scale;
  draw_ellipse(labels, h, w, cx, cy, core, core * rng.uniform(0.7, 1.3), label);
  for (int k = 0; k < 3; ++k) {
    const double ang = rng.uniform(0.0, 6.283185307179586);
    const double dist = rng.uniform(0.4, 0.9) * core;
    const double r = rng.uniform(0.45, 0.8) * core;
    draw_ellipse(labels, h, w, cx + dist * std::cos(ang), cy + dist * std::sin(ang),
                 r, r * rng.uniform(0.7, 1.3), label);
  }
}

// Places one randomly parameterized shape; returns nothing, overdraw decides
// ownership where shapes overlap.
void draw_shape(std::vector<std::uint8_t>& labels, long h, long w, Rng& rng,
                std::uint8_t label) {
  const double cx = rng.uniform(0.25, 0.75) * static_cast<double>(w);
  const double cy = rng.uniform(0.25, 0.75) * static_cast<double>(h);
  const long kind = rng.uniform_int(0, 2);
  if (kind == 0) {
    draw_ellipse(labels, h, w, cx, cy,
                 rng.uniform(0.13, 0.30) * static_cast<double>(w),
                 rng.uniform(0.13, 0.30) * static_cast<double>(h), label);
  } else if (kind == 1) {
    draw_rect(labels, h, w, cx, cy,
              rng.uniform(0.12, 0.30) * static_cast<double>(w),
              rng.uniform(0.12, 0.30) * static_cast<double>(h), label);
  } else {
    draw_blob(labels, h, w, rng, cx, cy, label);
  }
}

// Coarse value noise: an 8px lattice of uniforms, bilinearly interpolated.
// Gives the background low-frequency texture instead of a flat fill.
std::vector<double> texture_field(long h, long w, Rng& rng) {
  const long cell = 8;
  const long gh = h / cell + 2;
  const long gw = w / cell + 2;
  std::vector<double> grid(static_cast<size_t>(gh * gw));
  for (double& g : grid) g = rng.uniform();
  std::vector<double> tex(static_cast<size_t>(h * w));
  for (long y = 0; y < h; ++y) {
    const double fy = static_cast<double>(y) / cell;
    const long iy = static_cast<long>(fy);
    const double ty = fy - static_cast<double>(iy);
    for (long x = 0; x < w; ++x) {
      const double fx = static_cast<double>(x) / cell;
      const long ix = static_cast<long>(fx);
      const double tx = fx - static_cast<double>(ix);
      const double a = grid[static_cast<size_t>(iy * gw + ix)];
      const double b = grid[static_cast<size_t>(iy * gw + ix + 1)];
      const double c = grid[static_cast<size_t>((iy + 1) * gw + ix)];
      const double d = grid[static_cast<size_t>((iy + 1) * gw + ix + 1)];
      tex[static_cast<size_t>(y * w + x)] =
          (a * (1 - tx) + b * tx) * (1 - ty) + (c * (1 - tx) + d * tx) * ty;
    }
  }
  return tex;
}

SyntheticSample make_sample(long id, long h, long w, std::uint64_t sample_seed) {
  Rng rng(sample_seed);
  SyntheticSample s;
  s.id = id;
  s.seed = sample_seed;
  s.height = h;
  s.width = w;

  const long hw = h * w;
  std::vector<std::uint8_t> labels(static_cast<size_t>(hw));
  long n_shapes = 0;
  for (int attempt = 0;; ++attempt) {
    if (attempt >= 200)
      throw Error("scene rejection did not converge for sample " + std::to_string(id));
    std::fill(labels.begin(), labels.end(), std::uint8_t(0));
    n_shapes = rng.uniform_int(1, 3);
    for (long k = 1; k <= n_shapes; ++k)
      draw_shape(labels, h, w, rng, static_cast<std::uint8_t>(k));
    long fg = 0;
    for (std::uint8_t l : labels) fg += (l != 0);
    const double frac = static_cast<double>(fg) / static_cast<double>(hw);
    if (frac >= 0.05 && frac <= 0.60) break;
  }

  // Palette: background hue plus per-shape hues rotated at least 0.2 away
  // around the wheel so every object pops against the backdrop.
  const double bg_hue = rng.uniform();
  const Rgb bg = hsv_to_rgb(bg_hue, rng.uniform(0.15, 0.45), rng.uniform(0.35, 0.75));
  std::vector<Rgb> shape_color(static_cast<size_t>(n_shapes));
  for (auto& c : shape_color)
    c = hsv_to_rgb(bg_hue + rng.uniform(0.2, 0.8), rng.uniform(0.55, 0.95),
                   rng.uniform(0.55, 0.95));

  const std::vector<double> tex = texture_field(h, w, rng);

  s.rgb.resize(static_cast<size_t>(hw * 3));
  s.gt.resize(static_cast<size_t>(hw));
  for (long p = 0; p < hw; ++p) {
    const std::uint8_t l = labels[static_cast<size_t>(p)];
    const double t = tex[static_cast<size_t>(p)];
    Rgb c;
    if (l == 0) {
      const double m = 0.75 + 0.5 * (t - 0.5);
      c = {bg.r * m, bg.g * m, bg.b * m};
    } else {
      const double m = 0.9 + 0.2 * (t - 0.5);
      const Rgb& sc = shape_color[static_cast<size_t>(l - 1)];
      c = {sc.r * m, sc.g * m, sc.b * m};
    }
    s.rgb[static_cast<size_t>(p * 3 + 0)] = quantize(c.r + 0.02 * rng.normal());
    s.rgb[static_cast<size_t>(p * 3 + 1)] = quantize(c.g + 0.02 * rng.normal());
    s.rgb[static_cast<size_t>(p * 3 + 2)] = quantize(c.b + 0.02 * rng.normal());
    s.gt[static_cast<size_t>(p)] = l != 0 ? 255 : 0;
  }

  // Pseudo-depth: a gentle background ramp with the foreground raised (closer
  // to the sensor). Decorrelated samples raise an unrelated region instead.
  std::vector<std::uint8_t> depth_region = labels;
  if (aux_decorrelated(id)) {
    std::fill(depth_region.begin(), depth_region.end(), std::uint8_t(0));
    const long fake = rng.uniform_int(1, 2);
    for (long k = 1; k <= fake; ++k)
      draw_shape(depth_region, h, w, rng, static_cast<std::uint8_t>(k));
  }
  s.aux.resize(static_cast<size_t>(hw));
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      const long p = y * w + x;
      double d = 0.25 + 0.15 * static_cast<double>(y) / static_cast<double>(h - 1);
      if (depth_region[static_cast<size_t>(p)] != 0)
        d = 0.72 + 0.08 * tex[static_cast<size_t>(p)];
      s.aux[static_cast<size_t>(p)] = quantize(d + 0.04 * rng.normal());
    }
  }
  return s;
}

void check_sample(const SyntheticSample& s, const std::string& origin) {
  const size_t hw = static_cast<size_t>(s.height * s.width);
  if (s.height <= 0 || s.width <= 0 || s.rgb.size() != hw * 3 ||
      s.aux.size() != hw || s.gt.size() != hw)
    throw Error("inconsistent sample buffers in " + origin);
  bool any_fg = false;
  for (std::uint8_t b : s.gt) {
    if (b != 0 && b != 255)
      throw Error("mask is not binary in " + origin);
    any_fg = any_fg || b != 0;
  }
  if (!any_fg) throw Error("empty mask in " + origin);
}

}  // namespace

std::vector<SyntheticSample> generate_dataset(long n, long height, long width,
                                              std::uint64_t seed) {
  if (n < 1) throw Error("generate_dataset needs n >= 1, got " + std::to_string(n));
  if (height < 16 || width < 16)
    throw Error("generate_dataset needs images of at least 16x16, got " +
                std::to_string(height) + "x" + std::to_string(width));
  std::vector<SyntheticSample> out;
  out.reserve(static_cast<size_t>(n));
  for (long id = 0; id < n; ++id)
    out.push_back(make_sample(id, height, width, substream_seed(seed, static_cast<std::uint64_t>(id))));
  return out;
}

std::string write_dataset(const std::string& dir,
                          const std::vector<SyntheticSample>& samples) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ostringstream manifest;
  for (const SyntheticSample& s : samples) {
    check_sample(s, "sample " + std::to_string(s.id));
    char stem[32];
    std::snprintf(stem, sizeof(stem), "sample_%04ld", s.id);
    const std::string rgb_name = std::string(stem) + "_rgb.ppm";
    const std::string aux_name = std::string(stem) + "_aux.pgm";
    const std::string gt_name = std::string(stem) + "_gt.pgm";
    write_image((fs::path(dir) / rgb_name).string(), {s.width, s.height, 3, s.rgb});
    write_image((fs::path(dir) / aux_name).string(), {s.width, s.height, 1, s.aux});
    write_image((fs::path(dir) / gt_name).string(), {s.width, s.height, 1, s.gt});
    manifest << s.id << " " << rgb_name << " " << aux_name << " " << gt_name
             << " " << s.seed << "\n";
  }
  const std::string manifest_path = (fs::path(dir) / "manifest.txt").string();
  std::ofstream out(manifest_path, std::ios::binary);
  if (!out) throw Error("cannot write manifest: " + manifest_path);
  out << manifest.str();
  return manifest_path;
}

std::vector<SyntheticSample> load_dataset(const std::string& manifest_path) {
  namespace fs = std::filesystem;
  std::ifstream in(manifest_path);
  if (!in) throw Error("cannot open manifest: " + manifest_path);
  const fs::path base = fs::path(manifest_path).parent_path();

  std::vector<SyntheticSample> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    SyntheticSample s;
    std::string rgb_name, aux_name, gt_name;
    if (!(row >> s.id >> rgb_name >> aux_name >> gt_name >> s.seed))
      throw Error("malformed manifest line: " + line);
    const ImageU8 rgb = read_image((base / rgb_name).string());
    const ImageU8 aux = read_image((base / aux_name).string());
    const ImageU8 gt = read_image((base / gt_name).string());
    if (rgb.channels != 3 || aux.channels != 1 || gt.channels != 1)
      throw Error("unexpected channel layout for sample " + std::to_string(s.id));
    if (aux.width != rgb.width || aux.height != rgb.height ||
        gt.width != rgb.width || gt.height != rgb.height)
      throw Error("modality size mismatch for sample " + std::to_string(s.id));
    s.height = rgb.height;
    s.width = rgb.width;
    s.rgb = rgb.data;
    s.aux = aux.data;
    s.gt = gt.data;
    check_sample(s, "manifest entry " + std::to_string(s.id));
    out.push_back(std::move(s));
  }
  if (out.empty()) throw Error("manifest has no samples: " + manifest_path);
  return out;
}

}  // namespace dgssm
