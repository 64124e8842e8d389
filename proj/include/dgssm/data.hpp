#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dgssm/common.hpp"
#include "dgssm/tensor.hpp"

namespace dgssm {

// One synthetic multimodal sample. Pixels are stored as the quantized bytes
// that go to disk, so an in-memory dataset and its PPM/PGM round trip feed
// the model identical values.
struct SyntheticSample {
  long id = 0;
  std::uint64_t seed = 0;
  long height = 0;
  long width = 0;
  std::vector<std::uint8_t> rgb;  // interleaved RGB, height*width*3
  std::vector<std::uint8_t> aux;  // pseudo-depth, height*width
  std::vector<std::uint8_t> gt;   // strictly {0, 255}, height*width
};

// Every fifth sample renders its pseudo-depth from shapes unrelated to the
// mask, as a stand-in for modality-specific sensor noise.
inline bool aux_decorrelated(long sample_id) { return sample_id % 5 == 4; }

inline double foreground_fraction(const SyntheticSample& s) {
  long fg = 0;
  for (std::uint8_t b : s.gt) fg += (b != 0);
  return static_cast<double>(fg) / static_cast<double>(s.gt.size());
}

// Raster scenes of 1-3 shapes (ellipse / rectangle / blob) over a textured
// background. Foreground coverage is kept inside [0.05, 0.60] by redrawing
// the scene until it fits. Each sample draws from its own substream, so
// the dataset is bit-identical for a given (n, H, W, seed).
std::vector<SyntheticSample> generate_dataset(long n, long height, long width,
                                              std::uint64_t seed);

// Writes <dir>/sample_NNNN_{rgb.ppm,aux.pgm,gt.pgm} plus <dir>/manifest.txt
// with one line per sample: `id rgb_path aux_path gt_path seed` (paths
// relative to the manifest). Returns the manifest path.
std::string write_dataset(const std::string& dir,
                          const std::vector<SyntheticSample>& samples);

std::vector<SyntheticSample> load_dataset(const std::string& manifest_path);

template <typename T>
Tensor<T> rgb_tensor(const SyntheticSample& s) {
  const long hw = s.height * s.width;
  Tensor<T> t = Tensor<T>::zeros(Shape{3, s.height, s.width});
  auto& d = t.mutable_data();
  for (long p = 0; p < hw; ++p)
    for (long c = 0; c < 3; ++c)
      d[static_cast<size_t>(c * hw + p)] =
          static_cast<T>(s.rgb[static_cast<size_t>(p * 3 + c)]) / T(255);
  return t;
}

template <typename T>
Tensor<T> aux_tensor(const SyntheticSample& s) {
  Tensor<T> t = Tensor<T>::zeros(Shape{1, s.height, s.width});
  auto& d = t.mutable_data();
  for (size_t p = 0; p < s.aux.size(); ++p)
    d[p] = static_cast<T>(s.aux[p]) / T(255);
  return t;
}

template <typename T>
Tensor<T> gt_tensor(const SyntheticSample& s) {
  Tensor<T> t = Tensor<T>::zeros(Shape{1, s.height, s.width});
  auto& d = t.mutable_data();
  for (size_t p = 0; p < s.gt.size(); ++p)
    d[p] = s.gt[p] != 0 ? T(1) : T(0);
  return t;
}

}  // namespace dgssm
