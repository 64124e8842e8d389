#pragma once

#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "dgssm/tensor.hpp"

// Tensor payloads are flat little-endian 32-bit floats behind a one-line
// text header: `TNSR v1 <ndim> <d0> <d1> ...\n`. Checkpoints are a text
// manifest of named tensors around those blocks; everything is written in
// a fixed order so identical state produces identical bytes.

namespace dgssm {

inline void write_f32_le(std::ostream& os, float v) {
  std::uint32_t u;
  std::memcpy(&u, &v, 4);
  const char b[4] = {static_cast<char>(u & 0xff), static_cast<char>((u >> 8) & 0xff),
                     static_cast<char>((u >> 16) & 0xff), static_cast<char>((u >> 24) & 0xff)};
  os.write(b, 4);
}

inline float read_f32_le(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw Error("truncated tensor payload");
  const std::uint32_t u = static_cast<std::uint32_t>(b[0]) |
                          (static_cast<std::uint32_t>(b[1]) << 8) |
                          (static_cast<std::uint32_t>(b[2]) << 16) |
                          (static_cast<std::uint32_t>(b[3]) << 24);
  float v;
  std::memcpy(&v, &u, 4);
  return v;
}

template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& t) {
  os << "TNSR v1 " << t.ndim();
  for (long d : t.shape()) os << ' ' << d;
  os << '\n';
  for (T v : t.data()) write_f32_le(os, static_cast<float>(v));
}

template <typename T>
Tensor<T> read_tensor(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw Error("missing tensor header");
  std::istringstream hs(line);
  std::string magic, version;
  int ndim = -1;
  hs >> magic >> version >> ndim;
  if (magic != "TNSR" || version != "v1" || ndim < 0 || !hs)
    throw Error("bad tensor header: '" + line + "'");
  Shape shape(static_cast<size_t>(ndim));
  for (auto& d : shape) {
    hs >> d;
    if (!hs) throw Error("bad tensor header: '" + line + "'");
  }
  const long n = numel_of(shape);
  std::vector<T> data(static_cast<size_t>(n));
  for (auto& v : data) v = static_cast<T>(read_f32_le(is));
  return Tensor<T>(std::move(shape), std::move(data));
}

template <typename T>
using NamedTensors = std::vector<std::pair<std::string, Tensor<T>>>;

using ConfigLines = std::vector<std::pair<std::string, std::string>>;

template <typename T>
void write_checkpoint(std::ostream& os, const ConfigLines& config, const NamedTensors<T>& params) {
  os << "DGSSM-CHECKPOINT v1\n";
  os << "config " << config.size() << '\n';
  for (const auto& [k, v] : config) os << k << " = " << v << '\n';
  os << "params " << params.size() << '\n';
  for (const auto& [name, t] : params) {
    os << name << '\n';
    write_tensor(os, t);
  }
}

template <typename T>
void load_checkpoint(std::istream& is, ConfigLines& config, NamedTensors<T>& params) {
  std::string line;
  if (!std::getline(is, line) || line != "DGSSM-CHECKPOINT v1")
    throw Error("not a checkpoint file (bad magic)");
  std::string word;
  size_t n = 0;
  is >> word >> n;
  if (word != "config" || !is) throw Error("malformed checkpoint config header");
  std::getline(is, line);  // eat newline
  config.clear();
  for (size_t i = 0; i < n; ++i) {
    if (!std::getline(is, line)) throw Error("truncated checkpoint config block");
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw Error("malformed config line: '" + line + "'");
    config.emplace_back(line.substr(0, eq), line.substr(eq + 3));
  }
  is >> word >> n;
  if (word != "params" || !is) throw Error("malformed checkpoint params header");
  std::getline(is, line);
  params.clear();
  for (size_t i = 0; i < n; ++i) {
    std::string name;
    if (!std::getline(is, name) || name.empty()) throw Error("truncated checkpoint params block");
    params.emplace_back(name, read_tensor<T>(is));
  }
}

template <typename T>
void save_checkpoint_file(const std::string& path, const ConfigLines& config,
                          const NamedTensors<T>& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  write_checkpoint(os, config, params);
  if (!os) throw Error("write failed for '" + path + "'");
}

template <typename T>
void load_checkpoint_file(const std::string& path, ConfigLines& config, NamedTensors<T>& params) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open '" + path + "'");
  load_checkpoint(is, config, params);
}

}  // namespace dgssm
