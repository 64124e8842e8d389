#include "dgssm/image_io.hpp"

#include <fstream>

#include "dgssm/common.hpp"

namespace dgssm {
namespace {

// Skips whitespace and '#' comment lines between header tokens.
void skip_separators(std::istream& in) {
  for (;;) {
    const int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
      in.get();
    } else {
      return;
    }
  }
}

long read_header_value(std::istream& in, const std::string& path, const char* what) {
  skip_separators(in);
  long v = 0;
  if (!(in >> v) || v <= 0)
    throw Error("invalid " + std::string(what) + " in image header: " + path);
  return v;
}

}  // namespace

void write_image(const std::string& path, const ImageU8& img) {
  if (img.channels != 1 && img.channels != 3)
    throw Error("write_image supports 1 or 3 channels, got " + std::to_string(img.channels));
  if (img.width <= 0 || img.height <= 0)
    throw Error("write_image needs positive dimensions for " + path);
  const size_t expect =
      static_cast<size_t>(img.width) * static_cast<size_t>(img.height) * static_cast<size_t>(img.channels);
  if (img.data.size() != expect)
    throw Error("write_image: pixel buffer has " + std::to_string(img.data.size()) +
                " bytes, expected " + std::to_string(expect));

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path);
  out << (img.channels == 3 ? "P6" : "P5") << "\n"
      << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.data.data()),
            static_cast<std::streamsize>(img.data.size()));
  if (!out) throw Error("short write to " + path);
}

ImageU8 read_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open for reading: " + path);

  std::string magic;
  in >> magic;
  ImageU8 img;
  if (magic == "P6") {
    img.channels = 3;
  } else if (magic == "P5") {
    img.channels = 1;
  } else {
    throw Error("unsupported image magic '" + magic + "' in " + path);
  }

  img.width = read_header_value(in, path, "width");
  img.height = read_header_value(in, path, "height");
  const long maxval = read_header_value(in, path, "maxval");
  if (maxval != 255) throw Error("only maxval 255 is supported, got " +
                                 std::to_string(maxval) + " in " + path);
  in.get();  // single whitespace byte separating header from pixel data

  const size_t expect =
      static_cast<size_t>(img.width) * static_cast<size_t>(img.height) * static_cast<size_t>(img.channels);
  img.data.resize(expect);
  in.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(expect));
  if (static_cast<size_t>(in.gcount()) != expect)
    throw Error("truncated pixel data in " + path);
  return img;
}

}  // namespace dgssm
