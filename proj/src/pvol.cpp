#include "s3pet/pvol.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace s3pet {

namespace {

void put_f32le(std::ostream& os, float x) {
  std::uint32_t u;
  std::memcpy(&u, &x, 4);
  const char b[4] = {static_cast<char>(u & 0xff), static_cast<char>((u >> 8) & 0xff),
                     static_cast<char>((u >> 16) & 0xff),
                     static_cast<char>((u >> 24) & 0xff)};
  os.write(b, 4);
}

float get_f32le(const unsigned char* b) {
  const std::uint32_t u = static_cast<std::uint32_t>(b[0]) |
                          (static_cast<std::uint32_t>(b[1]) << 8) |
                          (static_cast<std::uint32_t>(b[2]) << 16) |
                          (static_cast<std::uint32_t>(b[3]) << 24);
  float x;
  std::memcpy(&x, &u, 4);
  return x;
}

}  // namespace

void write_volume(const std::string& path, const ImageVolume& vol) {
  if (vol.data.size() != vol.size()) {
    throw ShapeError("write_volume: payload length does not match dims");
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("write_volume: cannot open " + path);
  os << "PVOL1\n";
  os << "dims=" << vol.depth << ' ' << vol.height << ' ' << vol.width << ' '
     << vol.channels << '\n';
  os << "dtype=f32le\n\n";
  for (float x : vol.data) put_f32le(os, x);
  if (!os) throw FormatError("write_volume: short write to " + path);
}

ImageVolume read_volume(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("read_volume: cannot open " + path);
  std::string all((std::istreambuf_iterator<char>(is)),
                  std::istreambuf_iterator<char>());

  auto fail = [&](const std::string& what, std::size_t offset) {
    throw FormatError("read_volume: " + what + " at byte offset " +
                      std::to_string(offset) + " in " + path);
  };

  const std::string magic = "PVOL1\n";
  if (all.size() < magic.size() || all.compare(0, magic.size(), magic) != 0) {
    fail("bad magic, expected PVOL1", 0);
  }
  std::size_t pos = magic.size();

  auto read_line = [&](const char* what) {
    const std::size_t nl = all.find('\n', pos);
    if (nl == std::string::npos) fail(std::string("unterminated ") + what, pos);
    std::string line = all.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
  };

  const std::size_t dims_off = pos;
  const std::string dims_line = read_line("dims line");
  ImageVolume vol;
  {
    std::istringstream ss(dims_line);
    std::string tag;
    ss >> tag;
    if (tag.rfind("dims=", 0) != 0) fail("expected dims= line", dims_off);
    std::istringstream ds(dims_line.substr(5));
    if (!(ds >> vol.depth >> vol.height >> vol.width >> vol.channels) ||
        vol.depth <= 0 || vol.height <= 0 || vol.width <= 0 || vol.channels <= 0) {
      fail("unparseable dims", dims_off);
    }
  }
  const std::size_t dtype_off = pos;
  if (read_line("dtype line") != "dtype=f32le") fail("unsupported dtype", dtype_off);
  const std::size_t blank_off = pos;
  if (!read_line("separator line").empty()) fail("expected empty separator line", blank_off);

  const std::size_t n = vol.size();
  const std::size_t need = n * 4;
  if (all.size() - pos < need) {
    fail("truncated payload, need " + std::to_string(need) + " bytes, have " +
             std::to_string(all.size() - pos),
         all.size());
  }
  vol.data.resize(n);
  const unsigned char* p = reinterpret_cast<const unsigned char*>(all.data()) + pos;
  for (std::size_t i = 0; i < n; ++i) {
    vol.data[i] = get_f32le(p + 4 * i);
    if (!std::isfinite(vol.data[i])) fail("non-finite value", pos + 4 * i);
  }
  return vol;
}

}  // namespace s3pet
