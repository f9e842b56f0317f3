#include "s3pet/checkpoint.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace s3pet {

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hash_hex(const std::string& s) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(s)));
  return std::string(buf);
}

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

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  // validate manifest layout before writing anything
  std::int64_t expect = 0;
  for (const auto& e : ckpt.entries) {
    if (e.offset != expect) {
      throw FormatError("save_checkpoint: non-contiguous offset for " + e.name);
    }
    expect += static_cast<std::int64_t>(e.rows) * e.cols;
  }
  if (expect != static_cast<std::int64_t>(ckpt.payload.size())) {
    throw FormatError("save_checkpoint: payload length does not match manifest");
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("save_checkpoint: cannot open " + path);
  os << "S3CKPT1\n";
  os << "meta stage=" << ckpt.stage << " dose=" << ckpt.dose
     << " variant=" << ckpt.variant << " d=" << ckpt.d << " t=" << ckpt.t_blocks
     << " h=" << ckpt.h << " p=" << ckpt.p << " slice=" << ckpt.slice
     << " steps=" << ckpt.steps << " config=" << ckpt.config_hash << "\n";
  for (const auto& e : ckpt.entries) {
    os << e.name << ' ' << e.rows << ' ' << e.cols << ' ' << e.offset << '\n';
  }
  os << '\n';
  for (float x : ckpt.payload) put_f32le(os, x);
  if (!os) throw FormatError("save_checkpoint: short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("load_checkpoint: cannot open " + path);
  std::string all((std::istreambuf_iterator<char>(is)),
                  std::istreambuf_iterator<char>());

  auto fail = [&](const std::string& what) {
    throw FormatError("load_checkpoint: " + what + " in " + path);
  };

  const std::string magic = "S3CKPT1\n";
  if (all.compare(0, magic.size(), magic) != 0) fail("bad magic");
  std::size_t pos = magic.size();
  auto read_line = [&]() {
    const std::size_t nl = all.find('\n', pos);
    if (nl == std::string::npos) fail("unterminated manifest");
    std::string line = all.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
  };

  Checkpoint ckpt;
  {
    std::istringstream ms(read_line());
    std::string tag;
    ms >> tag;
    if (tag != "meta") fail("expected meta line");
    std::string kv;
    while (ms >> kv) {
      const std::size_t eq = kv.find('=');
      if (eq == std::string::npos) fail("bad meta token " + kv);
      const std::string key = kv.substr(0, eq);
      const std::string val = kv.substr(eq + 1);
      if (key == "stage") ckpt.stage = val;
      else if (key == "dose") ckpt.dose = val;
      else if (key == "variant") ckpt.variant = val;
      else if (key == "d") ckpt.d = std::stoi(val);
      else if (key == "t") ckpt.t_blocks = std::stoi(val);
      else if (key == "h") ckpt.h = std::stoi(val);
      else if (key == "p") ckpt.p = std::stoi(val);
      else if (key == "slice") ckpt.slice = std::stoi(val);
      else if (key == "steps") ckpt.steps = std::stoll(val);
      else if (key == "config") ckpt.config_hash = val;
      else fail("unknown meta key " + key);
    }
  }

  std::int64_t expect = 0;
  for (;;) {
    const std::string line = read_line();
    if (line.empty()) break;
    std::istringstream ls(line);
    Checkpoint::Entry e;
    if (!(ls >> e.name >> e.rows >> e.cols >> e.offset) || e.rows <= 0 || e.cols <= 0) {
      fail("bad manifest line: " + line);
    }
    if (e.offset != expect) {
      fail("manifest offsets not contiguous at " + e.name);
    }
    expect += static_cast<std::int64_t>(e.rows) * e.cols;
    ckpt.entries.push_back(std::move(e));
  }

  const std::size_t need = static_cast<std::size_t>(expect) * 4;
  if (all.size() - pos != need) {
    fail("payload length " + std::to_string(all.size() - pos) + " != manifest total " +
         std::to_string(need));
  }
  ckpt.payload.resize(static_cast<std::size_t>(expect));
  const unsigned char* p = reinterpret_cast<const unsigned char*>(all.data()) + pos;
  for (std::size_t i = 0; i < ckpt.payload.size(); ++i) {
    ckpt.payload[i] = get_f32le(p + 4 * i);
    if (!std::isfinite(ckpt.payload[i])) fail("non-finite payload value");
  }
  return ckpt;
}

}  // namespace s3pet
