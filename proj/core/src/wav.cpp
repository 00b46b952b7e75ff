#include "gres2net/wav.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace gres2net {

namespace {

void put_u32(std::string& out, uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_u16(std::string& out, uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

uint32_t get_u32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

uint16_t get_u16(const unsigned char* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace

void write_wav(const std::string& path, const Waveform& w) {
  GRES_CHECK(w.sample_rate > 0, "write_wav: sample rate must be positive");
  const uint32_t n = static_cast<uint32_t>(w.samples.size());
  const uint32_t data_bytes = n * 2;

  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  put_u32(out, 36 + data_bytes);
  out += "WAVE";
  out += "fmt ";
  put_u32(out, 16);
  put_u16(out, 1);  // PCM
  put_u16(out, 1);  // mono
  put_u32(out, static_cast<uint32_t>(w.sample_rate));
  put_u32(out, static_cast<uint32_t>(w.sample_rate) * 2);
  put_u16(out, 2);   // block align
  put_u16(out, 16);  // bits per sample
  out += "data";
  put_u32(out, data_bytes);
  for (double s : w.samples) {
    double v = std::lrint(s * 32768.0);
    if (v > 32767.0) v = 32767.0;
    if (v < -32768.0) v = -32768.0;
    const int16_t q = static_cast<int16_t>(v);
    put_u16(out, static_cast<uint16_t>(q));
  }

  std::ofstream file(path, std::ios::binary);
  if (!file) throw IoError(format_msg("cannot open '", path, "' for writing"));
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw IoError(format_msg("short write to '", path, "'"));
}

Waveform read_wav(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw IoError(format_msg("cannot open '", path, "'"));
  std::string bytes((std::istreambuf_iterator<char>(file)),
                    std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const size_t size = bytes.size();

  auto fail = [&](const char* why) {
    throw IoError(format_msg("'", path, "': ", why));
  };
  if (size < 12 || std::memcmp(p, "RIFF", 4) != 0 || std::memcmp(p + 8, "WAVE", 4) != 0)
    fail("not a RIFF/WAVE file");

  Waveform w;
  bool have_fmt = false, have_data = false;
  size_t pos = 12;
  while (pos + 8 <= size) {
    const char* tag = bytes.data() + pos;
    const uint32_t chunk = get_u32(p + pos + 4);
    pos += 8;
    if (pos + chunk > size) fail("truncated chunk");
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      if (chunk < 16) fail("fmt chunk too small");
      if (get_u16(p + pos) != 1) fail("only PCM encoding is supported");
      if (get_u16(p + pos + 2) != 1) fail("only mono files are supported");
      w.sample_rate = static_cast<int>(get_u32(p + pos + 4));
      if (get_u16(p + pos + 14) != 16) fail("only 16-bit samples are supported");
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      if (!have_fmt) fail("data chunk before fmt");
      const size_t count = chunk / 2;
      w.samples.resize(count);
      for (size_t i = 0; i < count; ++i) {
        const int16_t q = static_cast<int16_t>(get_u16(p + pos + 2 * i));
        w.samples[i] = static_cast<double>(q) / 32768.0;
      }
      have_data = true;
    }
    pos += chunk + (chunk & 1);  // chunks are word-aligned
  }
  if (!have_fmt || !have_data) fail("missing fmt or data chunk");
  return w;
}

}  // namespace gres2net
