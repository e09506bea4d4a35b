#include "earcan/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "earcan/error.hpp"

namespace earcan {

namespace {

void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  b.push_back(v & 0xff);
  b.push_back((v >> 8) & 0xff);
  b.push_back((v >> 16) & 0xff);
  b.push_back((v >> 24) & 0xff);
}

void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(v & 0xff);
  b.push_back((v >> 8) & 0xff);
}

struct Reader {
  const std::uint8_t* p;
  std::size_t n;
  std::size_t pos = 0;

  void need(std::size_t k, const char* field) {
    if (pos + k > n) fail(Errc::format, std::string("wav: truncated at ") + field);
  }
  std::uint32_t u32(const char* field) {
    need(4, field);
    std::uint32_t v = static_cast<std::uint32_t>(p[pos]) | (p[pos + 1] << 8) |
                      (p[pos + 2] << 16) | (static_cast<std::uint32_t>(p[pos + 3]) << 24);
    pos += 4;
    return v;
  }
  std::uint16_t u16(const char* field) {
    need(2, field);
    std::uint16_t v = static_cast<std::uint16_t>(p[pos] | (p[pos + 1] << 8));
    pos += 2;
    return v;
  }
  void tag(char out[4], const char* field) {
    need(4, field);
    std::memcpy(out, p + pos, 4);
    pos += 4;
  }
};

}  // namespace

Signal read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(Errc::format, "wav: cannot open " + path);
  std::vector<std::uint8_t> raw((std::istreambuf_iterator<char>(f)),
                                std::istreambuf_iterator<char>());
  Reader r{raw.data(), raw.size()};

  char id[4];
  r.tag(id, "riff_magic");
  if (std::memcmp(id, "RIFF", 4) != 0) fail(Errc::format, "wav: riff_magic is not 'RIFF'");
  r.u32("riff_size");
  r.tag(id, "wave_magic");
  if (std::memcmp(id, "WAVE", 4) != 0) fail(Errc::format, "wav: wave_magic is not 'WAVE'");

  bool have_fmt = false;
  std::uint16_t channels = 0, bits = 0, audio_format = 0;
  std::uint32_t sample_rate = 0;
  Signal out;

  while (r.pos + 8 <= r.n) {
    r.tag(id, "chunk_id");
    const std::uint32_t size = r.u32("chunk_size");
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (size < 16) fail(Errc::format, "wav: fmt chunk_size below 16");
      const std::size_t chunk_end = r.pos + size;
      audio_format = r.u16("audio_format");
      channels = r.u16("channels");
      sample_rate = r.u32("sample_rate");
      r.u32("byte_rate");
      r.u16("block_align");
      bits = r.u16("bits_per_sample");
      if (audio_format != 1) fail(Errc::format, "wav: audio_format must be 1 (PCM)");
      if (channels != 1) fail(Errc::format, "wav: channels must be 1 (mono)");
      if (bits != 16) fail(Errc::format, "wav: bits_per_sample must be 16");
      have_fmt = true;
      r.pos = chunk_end;
    } else if (std::memcmp(id, "data", 4) == 0) {
      if (!have_fmt) fail(Errc::format, "wav: data chunk before fmt chunk");
      r.need(size, "data_payload");
      if (size % 2 != 0) fail(Errc::format, "wav: odd data chunk_size for 16-bit samples");
      const std::size_t count = size / 2;
      out.samples.resize(count);
      for (std::size_t i = 0; i < count; ++i) {
        const std::uint16_t u =
            static_cast<std::uint16_t>(r.p[r.pos + 2 * i] | (r.p[r.pos + 2 * i + 1] << 8));
        out.samples[i] = static_cast<std::int16_t>(u) / 32768.0;
      }
      out.sample_rate = static_cast<int>(sample_rate);
      return out;
    } else {
      // skip unknown chunk (word-aligned)
      r.need(size + (size & 1), "chunk_payload");
      r.pos += size + (size & 1);
    }
  }
  fail(Errc::format, have_fmt ? "wav: missing data chunk" : "wav: missing fmt chunk");
}

void write_wav(const std::string& path, const Signal& s) {
  if (s.sample_rate <= 0) fail(Errc::config, "wav: sample_rate must be positive");
  std::vector<std::uint8_t> b;
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(s.size() * 2);
  b.reserve(44 + data_bytes);
  b.insert(b.end(), {'R', 'I', 'F', 'F'});
  put_u32(b, 36 + data_bytes);
  b.insert(b.end(), {'W', 'A', 'V', 'E'});
  b.insert(b.end(), {'f', 'm', 't', ' '});
  put_u32(b, 16);
  put_u16(b, 1);  // PCM
  put_u16(b, 1);  // mono
  put_u32(b, static_cast<std::uint32_t>(s.sample_rate));
  put_u32(b, static_cast<std::uint32_t>(s.sample_rate) * 2);
  put_u16(b, 2);
  put_u16(b, 16);
  b.insert(b.end(), {'d', 'a', 't', 'a'});
  put_u32(b, data_bytes);
  for (double x : s.samples) {
    long v = std::lround(x * 32768.0);
    v = std::clamp(v, -32768L, 32767L);
    put_u16(b, static_cast<std::uint16_t>(static_cast<std::int16_t>(v)));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(Errc::format, "wav: cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  if (!f) fail(Errc::format, "wav: short write to " + path);
}

}  // namespace earcan
