#pragma once

#include <string>

#include "earcan/signal.hpp"

namespace earcan {

// 16-bit PCM mono RIFF/WAVE only. Samples map as s = round(x * 32768)
// clamped to [-32768, 32767], so a full-scale 1.0 stores as 32767 and a
// write/read round trip stays within one quantization step (1/32768).
Signal read_wav(const std::string& path);
void write_wav(const std::string& path, const Signal& s);

}  // namespace earcan
