#ifndef GRES2NET_WAV_HPP
#define GRES2NET_WAV_HPP

#include <string>
#include <vector>

#include "gres2net/common.hpp"

namespace gres2net {

struct Waveform {
  std::vector<double> samples;  // in [-1, 1]
  int sample_rate = 16000;

  double duration() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

// 16-bit PCM mono RIFF files. Samples are scaled by 32768 and clamped on
// write, divided by 32768 on read, so re-encoding a decoded file is stable.
void write_wav(const std::string& path, const Waveform& w);
Waveform read_wav(const std::string& path);

}  // namespace gres2net

#endif  // GRES2NET_WAV_HPP
