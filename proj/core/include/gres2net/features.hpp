#ifndef GRES2NET_FEATURES_HPP
#define GRES2NET_FEATURES_HPP

#include <string>
#include <vector>

#include "gres2net/wav.hpp"

namespace gres2net {

// Constant-Q configuration: geometrically spaced bins f_min * 2^(k/48) over
// 9 octaves, Hanning windows of Q-matched length, 16 ms hop, log magnitudes,
// and the frame count fixed to exactly 400.
struct CqtConfig {
  double hop_seconds = 0.016;
  int octaves = 9;
  int bins_per_octave = 48;
  double f_min = 15.0;
  int target_frames = 400;
  double log_floor = 1e-10;

  int total_bins() const { return octaves * bins_per_octave; }
  double bin_frequency(int bin) const;
  int hop_samples(int sample_rate) const;
  void validate(int sample_rate) const;
};

struct Spectrogram {
  int64_t bins = 0;
  int64_t frames = 0;
  std::vector<double> values;  // bins x frames, row-major
  std::vector<double> bin_frequencies;

  double at(int64_t bin, int64_t frame) const {
    return values[static_cast<size_t>(bin * frames + frame)];
  }
};

// Log-magnitude constant-Q transform; frame t is centered at t * hop.
Spectrogram cqt(const Waveform& w, const CqtConfig& cfg);

// Truncates to the first `target` frames, or tiles the whole sequence
// end-to-end until `target` frames are filled. Idempotent.
Spectrogram fix_frames(const Spectrogram& spec, int target);

// cqt followed by fix_frames: always total_bins x target_frames.
Spectrogram extract_features(const Waveform& w, const CqtConfig& cfg);

// Flat binary tensor file (magic, dtype, shape, little-endian float32 data).
// Round-trips bit-exactly.
struct FeatureData {
  int64_t bins = 0;
  int64_t frames = 0;
  std::vector<float> values;  // bins x frames, row-major
};

void write_feature_file(const std::string& path, const Spectrogram& spec);
void write_feature_file(const std::string& path, const FeatureData& data);
FeatureData read_feature_file(const std::string& path);

}  // namespace gres2net

#endif  // GRES2NET_FEATURES_HPP
