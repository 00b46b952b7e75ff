#include "gres2net/features.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>
#include <mutex>

namespace gres2net {

double CqtConfig::bin_frequency(int bin) const {
  return f_min * std::pow(2.0, static_cast<double>(bin) / bins_per_octave);
}

int CqtConfig::hop_samples(int sample_rate) const {
  const double exact = hop_seconds * sample_rate;
  const int hop = static_cast<int>(std::lround(exact));
  GRES_CHECK_CONFIG(hop >= 1 && std::abs(exact - hop) < 1e-9,
                    "cqt: hop of ", hop_seconds, " s is not an integer number of",
                    " samples at ", sample_rate, " Hz");
  return hop;
}

void CqtConfig::validate(int sample_rate) const {
  GRES_CHECK_CONFIG(sample_rate > 0, "cqt: sample rate must be positive");
  GRES_CHECK_CONFIG(octaves >= 1 && bins_per_octave >= 1,
                    "cqt: bin layout must be positive");
  GRES_CHECK_CONFIG(f_min > 0.0, "cqt: f_min must be positive");
  GRES_CHECK_CONFIG(target_frames >= 1, "cqt: target_frames must be >= 1");
  GRES_CHECK_CONFIG(log_floor > 0.0, "cqt: log_floor must be positive");
  (void)hop_samples(sample_rate);
  const double top = f_min * std::pow(2.0, octaves);
  GRES_CHECK_CONFIG(top <= sample_rate / 2.0 + 1e-9, "cqt: top frequency ", top,
                    " Hz exceeds the Nyquist limit of ", sample_rate / 2.0, " Hz");
}

namespace {

// Precomputed per-bin windowed quadrature kernels. Built once per
// (config, sample rate) and shared read-only across utterances.
struct CqtPlan {
  int sample_rate = 0;
  CqtConfig cfg;
  struct BinKernel {
    int64_t length = 0;
    double norm = 0;               // window sum
    std::vector<double> cosw, sinw;  // window * cos / sin
  };
  std::vector<BinKernel> bins;
};

bool same_config(const CqtConfig& a, const CqtConfig& b) {
  return a.hop_seconds == b.hop_seconds && a.octaves == b.octaves &&
         a.bins_per_octave == b.bins_per_octave && a.f_min == b.f_min &&
         a.target_frames == b.target_frames && a.log_floor == b.log_floor;
}

std::shared_ptr<const CqtPlan> plan_for(const CqtConfig& cfg, int sample_rate) {
  static std::mutex mutex;
  static std::shared_ptr<const CqtPlan> cached;
  std::lock_guard<std::mutex> lock(mutex);
  if (cached && cached->sample_rate == sample_rate && same_config(cached->cfg, cfg))
    return cached;

  auto plan = std::make_shared<CqtPlan>();
  plan->sample_rate = sample_rate;
  plan->cfg = cfg;
  const double q_factor =
      1.0 / (std::pow(2.0, 1.0 / cfg.bins_per_octave) - 1.0);
  const double two_pi = 6.283185307179586476925286766559;
  plan->bins.resize(static_cast<size_t>(cfg.total_bins()));
  for (int k = 0; k < cfg.total_bins(); ++k) {
    const double freq = cfg.bin_frequency(k);
    auto& bin = plan->bins[static_cast<size_t>(k)];
    bin.length =
        std::max<int64_t>(4, static_cast<int64_t>(std::ceil(q_factor * sample_rate / freq)));
    bin.cosw.resize(static_cast<size_t>(bin.length));
    bin.sinw.resize(static_cast<size_t>(bin.length));
    const double centre = static_cast<double>(bin.length - 1) / 2.0;
    double wsum = 0.0;
    for (int64_t m = 0; m < bin.length; ++m) {
      const double window =
          0.5 - 0.5 * std::cos(two_pi * static_cast<double>(m) /
                               static_cast<double>(bin.length - 1));
      const double phase =
          two_pi * freq * (static_cast<double>(m) - centre) / sample_rate;
      bin.cosw[static_cast<size_t>(m)] = window * std::cos(phase);
      bin.sinw[static_cast<size_t>(m)] = window * std::sin(phase);
      wsum += window;
    }
    bin.norm = wsum;
  }
  cached = plan;
  return cached;
}

}  // namespace

Spectrogram cqt(const Waveform& w, const CqtConfig& cfg) {
  cfg.validate(w.sample_rate);
  GRES_CHECK(!w.samples.empty(), "cqt: waveform is empty");
  const int hop = cfg.hop_samples(w.sample_rate);
  const int64_t len = static_cast<int64_t>(w.samples.size());
  const int64_t frames = (len - 1) / hop + 1;

  auto plan = plan_for(cfg, w.sample_rate);
  Spectrogram spec;
  spec.bins = cfg.total_bins();
  spec.frames = frames;
  spec.values.resize(static_cast<size_t>(spec.bins * frames));
  spec.bin_frequencies.resize(static_cast<size_t>(spec.bins));
  for (int k = 0; k < spec.bins; ++k)
    spec.bin_frequencies[static_cast<size_t>(k)] = cfg.bin_frequency(k);

  const double* x = w.samples.data();
  for (int64_t k = 0; k < spec.bins; ++k) {
    const auto& bin = plan->bins[static_cast<size_t>(k)];
    const double* cw = bin.cosw.data();
    const double* sw = bin.sinw.data();
    double* row = spec.values.data() + k * frames;
    for (int64_t t = 0; t < frames; ++t) {
      const int64_t start = t * hop - bin.length / 2;
      const int64_t m0 = start < 0 ? -start : 0;
      const int64_t m1 = std::min<int64_t>(bin.length, len - start);
      double re = 0.0, im = 0.0;
      const double* xs = x + start;
      for (int64_t m = m0; m < m1; ++m) {
        re += xs[m] * cw[m];
        im += xs[m] * sw[m];
      }
      const double mag = std::sqrt(re * re + im * im) / bin.norm;
      row[t] = std::log(mag + cfg.log_floor);
    }
  }
  return spec;
}

Spectrogram fix_frames(const Spectrogram& spec, int target) {
  GRES_CHECK(spec.frames >= 1, "fix_frames: spectrogram has no frames");
  GRES_CHECK(target >= 1, "fix_frames: target must be >= 1");
  if (spec.frames == target) return spec;

  Spectrogram out;
  out.bins = spec.bins;
  out.frames = target;
  out.bin_frequencies = spec.bin_frequencies;
  out.values.resize(static_cast<size_t>(spec.bins * target));
  for (int64_t b = 0; b < spec.bins; ++b) {
    const double* src = spec.values.data() + b * spec.frames;
    double* dst = out.values.data() + b * target;
    if (spec.frames >= target) {
      std::copy(src, src + target, dst);
    } else {
      for (int64_t t = 0; t < target; ++t) dst[t] = src[t % spec.frames];
    }
  }
  return out;
}

Spectrogram extract_features(const Waveform& w, const CqtConfig& cfg) {
  return fix_frames(cqt(w, cfg), cfg.target_frames);
}

namespace {

constexpr char kFeatureMagic[8] = {'G', 'R', '2', 'N', 'F', 'E', 'A', 'T'};
constexpr uint32_t kFeatureVersion = 1;

void write_feature_bytes(const std::string& path, int64_t bins, int64_t frames,
                         const float* values) {
  std::ofstream file(path, std::ios::binary);
  if (!file) throw IoError(format_msg("cannot open '", path, "' for writing"));
  file.write(kFeatureMagic, 8);
  const uint32_t version = kFeatureVersion;
  file.write(reinterpret_cast<const char*>(&version), 4);
  const uint8_t dtype = 'f';
  const uint8_t rank = 2;
  const uint16_t reserved = 0;
  file.write(reinterpret_cast<const char*>(&dtype), 1);
  file.write(reinterpret_cast<const char*>(&rank), 1);
  file.write(reinterpret_cast<const char*>(&reserved), 2);
  const uint64_t dims[2] = {static_cast<uint64_t>(bins),
                            static_cast<uint64_t>(frames)};
  file.write(reinterpret_cast<const char*>(dims), 16);
  file.write(reinterpret_cast<const char*>(values),
             static_cast<std::streamsize>(sizeof(float) * bins * frames));
  if (!file) throw IoError(format_msg("short write to '", path, "'"));
}

}  // namespace

void write_feature_file(const std::string& path, const Spectrogram& spec) {
  std::vector<float> narrowed(spec.values.size());
  for (size_t i = 0; i < spec.values.size(); ++i)
    narrowed[i] = static_cast<float>(spec.values[i]);
  write_feature_bytes(path, spec.bins, spec.frames, narrowed.data());
}

void write_feature_file(const std::string& path, const FeatureData& data) {
  write_feature_bytes(path, data.bins, data.frames, data.values.data());
}

FeatureData read_feature_file(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw IoError(format_msg("cannot open '", path, "'"));
  char magic[8];
  uint32_t version = 0;
  uint8_t dtype = 0, rank = 0;
  uint16_t reserved = 0;
  uint64_t dims[2] = {0, 0};
  file.read(magic, 8);
  file.read(reinterpret_cast<char*>(&version), 4);
  file.read(reinterpret_cast<char*>(&dtype), 1);
  file.read(reinterpret_cast<char*>(&rank), 1);
  file.read(reinterpret_cast<char*>(&reserved), 2);
  file.read(reinterpret_cast<char*>(dims), 16);
  if (!file || std::memcmp(magic, kFeatureMagic, 8) != 0)
    throw IoError(format_msg("'", path, "': not a feature tensor file"));
  if (version != kFeatureVersion)
    throw IoError(format_msg("'", path, "': unsupported version ", version));
  if (dtype != 'f' || rank != 2)
    throw IoError(format_msg("'", path, "': unsupported dtype or rank"));

  FeatureData data;
  data.bins = static_cast<int64_t>(dims[0]);
  data.frames = static_cast<int64_t>(dims[1]);
  GRES_CHECK(data.bins > 0 && data.frames > 0, "'", path, "': invalid extents");
  data.values.resize(static_cast<size_t>(data.bins * data.frames));
  file.read(reinterpret_cast<char*>(data.values.data()),
            static_cast<std::streamsize>(sizeof(float) * data.values.size()));
  if (!file) throw IoError(format_msg("'", path, "': truncated data section"));
  return data;
}

}  // namespace gres2net
