#include "vvv/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "vvv/bytes.hpp"
#include "vvv/dsp.hpp"

namespace vvv::audio {

void validate(const AudioClip& clip) {
  if (clip.samples.empty()) throw ValueError("audio clip is empty");
  if (clip.sample_rate < 8000) throw ValueError("sample rate below 8000 Hz");
  for (double s : clip.samples) {
    if (!std::isfinite(s)) throw ValueError("audio clip contains non-finite sample");
    if (s < -1.0 || s > 1.0) throw ValueError("audio sample out of [-1, 1]");
  }
}

void MfccConfig::validate() const {
  if (frame_length_ms <= 0 || frame_shift_ms <= 0)
    throw ValueError("frame timings must be positive");
  if (frame_shift_ms >= frame_length_ms)
    throw ValueError("frame shift must be smaller than frame length");
  if (num_mel_filters < 1) throw ValueError("need at least one mel filter");
  if (num_coefficients < 1 || num_coefficients > num_mel_filters)
    throw ValueError("coefficient count must be in [1, num_mel_filters]");
  if (pre_emphasis < 0.0 || pre_emphasis >= 1.0)
    throw ValueError("pre-emphasis must be in [0, 1)");
}

FeatureMatrix concat(std::span<const FeatureMatrix> parts) {
  if (parts.empty()) throw ValueError("nothing to concatenate");
  FeatureMatrix out;
  out.dim = parts[0].dim;
  for (const auto& p : parts) {
    if (p.dim != out.dim) throw ValueError("feature dimension mismatch across takes");
    out.frames.insert(out.frames.end(), p.frames.begin(), p.frames.end());
  }
  return out;
}

void validate(const FeatureMatrix& features) {
  if (features.frames.size() < 2) throw ValueError("feature matrix needs >= 2 frames");
  if (features.dim == 0) throw ValueError("feature dimension is zero");
  for (const auto& f : features.frames) {
    if (f.size() != features.dim) throw ValueError("ragged feature matrix");
    for (double v : f)
      if (!std::isfinite(v)) throw ValueError("non-finite feature value");
  }
}

// ---------------------------------------------------------------- WAV I/O

namespace {

struct ChunkHeader {
  char id[4];
  std::uint32_t size;
};

std::uint32_t read_u32le(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t read_u16le(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace

AudioClip read_wav(std::span<const std::uint8_t> b) {
  using Kind = WavError::Kind;
  if (b.size() < 12) throw WavError(Kind::MalformedHeader, "wav: container too small");
  if (std::memcmp(b.data(), "RIFF", 4) != 0 || std::memcmp(b.data() + 8, "WAVE", 4) != 0)
    throw WavError(Kind::MalformedHeader, "wav: not a RIFF/WAVE container");

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::size_t pos = 12;
  const std::uint8_t* data_ptr = nullptr;
  std::uint32_t data_size = 0;

  while (pos + 8 <= b.size()) {
    ChunkHeader h;
    std::memcpy(h.id, b.data() + pos, 4);
    h.size = read_u32le(b.data() + pos + 4);
    pos += 8;
    if (std::memcmp(h.id, "fmt ", 4) == 0) {
      if (h.size < 16 || pos + h.size > b.size())
        throw WavError(Kind::MalformedHeader, "wav: fmt chunk too small or truncated");
      format = read_u16le(b.data() + pos);
      channels = read_u16le(b.data() + pos + 2);
      rate = read_u32le(b.data() + pos + 4);
      bits = read_u16le(b.data() + pos + 14);
      have_fmt = true;
    } else if (std::memcmp(h.id, "data", 4) == 0) {
      if (!have_fmt) throw WavError(Kind::MalformedHeader, "wav: data chunk before fmt");
      if (pos + h.size > b.size())
        throw WavError(Kind::TruncatedData, "wav: data chunk extends past end of input");
      data_ptr = b.data() + pos;
      data_size = h.size;
      break;
    }
    // skip unrecognized chunk, padded to even size
    pos += h.size + (h.size & 1);
  }

  if (!have_fmt) throw WavError(Kind::MalformedHeader, "wav: missing fmt chunk");
  if (data_ptr == nullptr) throw WavError(Kind::MalformedHeader, "wav: missing data chunk");
  if (format != 1)
    throw WavError(Kind::UnsupportedEncoding, "wav: only PCM (format 1) is supported");
  if (channels != 1)
    throw WavError(Kind::UnsupportedEncoding, "wav: only mono is supported");
  if (bits != 16)
    throw WavError(Kind::UnsupportedEncoding, "wav: only 16-bit samples are supported");
  if (rate < 8000)
    throw WavError(Kind::UnsupportedEncoding, "wav: sample rate below 8000 Hz");
  if (data_size % 2 != 0)
    throw WavError(Kind::TruncatedData, "wav: data chunk holds a partial sample");
  if (data_size == 0) throw WavError(Kind::TruncatedData, "wav: data chunk is empty");

  AudioClip clip;
  clip.sample_rate = static_cast<int>(rate);
  clip.samples.resize(data_size / 2);
  for (std::size_t i = 0; i < clip.samples.size(); ++i) {
    std::int16_t v = static_cast<std::int16_t>(read_u16le(data_ptr + 2 * i));
    clip.samples[i] = static_cast<double>(v) / 32768.0;
  }
  return clip;
}

AudioClip read_wav_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValueError("cannot open " + path.string());
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
  return read_wav(buf);
}

std::vector<std::uint8_t> write_wav(const AudioClip& clip) {
  validate(clip);
  bytes::Writer w;
  const std::uint32_t data_size = static_cast<std::uint32_t>(clip.samples.size() * 2);
  w.raw(std::string_view("RIFF"));
  w.u32(36 + data_size);
  w.raw(std::string_view("WAVE"));
  w.raw(std::string_view("fmt "));
  w.u32(16);
  w.u16(1);  // PCM
  w.u16(1);  // mono
  w.u32(static_cast<std::uint32_t>(clip.sample_rate));
  w.u32(static_cast<std::uint32_t>(clip.sample_rate * 2));  // byte rate
  w.u16(2);   // block align
  w.u16(16);  // bits per sample
  w.raw(std::string_view("data"));
  w.u32(data_size);
  for (double s : clip.samples) {
    // Same 1/32768 scale as read_wav, so write/read is a plain 0.5-LSB
    // quantizer and quantized data round-trips bit-exactly.
    const double clamped = std::clamp(s, -1.0, 1.0);
    const long long q = std::min<long long>(32767, std::llround(clamped * 32768.0));
    w.u16(static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  return w.take();
}

void write_wav_file(const AudioClip& clip, const std::filesystem::path& path) {
  auto buf = write_wav(clip);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValueError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw ValueError("short write to " + path.string());
}

// ------------------------------------------------------------------- MFCC

namespace {

struct FramePlan {
  std::vector<double> emphasized;
  std::size_t frame_len = 0;
  std::size_t shift = 0;
  std::size_t num_frames = 0;
  std::size_t nfft = 0;
};

FramePlan plan_frames(const AudioClip& clip, const MfccConfig& cfg) {
  validate(clip);
  cfg.validate();
  FramePlan p;
  p.frame_len = static_cast<std::size_t>(
      static_cast<std::int64_t>(clip.sample_rate) * cfg.frame_length_ms / 1000);
  p.shift = static_cast<std::size_t>(
      static_cast<std::int64_t>(clip.sample_rate) * cfg.frame_shift_ms / 1000);
  if (clip.samples.size() < p.frame_len + p.shift)
    throw ValueError("clip too short: fewer than two full frames");
  p.num_frames = (clip.samples.size() - p.frame_len) / p.shift + 1;
  p.nfft = dsp::next_pow2(p.frame_len);

  p.emphasized.resize(clip.samples.size());
  double prev = 0.0;
  for (std::size_t i = 0; i < clip.samples.size(); ++i) {
    p.emphasized[i] = clip.samples[i] - cfg.pre_emphasis * prev;
    prev = clip.samples[i];
  }
  return p;
}

}  // namespace

std::vector<std::vector<double>> compute_mel_energies(const AudioClip& clip,
                                                      const MfccConfig& cfg) {
  FramePlan p = plan_frames(clip, cfg);
  const auto window = dsp::hamming_window(p.frame_len);
  const auto bank = dsp::mel_filterbank(cfg.num_mel_filters, p.nfft, clip.sample_rate, 0.0,
                                        clip.sample_rate / 2.0);
  std::vector<std::vector<double>> energies(p.num_frames);
  std::vector<double> frame(p.frame_len);
  for (std::size_t k = 0; k < p.num_frames; ++k) {
    const std::size_t start = k * p.shift;
    for (std::size_t i = 0; i < p.frame_len; ++i)
      frame[i] = p.emphasized[start + i] * window[i];
    const auto pow_spec = dsp::power(dsp::spectrum(frame, p.nfft));
    auto& row = energies[k];
    row.resize(static_cast<std::size_t>(cfg.num_mel_filters));
    for (int m = 0; m < cfg.num_mel_filters; ++m) {
      double acc = 0.0;
      const auto& filt = bank[static_cast<std::size_t>(m)];
      for (std::size_t b = 0; b < pow_spec.size(); ++b) acc += filt[b] * pow_spec[b];
      row[static_cast<std::size_t>(m)] = acc;
    }
  }
  return energies;
}

FeatureMatrix compute_mfcc(const AudioClip& clip, const MfccConfig& cfg) {
  FramePlan p = plan_frames(clip, cfg);
  const auto energies = compute_mel_energies(clip, cfg);

  FeatureMatrix out;
  out.dim = cfg.feature_dim();
  out.frames.resize(p.num_frames);
  std::vector<double> log_mel(static_cast<std::size_t>(cfg.num_mel_filters));
  for (std::size_t k = 0; k < p.num_frames; ++k) {
    for (int m = 0; m < cfg.num_mel_filters; ++m) {
      double e = energies[k][static_cast<std::size_t>(m)];
      log_mel[static_cast<std::size_t>(m)] = std::log(e < kLogFloor ? kLogFloor : e);
    }
    out.frames[k] = dsp::dct2_ortho(log_mel, cfg.num_coefficients);
    if (cfg.include_log_energy) {
      const std::size_t start = k * p.shift;
      double e = 0.0;
      for (std::size_t i = 0; i < p.frame_len; ++i) {
        double s = p.emphasized[start + i];
        e += s * s;
      }
      out.frames[k].push_back(std::log(e < kLogFloor ? kLogFloor : e));
    }
  }
  validate(out);
  return out;
}

}  // namespace vvv::audio
