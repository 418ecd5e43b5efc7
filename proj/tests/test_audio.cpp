#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <vector>

#include "vvv/audio.hpp"
#include "vvv/dsp.hpp"
#include "vvv/errors.hpp"
#include "vvv/rng.hpp"

using namespace vvv;

namespace {

audio::AudioClip tone(double freq, double seconds = 1.0, int rate = 16000, double amp = 0.5) {
  audio::AudioClip clip;
  clip.sample_rate = rate;
  const std::size_t n = static_cast<std::size_t>(seconds * rate);
  clip.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    clip.samples[i] = amp * std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(i) / rate);
  return clip;
}

audio::AudioClip noise_clip(std::uint64_t seed, double seconds = 1.0, int rate = 16000) {
  audio::AudioClip clip;
  clip.sample_rate = rate;
  rng::Engine eng(seed);
  clip.samples.resize(static_cast<std::size_t>(seconds * rate));
  for (auto& v : clip.samples) v = rng::unit(eng) * 1.6 - 0.8;
  return clip;
}

}  // namespace

TEST_CASE("wav round-trip is sample-exact at 16-bit resolution") {
  audio::AudioClip clip = noise_clip(3);
  auto bytes = audio::write_wav(clip);
  audio::AudioClip back = audio::read_wav(bytes);
  CHECK(back.sample_rate == clip.sample_rate);
  REQUIRE(back.samples.size() == clip.samples.size());
  // Half an LSB in the interior; a full LSB only at +1.0, which the 16-bit
  // grid cannot represent.
  for (std::size_t i = 0; i < clip.samples.size(); ++i)
    CHECK(std::abs(back.samples[i] - clip.samples[i]) <= 1.0 / 32768.0);
  // A second round trip is bit-stable: quantization has already happened.
  audio::AudioClip again = audio::read_wav(audio::write_wav(back));
  for (std::size_t i = 0; i < back.samples.size(); ++i)
    CHECK(again.samples[i] == back.samples[i]);
}

TEST_CASE("wav file round-trip") {
  const std::filesystem::path path =
      std::filesystem::temp_directory_path() / "vvv_test_audio_roundtrip.wav";
  audio::AudioClip clip = tone(440.0, 0.25);
  audio::write_wav_file(clip, path);
  audio::AudioClip back = audio::read_wav_file(path);
  CHECK(back.sample_rate == clip.sample_rate);
  CHECK(back.samples.size() == clip.samples.size());
  std::filesystem::remove(path);
}

TEST_CASE("wav failure classes are distinct") {
  audio::AudioClip clip = tone(300.0, 0.05);
  const std::vector<std::uint8_t> good = audio::write_wav(clip);

  SUBCASE("garbage header") {
    std::vector<std::uint8_t> bad = good;
    bad[0] = 'X';
    try {
      audio::read_wav(bad);
      FAIL("expected WavError");
    } catch (const WavError& e) {
      CHECK(e.kind() == WavError::Kind::MalformedHeader);
    }
  }
  SUBCASE("too small to be a container") {
    std::vector<std::uint8_t> bad(good.begin(), good.begin() + 8);
    try {
      audio::read_wav(bad);
      FAIL("expected WavError");
    } catch (const WavError& e) {
      CHECK(e.kind() == WavError::Kind::MalformedHeader);
    }
  }
  SUBCASE("non-PCM format tag") {
    std::vector<std::uint8_t> bad = good;
    bad[20] = 3;  // fmt chunk format tag
    try {
      audio::read_wav(bad);
      FAIL("expected WavError");
    } catch (const WavError& e) {
      CHECK(e.kind() == WavError::Kind::UnsupportedEncoding);
    }
  }
  SUBCASE("stereo") {
    std::vector<std::uint8_t> bad = good;
    bad[22] = 2;  // channel count
    try {
      audio::read_wav(bad);
      FAIL("expected WavError");
    } catch (const WavError& e) {
      CHECK(e.kind() == WavError::Kind::UnsupportedEncoding);
    }
  }
  SUBCASE("truncated data chunk") {
    std::vector<std::uint8_t> bad = good;
    bad.resize(bad.size() - 31);  // cut into the samples mid-way
    try {
      audio::read_wav(bad);
      FAIL("expected WavError");
    } catch (const WavError& e) {
      CHECK(e.kind() == WavError::Kind::TruncatedData);
    }
  }
}

TEST_CASE("frame count follows the 25/10 ms grid") {
  audio::MfccConfig cfg;
  const int rate = 16000;
  const std::size_t frame_len = 400;  // 25 ms at 16 kHz
  const std::size_t shift = 160;      // 10 ms

  for (std::size_t extra : {std::size_t{0}, std::size_t{1}, std::size_t{159}, std::size_t{160}}) {
    audio::AudioClip clip = tone(200.0, 0.05, rate);
    clip.samples.resize(frame_len + 3 * shift + extra, 0.1);
    auto f = audio::compute_mfcc(clip, cfg);
    CHECK(f.frames.size() == 4 + extra / shift);  // (len - L) / S + 1
    CHECK(f.dim == cfg.feature_dim());
  }
}

TEST_CASE("clips shorter than two frames are rejected") {
  audio::MfccConfig cfg;
  audio::AudioClip clip = tone(200.0, 0.05);
  clip.samples.resize(420);  // one full frame plus a bit
  CHECK_THROWS_AS(audio::compute_mfcc(clip, cfg), ValueError);
}

TEST_CASE("mfcc is deterministic") {
  audio::MfccConfig cfg;
  audio::AudioClip clip = noise_clip(77);
  auto a = audio::compute_mfcc(clip, cfg);
  auto b = audio::compute_mfcc(clip, cfg);
  REQUIRE(a.frames.size() == b.frames.size());
  for (std::size_t i = 0; i < a.frames.size(); ++i)
    for (std::size_t j = 0; j < a.dim; ++j) CHECK(a.frames[i][j] == b.frames[i][j]);
}

TEST_CASE("pure tones put their energy in the right mel filters") {
  audio::MfccConfig cfg;
  const int rate = 16000;
  const std::size_t nfft = 512;
  auto fb = dsp::mel_filterbank(cfg.num_mel_filters, nfft, rate, 0.0, rate / 2.0);

  for (double freq : {300.0, 1000.0, 3000.0}) {
    // Which filter should win, judged directly from the filterbank weights.
    std::size_t want = 0;
    double best = -1.0;
    for (std::size_t f = 0; f < fb.size(); ++f) {
      const double hz_per_bin = static_cast<double>(rate) / static_cast<double>(nfft);
      const double w = fb[f][static_cast<std::size_t>(std::round(freq / hz_per_bin))];
      if (w > best) {
        best = w;
        want = f;
      }
    }
    auto energies = audio::compute_mel_energies(tone(freq), cfg);
    REQUIRE(!energies.empty());
    const auto& row = energies[energies.size() / 2];
    const std::size_t got =
        static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    // The winning filter is the predicted one or its immediate neighbour
    // (pre-emphasis tilts the spectrum slightly).
    CHECK(std::abs(static_cast<long>(got) - static_cast<long>(want)) <= 1);
  }
}

TEST_CASE("log energy column tracks amplitude") {
  audio::MfccConfig cfg;
  REQUIRE(cfg.include_log_energy);
  auto loud = audio::compute_mfcc(tone(500.0, 0.5, 16000, 0.6), cfg);
  auto quiet = audio::compute_mfcc(tone(500.0, 0.5, 16000, 0.06), cfg);
  const std::size_t e = loud.dim - 1;
  double loud_mean = 0.0, quiet_mean = 0.0;
  for (const auto& f : loud.frames) loud_mean += f[e];
  for (const auto& f : quiet.frames) quiet_mean += f[e];
  loud_mean /= static_cast<double>(loud.frames.size());
  quiet_mean /= static_cast<double>(quiet.frames.size());
  CHECK(loud_mean > quiet_mean);
  // 20x amplitude = 400x energy: log should move by about log(400).
  CHECK(loud_mean - quiet_mean == doctest::Approx(std::log(100.0)).epsilon(0.2));

  audio::MfccConfig no_energy = cfg;
  no_energy.include_log_energy = false;
  auto plain = audio::compute_mfcc(tone(500.0, 0.5), no_energy);
  CHECK(plain.dim == loud.dim - 1);
}

TEST_CASE("silence hits the log floor instead of -inf") {
  audio::MfccConfig cfg;
  audio::AudioClip clip;
  clip.sample_rate = 16000;
  clip.samples.assign(16000, 0.0);
  auto f = audio::compute_mfcc(clip, cfg);
  for (const auto& frame : f.frames)
    for (double v : frame) CHECK(std::isfinite(v));
}

TEST_CASE("validate rejects out-of-range samples and low rates") {
  audio::AudioClip clip = tone(200.0, 0.1);
  CHECK_NOTHROW(audio::validate(clip));
  clip.samples[5] = 1.5;
  CHECK_THROWS_AS(audio::validate(clip), ValueError);
  clip.samples[5] = 0.0;
  clip.sample_rate = 4000;
  CHECK_THROWS_AS(audio::validate(clip), ValueError);
}

TEST_CASE("concat stacks frames and checks dims") {
  audio::MfccConfig cfg;
  auto a = audio::compute_mfcc(tone(400.0, 0.2), cfg);
  auto b = audio::compute_mfcc(tone(800.0, 0.3), cfg);
  std::vector<audio::FeatureMatrix> parts = {a, b};
  auto all = audio::concat(parts);
  CHECK(all.frames.size() == a.frames.size() + b.frames.size());
  CHECK(all.dim == a.dim);
  CHECK(all.frames.front() == a.frames.front());
  CHECK(all.frames.back() == b.frames.back());

  audio::FeatureMatrix odd = b;
  odd.dim += 1;
  for (auto& fr : odd.frames) fr.push_back(0.0);
  std::vector<audio::FeatureMatrix> bad = {a, odd};
  CHECK_THROWS_AS(audio::concat(bad), ValueError);
}
