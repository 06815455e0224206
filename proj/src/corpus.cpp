#include "declip/corpus.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>

namespace declip {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

int pick(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

double midi_to_hz(double m) { return 440.0 * std::pow(2.0, (m - 69.0) / 12.0); }

void normalize_peak(Signal& s, double peak) {
  const double m = s.size() ? s.cwiseAbs().maxCoeff() : 0.0;
  if (m > 0.0) s *= peak / m;
}

// Two-pole resonator with unit gain at its centre frequency.
struct Resonator {
  double y1 = 0.0, y2 = 0.0;
  double step(double x, double freq, double bandwidth, int rate) {
    const double r = std::exp(-std::numbers::pi * bandwidth / rate);
    const double a1 = 2.0 * r * std::cos(kTwoPi * freq / rate);
    const double a2 = -r * r;
    const double y = (1.0 - r) * x + a1 * y1 + a2 * y2;
    y2 = y1;
    y1 = y;
    return y;
  }
};

}  // namespace

CorpusKind corpus_kind_from_string(const std::string& s) {
  if (s == "music") return CorpusKind::Music;
  if (s == "speech") return CorpusKind::Speech;
  throw std::invalid_argument("unknown corpus kind '" + s + "' (expected music or speech)");
}

Signal synth_music(double seconds, int sample_rate, Rng& rng) {
  const auto n = static_cast<Eigen::Index>(std::llround(seconds * sample_rate));
  Signal out = Signal::Zero(n);
  static constexpr std::array<int, 7> kMajor{0, 2, 4, 5, 7, 9, 11};
  static constexpr std::array<int, 7> kMinor{0, 2, 3, 5, 7, 8, 10};
  const auto& scale = pick(rng, 0, 1) ? kMajor : kMinor;
  const int root = pick(rng, 45, 57);
  const double beat = uniform(rng, 0.35, 0.8);
  const double nyquist = 0.5 * sample_rate;

  const int voices = pick(rng, 2, 3);
  for (int v = 0; v < voices; ++v) {
    const int octave = v == 0 ? -12 : (v == 1 ? 0 : 12);
    const bool bowed = pick(rng, 0, 2) == 0;
    const double voice_gain = v == 0 ? 0.8 : uniform(rng, 0.4, 1.0);
    int degree = pick(rng, 0, 6);
    double t = 0.0;
    while (t < seconds) {
      static constexpr std::array<double, 4> kLengths{0.5, 1.0, 1.0, 2.0};
      const double dur = beat * kLengths[static_cast<std::size_t>(pick(rng, 0, 3))];
      degree = std::clamp(degree + pick(rng, -2, 2), -3, 10);
      const int octave_shift = degree < 0 ? -12 : (degree >= 7 ? 12 : 0);
      const int semis = scale[static_cast<std::size_t>((degree % 7 + 7) % 7)];
      const double f0 = midi_to_hz(root + octave + octave_shift + semis);
      const double amp = voice_gain * uniform(rng, 0.3, 1.0);
      const bool rest = pick(rng, 0, 7) == 0;

      const double decay = uniform(rng, 1.5, 6.0);
      const double vib_rate = uniform(rng, 4.5, 6.5);
      const double vib_depth = bowed ? 0.004 : 0.0;
      const int partials = pick(rng, 4, 8);
      const auto start = static_cast<Eigen::Index>(t * sample_rate);
      const auto stop = std::min<Eigen::Index>(n, static_cast<Eigen::Index>((t + dur * 1.3) * sample_rate));
      if (!rest) {
        std::vector<double> phase(static_cast<std::size_t>(partials), 0.0);
        for (int k = 0; k < partials; ++k) phase[static_cast<std::size_t>(k)] = uniform(rng, 0.0, kTwoPi);
        for (Eigen::Index i = start; i < stop; ++i) {
          const double tau = static_cast<double>(i - start) / sample_rate;
          double env;
          if (bowed) {
            const double release = std::max(0.0, tau - dur);
            env = (1.0 - std::exp(-tau / 0.06)) * std::exp(-release / 0.05);
          } else {
            env = (1.0 - std::exp(-tau / 0.003)) * std::exp(-decay * tau);
          }
          const double f = f0 * (1.0 + vib_depth * std::sin(kTwoPi * vib_rate * tau));
          double s = 0.0;
          for (int k = 1; k <= partials; ++k) {
            if (f * k >= nyquist * 0.9) break;
            auto& ph = phase[static_cast<std::size_t>(k - 1)];
            ph += kTwoPi * f * k / sample_rate;
            s += std::sin(ph) / std::pow(k, bowed ? 1.0 : 1.6);
          }
          out[i] += amp * env * s;
        }
      }
      t += dur;
    }
  }

  // Phrase-level dynamics.
  const double swell = uniform(rng, 0.1, 0.4);
  const double swell_phase = uniform(rng, 0.0, kTwoPi);
  for (Eigen::Index i = 0; i < n; ++i) {
    out[i] *= 0.55 + 0.45 * std::sin(kTwoPi * swell * i / sample_rate + swell_phase);
  }
  normalize_peak(out, 0.9);
  return out;
}

Signal synth_speech(double seconds, int sample_rate, Rng& rng) {
  struct Vowel {
    double f1, f2, f3;
  };
  static constexpr std::array<Vowel, 6> kVowels{{{730, 1090, 2440},
                                                 {270, 2290, 3010},
                                                 {300, 870, 2240},
                                                 {530, 1840, 2480},
                                                 {570, 840, 2410},
                                                 {660, 1720, 2410}}};
  const auto n = static_cast<Eigen::Index>(std::llround(seconds * sample_rate));
  Signal out = Signal::Zero(n);
  const double base_f0 = uniform(rng, 95.0, 230.0);
  const double limit = 0.45 * sample_rate;

  std::array<Resonator, 3> formants;
  Vowel current = kVowels[static_cast<std::size_t>(pick(rng, 0, 5))];
  double next_pulse = 0.0;
  double tilt = 0.0;
  std::normal_distribution<double> noise;

  Eigen::Index i = 0;
  while (i < n) {
    // Pause between phrases.
    if (pick(rng, 0, 5) == 0) i += static_cast<Eigen::Index>(uniform(rng, 0.05, 0.3) * sample_rate);
    // Fricative onset: differentiated white noise.
    if (pick(rng, 0, 2) == 0) {
      const auto len = static_cast<Eigen::Index>(uniform(rng, 0.03, 0.1) * sample_rate);
      const double amp = uniform(rng, 0.05, 0.2);
      double prev = 0.0;
      for (Eigen::Index j = 0; j < len && i < n; ++j, ++i) {
        const double w = noise(rng);
        const double env = std::sin(std::numbers::pi * static_cast<double>(j) / static_cast<double>(len));
        out[i] += amp * env * (w - prev);
        prev = w;
      }
    }
    const Vowel target = kVowels[static_cast<std::size_t>(pick(rng, 0, 5))];
    const auto len = static_cast<Eigen::Index>(uniform(rng, 0.12, 0.35) * sample_rate);
    const double accent = uniform(rng, 0.9, 1.3);
    const double loud = uniform(rng, 0.4, 1.0);
    for (Eigen::Index j = 0; j < len && i < n; ++j, ++i) {
      const double frac = static_cast<double>(j) / static_cast<double>(len);
      const double glide = std::min(1.0, frac * 3.0);
      const Vowel v{current.f1 + glide * (target.f1 - current.f1), current.f2 + glide * (target.f2 - current.f2),
                    current.f3 + glide * (target.f3 - current.f3)};
      const double f0 = base_f0 * accent * (1.0 - 0.15 * frac) * (1.0 + 0.01 * noise(rng));
      double source = 0.0;
      if (static_cast<double>(i) >= next_pulse) {
        source = 1.0;
        next_pulse = static_cast<double>(i) + sample_rate / f0;
      }
      tilt = 0.9 * tilt + source;
      const double env = std::pow(std::sin(std::numbers::pi * frac), 0.6) * loud;
      double s = 0.0;
      const std::array<double, 3> freq{v.f1, v.f2, v.f3};
      const std::array<double, 3> gain{1.0, 0.6, 0.3};
      for (std::size_t k = 0; k < 3; ++k) {
        if (freq[k] < limit) s += gain[k] * formants[k].step(tilt, freq[k], 80.0 + 40.0 * k, sample_rate);
      }
      out[i] += env * s;
    }
    current = target;
  }
  normalize_peak(out, 0.9);
  return out;
}

std::vector<std::filesystem::path> write_corpus(CorpusKind kind, const std::filesystem::path& dir,
                                                const std::string& prefix, int files, double seconds,
                                                int sample_rate, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  Rng rng(seed);
  std::vector<std::filesystem::path> paths;
  for (int f = 0; f < files; ++f) {
    const Signal s = kind == CorpusKind::Music ? synth_music(seconds, sample_rate, rng) : synth_speech(seconds, sample_rate, rng);
    char name[64];
    std::snprintf(name, sizeof(name), "%s_%03d.wav", prefix.c_str(), f);
    paths.push_back(dir / name);
    write_wav(paths.back(), s, sample_rate);
  }
  return paths;
}

}  // namespace declip
