#include "declip/data.hpp"

#include "declip/binio.hpp"
#include "declip/text.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

namespace declip {

std::vector<Item> Dataset::subset(Split split) const {
  std::vector<Item> out;
  std::copy_if(items.begin(), items.end(), std::back_inserter(out), [split](const Item& it) { return it.split == split; });
  return out;
}

std::size_t Dataset::count(Split split) const {
  return static_cast<std::size_t>(
      std::count_if(items.begin(), items.end(), [split](const Item& it) { return it.split == split; }));
}

void Dataset::strip_ground_truth(Split split) {
  for (Item& it : items) {
    if (it.split == split) it.x.reset();
  }
}

// ---- synthetic -----------------------------------------------------------------

void SyntheticSpec::validate() const {
  if (ambient_dim < 1) throw std::invalid_argument("ambient_dim must be positive");
  if (subspace_dim < 1 || subspace_dim > ambient_dim) throw std::invalid_argument("subspace_dim must lie in [1, ambient_dim]");
  if (num_signals < 1) throw std::invalid_argument("num_signals must be positive");
  if (!(clip_proportion > 0.0 && clip_proportion < 1.0)) throw std::invalid_argument("clip proportion must lie in (0, 1)");
  if (!(mu > 0.0)) throw std::invalid_argument("mu must be positive");
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw std::invalid_argument("test_fraction must lie in [0, 1)");
}

std::string SyntheticSpec::describe() const {
  std::ostringstream os;
  os << "synthetic n=" << ambient_dim << " d=" << subspace_dim << " count=" << num_signals
     << " v=" << format_real(clip_proportion) << " mu=" << format_real(mu) << " test_fraction=" << format_real(test_fraction)
     << " seed=" << seed;
  return os.str();
}

Eigen::MatrixXd gen_subspace(Eigen::Index d, Eigen::Index n, Rng& rng) {
  if (d < 1 || d > n) throw std::invalid_argument("gen_subspace: need 1 <= d <= n");
  std::normal_distribution<double> normal;
  for (int attempt = 0; attempt < 2; ++attempt) {
    Eigen::MatrixXd basis(n, d);
    for (Eigen::Index j = 0; j < d; ++j) {
      for (Eigen::Index i = 0; i < n; ++i) basis(i, j) = normal(rng);
    }
    const Eigen::VectorXd sv = Eigen::JacobiSVD<Eigen::MatrixXd>(basis).singularValues();
    if (sv.minCoeff() > 1e-8) return basis;
  }
  throw std::runtime_error("gen_subspace: rank-deficient basis drawn twice");
}

Signal sample_signal(const Eigen::MatrixXd& basis, Rng& rng) {
  std::normal_distribution<double> normal;
  Eigen::VectorXd c(basis.cols());
  for (Eigen::Index j = 0; j < c.size(); ++j) c[j] = normal(rng);
  return basis * c;
}

Rescaled rescale_for_proportion(const Signal& x, double v, double mu) {
  if (!(v > 0.0 && v < 1.0)) throw std::invalid_argument("rescale_for_proportion: v must lie in (0, 1)");
  const Eigen::Index n = x.size();
  const auto k = static_cast<Eigen::Index>(std::llround(v * static_cast<double>(n)));
  if (k == 0) throw std::invalid_argument("rescale_for_proportion: v too small for signal length (no sample clipped)");

  std::vector<double> mags(x.data(), x.data() + n);
  for (double& m : mags) m = std::abs(m);
  std::nth_element(mags.begin(), mags.begin() + (k - 1), mags.end(), std::greater<>());
  const double kth = mags[static_cast<std::size_t>(k - 1)];
  if (!(kth > 0.0)) throw std::invalid_argument("rescale_for_proportion: signal has fewer than k nonzero samples");

  // q * kth must land on or above mu despite rounding.
  double q = mu / kth;
  while (q * kth < mu) q = std::nextafter(q, std::numeric_limits<double>::infinity());

  Rescaled out;
  out.q = q;
  out.x = q * x;
  out.target_count = k;
  const auto hits = (out.x.array().abs() >= mu).count();
  out.achieved_proportion = static_cast<double>(hits) / static_cast<double>(n);
  return out;
}

Dataset make_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const Eigen::MatrixXd basis = gen_subspace(spec.subspace_dim, spec.ambient_dim, rng);
  const auto test_count = static_cast<Eigen::Index>(std::llround(spec.test_fraction * static_cast<double>(spec.num_signals)));

  Dataset ds;
  ds.clip.mu = spec.mu;
  ds.description = spec.describe();
  ds.items.reserve(static_cast<std::size_t>(spec.num_signals));
  for (Eigen::Index i = 0; i < spec.num_signals; ++i) {
    Signal raw = sample_signal(basis, rng);
    Rescaled r = rescale_for_proportion(raw, spec.clip_proportion, spec.mu);
    Item it;
    it.y = clip(r.x, spec.mu);
    it.x = std::move(r.x);
    std::ostringstream meta;
    meta << "synthetic#" << i << " q=" << format_real(r.q);
    it.meta = meta.str();
    it.split = i >= spec.num_signals - test_count ? Split::Test : Split::Train;
    ds.items.push_back(std::move(it));
  }
  return ds;
}

// ---- WAV ---------------------------------------------------------------------

namespace {

template <typename T>
T read_le(const std::string& buf, std::size_t pos) {
  T v;
  std::memcpy(&v, buf.data() + pos, sizeof(T));
  return v;
}

template <typename T>
void put_le(std::string& buf, T v) {
  buf.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

}  // namespace

AudioClip load_audio(const std::filesystem::path& path) {
  const std::string where = path.string();
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error(where + ": cannot open audio file");
  const std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < 12 || buf.compare(0, 4, "RIFF") != 0 || buf.compare(8, 4, "WAVE") != 0) {
    throw std::runtime_error(where + ": not a RIFF/WAVE file");
  }

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::size_t data_pos = 0, data_len = 0;
  bool have_fmt = false, have_data = false;
  for (std::size_t pos = 12; pos + 8 <= buf.size();) {
    const std::string id = buf.substr(pos, 4);
    const auto len = static_cast<std::size_t>(read_le<std::uint32_t>(buf, pos + 4));
    const std::size_t body = pos + 8;
    if (id == "fmt ") {
      if (len < 16 || body + 16 > buf.size()) throw std::runtime_error(where + ": malformed fmt chunk");
      format = read_le<std::uint16_t>(buf, body);
      channels = read_le<std::uint16_t>(buf, body + 2);
      rate = read_le<std::uint32_t>(buf, body + 4);
      bits = read_le<std::uint16_t>(buf, body + 14);
      if (format == 0xFFFE && len >= 26 && body + 26 <= buf.size()) format = read_le<std::uint16_t>(buf, body + 24);
      have_fmt = true;
    } else if (id == "data") {
      data_pos = body;
      data_len = std::min(len, buf.size() - body);
      have_data = true;
    }
    pos = body + len + (len & 1);
  }
  if (!have_fmt || !have_data) throw std::runtime_error(where + ": missing fmt or data chunk");
  if (channels < 1 || channels > 2) throw std::runtime_error(where + ": unsupported channel count " + std::to_string(channels));
  const bool pcm16 = format == 1 && bits == 16;
  const bool float32 = format == 3 && bits == 32;
  if (!pcm16 && !float32) {
    throw std::runtime_error(where + ": unsupported sample format (need 16-bit PCM or 32-bit float), got format " +
                             std::to_string(format) + " with " + std::to_string(bits) + " bits");
  }

  const std::size_t frame = static_cast<std::size_t>(channels) * (bits / 8);
  const auto frames = static_cast<Eigen::Index>(data_len / frame);
  AudioClip clip;
  clip.sample_rate = static_cast<int>(rate);
  clip.samples.resize(frames);
  for (Eigen::Index i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (std::uint16_t c = 0; c < channels; ++c) {
      const std::size_t at = data_pos + static_cast<std::size_t>(i) * frame + c * (bits / 8);
      acc += pcm16 ? read_le<std::int16_t>(buf, at) / 32768.0 : static_cast<double>(read_le<float>(buf, at));
    }
    clip.samples[i] = std::clamp(acc / channels, -1.0, 1.0);
  }
  return clip;
}

void write_wav(const std::filesystem::path& path, const Signal& samples, int sample_rate, WavFormat format) {
  const bool pcm16 = format == WavFormat::Pcm16;
  const std::uint16_t bits = pcm16 ? 16 : 32;
  const auto data_len = static_cast<std::uint32_t>(samples.size() * (bits / 8));
  std::string buf;
  buf.append("RIFF");
  put_le<std::uint32_t>(buf, 36 + data_len);
  buf.append("WAVEfmt ");
  put_le<std::uint32_t>(buf, 16);
  put_le<std::uint16_t>(buf, pcm16 ? 1 : 3);
  put_le<std::uint16_t>(buf, 1);
  put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(sample_rate));
  put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(sample_rate) * (bits / 8));
  put_le<std::uint16_t>(buf, bits / 8);
  put_le<std::uint16_t>(buf, bits);
  buf.append("data");
  put_le<std::uint32_t>(buf, data_len);
  for (double s : samples) {
    if (pcm16) {
      put_le<std::int16_t>(buf, static_cast<std::int16_t>(std::clamp(std::lround(s * 32768.0), -32768L, 32767L)));
    } else {
      put_le<float>(buf, static_cast<float>(s));
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error(path.string() + ": cannot open for writing");
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw std::runtime_error(path.string() + ": write failed");
}

// ---- audio datasets --------------------------------------------------------------

Eigen::Index AudioSpec::window_length() const {
  return static_cast<Eigen::Index>(std::llround(sample_rate * window_seconds));
}

void AudioSpec::validate() const {
  if (sample_rate < 1) throw std::invalid_argument("sample_rate must be positive");
  if (window_length() < 1) throw std::invalid_argument("window must contain at least one sample");
  if (!(mu > 0.0)) throw std::invalid_argument("mu must be positive");
}

Signal prepare_audio(const AudioClip& clip, const AudioSpec& spec) {
  Signal s = clip.samples;
  if (clip.sample_rate != spec.sample_rate) {
    if (clip.sample_rate < spec.sample_rate || clip.sample_rate % spec.sample_rate != 0) {
      throw std::runtime_error("cannot bring " + std::to_string(clip.sample_rate) + " Hz audio to " +
                               std::to_string(spec.sample_rate) + " Hz by integer decimation");
    }
    const Eigen::Index factor = clip.sample_rate / spec.sample_rate;
    Signal d(s.size() / factor);
    for (Eigen::Index i = 0; i < d.size(); ++i) d[i] = s.segment(i * factor, factor).mean();
    s = std::move(d);
  }
  if (spec.normalize) {
    const double peak = s.size() ? s.cwiseAbs().maxCoeff() : 0.0;
    if (peak > 0.0) s /= peak;
  }
  return s;
}

std::vector<Window> window_and_clip(const Signal& signal, const AudioSpec& spec) {
  spec.validate();
  const Eigen::Index len = spec.window_length();
  std::vector<Window> out;
  for (Eigen::Index start = 0; start + len <= signal.size(); start += len) {
    Window w;
    w.x = signal.segment(start, len);
    w.y = clip(w.x, spec.mu);
    out.push_back(std::move(w));
  }
  return out;
}

std::vector<Item> filter_saturated(std::vector<Item> items, const ClipConfig& cfg) {
  std::erase_if(items, [&](const Item& it) { return !saturation_mask(it.y, cfg).any(); });
  return items;
}

Dataset make_audio_dataset(const std::vector<std::filesystem::path>& train_files,
                           const std::vector<std::filesystem::path>& test_files, const AudioSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.clip.mu = spec.mu;
  std::ostringstream desc;
  desc << "audio rate=" << spec.sample_rate << " window=" << format_real(spec.window_seconds) << "s mu=" << format_real(spec.mu)
       << " normalize=" << spec.normalize << " train_files=" << train_files.size() << " test_files=" << test_files.size();
  ds.description = desc.str();

  auto ingest = [&](const std::vector<std::filesystem::path>& files, Split split) {
    std::vector<Item> items;
    for (const auto& path : files) {
      const Signal s = prepare_audio(load_audio(path), spec);
      const auto windows = window_and_clip(s, spec);
      for (std::size_t w = 0; w < windows.size(); ++w) {
        Item it;
        it.x = windows[w].x;
        it.y = windows[w].y;
        it.meta = path.filename().string() + "#" + std::to_string(w);
        it.split = split;
        items.push_back(std::move(it));
      }
    }
    for (Item& it : filter_saturated(std::move(items), ds.clip)) ds.items.push_back(std::move(it));
  };
  ingest(train_files, Split::Train);
  ingest(test_files, Split::Test);
  return ds;
}

// ---- persistence ---------------------------------------------------------------

namespace {
constexpr std::string_view kDatasetMagic = "DCLPDSET";
constexpr std::uint32_t kDatasetVersion = 1;
}  // namespace

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  BinaryWriter w(kDatasetMagic, kDatasetVersion);
  w.f64(dataset.clip.mu);
  w.f64(dataset.clip.eps_sat);
  w.str(dataset.description);
  w.u64(dataset.items.size());
  for (const Item& it : dataset.items) {
    w.u8(static_cast<std::uint8_t>(it.split));
    w.u8(it.x.has_value());
    if (it.x) w.reals(*it.x);
    w.reals(it.y);
    w.str(it.meta);
  }
  w.save(path);
}

Dataset load_dataset(const std::filesystem::path& path) {
  BinaryReader r(path, kDatasetMagic);
  if (r.version() != kDatasetVersion) {
    throw FormatError(path.string() + ": dataset version " + std::to_string(r.version()) + " unsupported (expected " +
                      std::to_string(kDatasetVersion) + ")");
  }
  Dataset ds;
  ds.clip.mu = r.f64();
  ds.clip.eps_sat = r.f64();
  ds.description = r.str();
  const std::uint64_t n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    Item it;
    const std::uint8_t split = r.u8();
    if (split > 1) throw FormatError(path.string() + ": bad split tag");
    it.split = static_cast<Split>(split);
    if (r.u8()) it.x = r.reals();
    it.y = r.reals();
    it.meta = r.str();
    ds.items.push_back(std::move(it));
  }
  if (!r.at_end()) throw FormatError(path.string() + ": trailing bytes in dataset");
  return ds;
}

void export_csv(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error(path.string() + ": cannot open for writing");
  f.precision(17);
  f << "# " << dataset.description << " eps_sat=" << format_real(dataset.clip.eps_sat) << '\n';
  f << "split,index,kind,values...\n";
  for (std::size_t i = 0; i < dataset.items.size(); ++i) {
    const Item& it = dataset.items[i];
    const char* split = it.split == Split::Train ? "train" : "test";
    auto row = [&](const char* kind, const Signal& s) {
      f << split << ',' << i << ',' << kind;
      for (double v : s) f << ',' << v;
      f << '\n';
    };
    if (it.x) row("x", *it.x);
    row("y", it.y);
  }
}

}  // namespace declip
