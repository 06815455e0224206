#include "declip/models.hpp"

#include <cmath>
#include <functional>
#include <random>
#include <sstream>

namespace declip {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

using Lookup = std::function<Var(const std::string&)>;

Index level_channels(const Unet1dArch& a, int level) { return a.base_channels << level; }

// (name, shape) of every weight, in construction order.
std::vector<std::pair<std::string, Shape>> weight_layout(const Arch& arch) {
  std::vector<std::pair<std::string, Shape>> out;
  std::visit(overloaded{
      [&](const MlpArch& a) {
        Index prev = a.input_dim * a.in_channels;
        for (std::size_t i = 0; i < a.hidden_dims.size(); ++i) {
          out.push_back({"fc" + std::to_string(i) + ".weight", {a.hidden_dims[i], prev}});
          prev = a.hidden_dims[i];
        }
        out.push_back({"fc" + std::to_string(a.hidden_dims.size()) + ".weight", {a.input_dim, prev}});
      },
      [&](const Unet1dArch& a) {
        const Index k = a.kernel_size;
        Index prev = a.in_channels;
        for (int i = 0; i < a.depth; ++i) {
          const Index c = level_channels(a, i);
          const std::string p = "enc" + std::to_string(i);
          out.push_back({p + ".conv0.weight", {c, prev, k}});
          out.push_back({p + ".conv1.weight", {c, c, k}});
          prev = c;
        }
        const Index cb = level_channels(a, a.depth);
        out.push_back({"mid.conv0.weight", {cb, prev, k}});
        out.push_back({"mid.conv1.weight", {cb, cb, k}});
        prev = cb;
        for (int i = a.depth - 1; i >= 0; --i) {
          const Index c = level_channels(a, i);
          const std::string p = "dec" + std::to_string(i);
          out.push_back({p + ".up.weight", {c, prev, k}});
          out.push_back({p + ".conv0.weight", {c, 2 * c, k}});
          out.push_back({p + ".conv1.weight", {c, c, k}});
          prev = c;
        }
        out.push_back({"head.weight", {1, prev, 1}});
      }},
      arch);
  return out;
}

Var mlp_forward(const MlpArch& a, const Lookup& w, Var input) {
  const Index batch = input.shape()[0];
  Var h = reshape(input, {batch, a.in_channels * a.input_dim});
  for (std::size_t i = 0; i < a.hidden_dims.size(); ++i) {
    h = relu(matmul(h, w("fc" + std::to_string(i) + ".weight"), Transpose::Second));
  }
  h = matmul(h, w("fc" + std::to_string(a.hidden_dims.size()) + ".weight"), Transpose::Second);
  Var out = reshape(h, {batch, 1, a.input_dim});
  if (a.skip) out = out + slice_channels(input, 0, 1);
  return out;
}

Var unet_forward(const Unet1dArch& a, const Lookup& w, Var input) {
  const Index length = input.shape()[2];
  const Index block = Index{1} << a.depth;
  const Index padded = (length + block - 1) / block * block;
  const Conv1dOptions same{1, a.kernel_size / 2};

  auto conv_relu = [&](Var x, const std::string& name) { return relu(conv1d(x, w(name), same)); };

  Var h = padded == length ? input : pad_length(input, padded);
  std::vector<Var> skips;
  for (int i = 0; i < a.depth; ++i) {
    const std::string p = "enc" + std::to_string(i);
    h = conv_relu(conv_relu(h, p + ".conv0.weight"), p + ".conv1.weight");
    skips.push_back(h);
    h = max_pool1d(h);
  }
  h = conv_relu(conv_relu(h, "mid.conv0.weight"), "mid.conv1.weight");
  for (int i = a.depth - 1; i >= 0; --i) {
    const std::string p = "dec" + std::to_string(i);
    h = conv_relu(upsample_nearest(h), p + ".up.weight");
    h = concat_channels({skips[static_cast<std::size_t>(i)], h});
    h = conv_relu(conv_relu(h, p + ".conv0.weight"), p + ".conv1.weight");
  }
  Var out = conv1d(h, w("head.weight"));
  if (padded != length) out = crop_length(out, length);
  if (a.skip) out = out + slice_channels(input, 0, 1);
  return out;
}

Var run(const Arch& arch, const Lookup& w, Var input) {
  const Shape& s = input.shape();
  if (s.size() != 3 || s[1] != in_channels(arch)) {
    throw ShapeError("forward: input " + shape_str(s) + " does not match " + describe(arch));
  }
  if (const auto* mlp = std::get_if<MlpArch>(&arch)) {
    if (s[2] != mlp->input_dim) throw ShapeError("forward: input " + shape_str(s) + " does not match " + describe(arch));
    return mlp_forward(*mlp, w, input);
  }
  return unet_forward(std::get<Unet1dArch>(arch), w, input);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    if (!item.empty()) parts.push_back(item);
  }
  return parts;
}

}  // namespace

Index in_channels(const Arch& arch) {
  return std::visit([](const auto& a) { return a.in_channels; }, arch);
}

void validate(const Arch& arch) {
  std::visit(overloaded{
      [](const MlpArch& a) {
        if (a.input_dim < 1) throw std::invalid_argument("mlp: input_dim must be positive");
        for (Index h : a.hidden_dims) {
          if (h < 1) throw std::invalid_argument("mlp: hidden widths must be positive");
        }
        if (a.in_channels != 1 && a.in_channels != 2) throw std::invalid_argument("mlp: in_channels must be 1 or 2");
      },
      [](const Unet1dArch& a) {
        if (a.in_channels != 1 && a.in_channels != 2) throw std::invalid_argument("unet: in_channels must be 1 or 2");
        if (a.depth < 0 || a.depth > 12) throw std::invalid_argument("unet: depth must lie in [0, 12]");
        if (a.base_channels < 1) throw std::invalid_argument("unet: base_channels must be positive");
        if (a.kernel_size < 1 || a.kernel_size % 2 == 0) throw std::invalid_argument("unet: kernel_size must be odd");
      }},
      arch);
}

std::string describe(const Arch& arch) {
  std::ostringstream os;
  std::visit(overloaded{
      [&](const MlpArch& a) {
        os << "mlp input_dim=" << a.input_dim << " in_channels=" << a.in_channels << " hidden=";
        for (std::size_t i = 0; i < a.hidden_dims.size(); ++i) os << (i ? "," : "") << a.hidden_dims[i];
        if (a.hidden_dims.empty()) os << "none";
        os << " skip=" << a.skip;
      },
      [&](const Unet1dArch& a) {
        os << "unet in_channels=" << a.in_channels << " depth=" << a.depth << " base_channels=" << a.base_channels
           << " kernel_size=" << a.kernel_size << " skip=" << a.skip;
      }},
      arch);
  return os.str();
}

Arch parse_arch(const std::string& text) {
  const auto tokens = split(text, ' ');
  if (tokens.empty()) throw std::invalid_argument("empty architecture descriptor");
  auto value_of = [&](const std::string& key) -> std::string {
    for (std::size_t i = 1; i < tokens.size(); ++i) {
      const auto eq = tokens[i].find('=');
      if (eq != std::string::npos && tokens[i].substr(0, eq) == key) return tokens[i].substr(eq + 1);
    }
    throw std::invalid_argument("architecture descriptor missing '" + key + "': " + text);
  };
  Arch arch;
  if (tokens[0] == "mlp") {
    MlpArch a;
    a.input_dim = std::stoll(value_of("input_dim"));
    a.in_channels = std::stoll(value_of("in_channels"));
    a.hidden_dims.clear();
    const std::string hidden = value_of("hidden");
    if (hidden != "none") {
      for (const auto& h : split(hidden, ',')) a.hidden_dims.push_back(std::stoll(h));
    }
    a.skip = value_of("skip") == "1";
    arch = a;
  } else if (tokens[0] == "unet") {
    Unet1dArch a;
    a.in_channels = std::stoll(value_of("in_channels"));
    a.depth = std::stoi(value_of("depth"));
    a.base_channels = std::stoll(value_of("base_channels"));
    a.kernel_size = std::stoll(value_of("kernel_size"));
    a.skip = value_of("skip") == "1";
    arch = a;
  } else {
    throw std::invalid_argument("unknown architecture '" + tokens[0] + "'");
  }
  validate(arch);
  return arch;
}

ParamStore init_params(const Arch& arch, std::uint64_t seed) {
  validate(arch);
  std::mt19937_64 rng(seed);
  ParamStore params;
  for (auto& [name, shape] : weight_layout(arch)) {
    Index fan_in = 1;
    for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor t = Tensor::zeros(shape, true);
    for (Index i = 0; i < t.size(); ++i) t.values[i] = dist(rng);
    params.insert(name, std::move(t));
  }
  return params;
}

Var forward(Graph& graph, ParamStore& params, const Arch& arch, Var input) {
  std::map<std::string, Var> bound;
  Lookup lookup = [&](const std::string& name) {
    auto it = bound.find(name);
    if (it == bound.end()) it = bound.emplace(name, graph.parameter(params.at(name))).first;
    return it->second;
  };
  return run(arch, lookup, input);
}

Tensor predict(const ParamStore& params, const Arch& arch, const Tensor& input) {
  Graph graph;
  Lookup lookup = [&](const std::string& name) { return graph.constant(params.at(name)); };
  return run(arch, lookup, graph.constant(input)).value();
}

Tensor assemble_input(const Signal& y, const Mask& saturated, bool use_mask) {
  const Index n = y.size();
  if (saturated.size() != n) {
    throw ShapeError("assemble_input: mask length " + std::to_string(saturated.size()) +
                     " does not match signal length " + std::to_string(n));
  }
  if (!use_mask) return Tensor({1, 1, n}, y);
  Eigen::VectorXd v(2 * n);
  v.head(n) = y;
  v.tail(n) = (!saturated).cast<double>().matrix();
  return Tensor({1, 2, n}, std::move(v));
}

Tensor assemble_batch(std::span<const Signal> ys, const ClipConfig& cfg, bool use_mask) {
  if (ys.empty()) throw ShapeError("assemble_batch: empty batch");
  const Index n = ys[0].size();
  const Index c = use_mask ? 2 : 1;
  const Index batch = static_cast<Index>(ys.size());
  Eigen::VectorXd v(batch * c * n);
  for (Index b = 0; b < batch; ++b) {
    const Signal& y = ys[static_cast<std::size_t>(b)];
    if (y.size() != n) throw ShapeError("assemble_batch: signals of different lengths");
    v.segment(b * c * n, n) = y;
    if (use_mask) v.segment(b * c * n + n, n) = (!saturation_mask(y, cfg)).cast<double>().matrix();
  }
  return Tensor({batch, c, n}, std::move(v));
}

}  // namespace declip
