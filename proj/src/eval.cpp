#include "declip/eval.hpp"

#include "declip/text.hpp"

#include <fstream>
#include <numeric>
#include <sstream>

namespace declip {

std::string to_string(BlendMode mode) {
  return mode == BlendMode::PaperExact ? "paper-exact" : "level-normalized";
}

BlendMode blend_mode_from_string(const std::string& s) {
  if (s == "paper-exact") return BlendMode::PaperExact;
  if (s == "level-normalized") return BlendMode::LevelNormalized;
  throw std::invalid_argument("unknown blend mode '" + s + "' (expected paper-exact or level-normalized)");
}

SdrStats summarize(const std::vector<double>& values) {
  SdrStats s;
  if (values.empty()) return s;
  const double n = static_cast<double>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / (n - 1.0));
  }
  return s;
}

std::vector<Signal> reconstruct(const ParamStore& params, const Arch& arch, const std::vector<Signal>& ys,
                                const ClipConfig& cfg, const BlendConfig& bc) {
  bc.validate(cfg);
  const bool use_mask = in_channels(arch) == 2;
  const Tensor out = predict(params, arch, assemble_batch(ys, cfg, use_mask));
  const Index n = ys.front().size();
  std::vector<Signal> result;
  result.reserve(ys.size());
  for (std::size_t b = 0; b < ys.size(); ++b) {
    const auto net = out.values.segment(static_cast<Index>(b) * n, n);
    result.emplace_back(blend(ys[b], net, cfg, bc));
  }
  return result;
}

SdrReport evaluate(const ParamStore& params, const Arch& arch, const std::vector<Item>& items, const ClipConfig& cfg,
                   const BlendConfig& bc, Index batch_size) {
  SdrReport rep;
  const auto step = static_cast<std::size_t>(std::max<Index>(1, batch_size));
  for (std::size_t start = 0; start < items.size(); start += step) {
    const std::size_t stop = std::min(items.size(), start + step);
    std::vector<Signal> ys;
    for (std::size_t i = start; i < stop; ++i) {
      if (!items[i].x) throw std::invalid_argument("evaluate: item '" + items[i].meta + "' has no ground truth");
      if (!ys.empty() && items[i].y.size() != ys.front().size()) {
        // Different lengths cannot share a batch tensor; flush per item.
        const auto rec = reconstruct(params, arch, ys, cfg, bc);
        for (std::size_t j = 0; j < rec.size(); ++j) {
          const Item& it = items[i - ys.size() + j];
          rep.item_ids.push_back(it.meta);
          rep.per_item_sdr.push_back(sdr(*it.x, rec[j]));
          rep.identity_sdr.push_back(sdr(*it.x, it.y));
        }
        ys.clear();
      }
      ys.push_back(items[i].y);
    }
    const auto rec = reconstruct(params, arch, ys, cfg, bc);
    for (std::size_t j = 0; j < rec.size(); ++j) {
      const Item& it = items[stop - ys.size() + j];
      rep.item_ids.push_back(it.meta);
      rep.per_item_sdr.push_back(sdr(*it.x, rec[j]));
      rep.identity_sdr.push_back(sdr(*it.x, it.y));
    }
  }
  const SdrStats net = summarize(rep.per_item_sdr);
  const SdrStats id = summarize(rep.identity_sdr);
  rep.mean = net.mean;
  rep.std = net.std;
  rep.identity_mean = id.mean;
  rep.identity_std = id.std;
  std::ostringstream fp;
  fp << describe(arch) << " mu=" << format_real(cfg.mu) << " eps_sat=" << format_real(cfg.eps_sat)
     << " tau=" << format_real(bc.tau) << " blend=" << to_string(bc.mode);
  rep.fingerprint = fp.str();
  return rep;
}

void write_report_csv(const SdrReport& report, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error(path.string() + ": cannot open for writing");
  f << "# " << report.fingerprint << '\n';
  f << "item,sdr_db,identity_sdr_db\n";
  for (std::size_t i = 0; i < report.per_item_sdr.size(); ++i) {
    f << report.item_ids[i] << ',' << format_real(report.per_item_sdr[i]) << ','
      << format_real(report.identity_sdr[i]) << '\n';
  }
  f << "mean," << format_real(report.mean) << ',' << format_real(report.identity_mean) << '\n';
  f << "std," << format_real(report.std) << ',' << format_real(report.identity_std) << '\n';
}

}  // namespace declip
