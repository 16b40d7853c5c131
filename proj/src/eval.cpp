#include "csi/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>

namespace csi {

namespace {

void check_pair(const Image2D& pred, const Image2D& label, const Image2D& m) {
  require_same_shape(pred, label, "metric: prediction and label");
  require_same_shape(pred, m, "metric: prediction and mask");
  if (!m.is_binary()) throw std::invalid_argument("metric: mask must be binary");
}

double psnr_from_mse(double mse, double peak) {
  if (mse == 0.0) return kPsnrIdentical;
  return 10.0 * std::log10(peak * peak / mse);
}

}  // namespace

double mae_masked(const Image2D& pred, const Image2D& label, const Image2D& m) {
  check_pair(pred, label, m);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (m[i] != 0.0f) continue;
    sum += std::abs(static_cast<double>(pred[i]) - static_cast<double>(label[i]));
    ++n;
  }
  if (n == 0) throw std::invalid_argument("mae_masked: mask has no masked pixels");
  return sum / static_cast<double>(n);
}

double psnr(const Image2D& pred, const Image2D& label, double peak) {
  require_same_shape(pred, label, "psnr");
  if (!(peak > 0.0)) throw std::invalid_argument("psnr: peak must be > 0");
  if (pred.empty()) throw std::invalid_argument("psnr: empty image");
  double sse = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(label[i]);
    sse += d * d;
  }
  return psnr_from_mse(sse / static_cast<double>(pred.size()), peak);
}

double psnr_masked(const Image2D& pred, const Image2D& label, const Image2D& m, double peak) {
  check_pair(pred, label, m);
  if (!(peak > 0.0)) throw std::invalid_argument("psnr: peak must be > 0");
  double sse = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (m[i] != 0.0f) continue;
    const double d = static_cast<double>(pred[i]) - static_cast<double>(label[i]);
    sse += d * d;
    ++n;
  }
  if (n == 0) throw std::invalid_argument("psnr_masked: mask has no masked pixels");
  return psnr_from_mse(sse / static_cast<double>(n), peak);
}

MetricReport evaluate_set(std::span<const EvalPair> pairs, double peak) {
  if (pairs.empty()) throw std::invalid_argument("evaluate_set: empty set");
  MetricReport rep;
  for (const auto& p : pairs) {
    ImageMetrics im;
    im.name = p.name;
    im.mae = mae_masked(p.pred, p.label, p.mask);
    im.psnr = psnr(p.pred, p.label, peak);
    im.psnr_masked = psnr_masked(p.pred, p.label, p.mask, peak);
    im.n_pixels_masked = static_cast<std::size_t>(std::count(p.mask.data().begin(), p.mask.data().end(), 0.0f));
    rep.mae += im.mae;
    rep.psnr += im.psnr;
    rep.psnr_masked += im.psnr_masked;
    rep.n_pixels_masked += im.n_pixels_masked;
    rep.per_image.push_back(std::move(im));
  }
  const auto n = static_cast<double>(pairs.size());
  rep.mae /= n;
  rep.psnr /= n;
  rep.psnr_masked /= n;
  return rep;
}

std::string format_metric(double v, int precision) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

namespace {

std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

// Round-trippable text for CSV cells.
std::string exact(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

void write_report_csv(const std::filesystem::path& path, std::span<const ReportRow> rows) {
  auto out = open_csv(path);
  out << "method,family,n_images,n_pixels_masked,mae,psnr,psnr_masked\n";
  for (const auto& r : rows)
    out << r.method << ',' << r.family << ',' << r.report.per_image.size() << ',' << r.report.n_pixels_masked << ','
        << exact(r.report.mae) << ',' << exact(r.report.psnr) << ',' << exact(r.report.psnr_masked) << '\n';
}

void write_per_image_csv(const std::filesystem::path& path, std::span<const ReportRow> rows) {
  auto out = open_csv(path);
  out << "method,family,image,n_pixels_masked,mae,psnr,psnr_masked\n";
  for (const auto& r : rows)
    for (const auto& im : r.report.per_image)
      out << r.method << ',' << r.family << ',' << im.name << ',' << im.n_pixels_masked << ',' << exact(im.mae)
          << ',' << exact(im.psnr) << ',' << exact(im.psnr_masked) << '\n';
}

std::string family_label(const std::string& family) {
  static const std::map<std::string, std::string> labels{{"metal", "Metal mask"},
                                                         {"circle", "Circle"},
                                                         {"hrect", "Horizontal rectangle"},
                                                         {"vrect", "Vertical rectangle"}};
  const auto it = labels.find(family);
  return it == labels.end() ? family : it->second;
}

std::string format_comparison_table(std::span<const ReportRow> rows) {
  std::vector<std::string> methods, families;
  auto note = [](std::vector<std::string>& v, const std::string& s) {
    if (std::find(v.begin(), v.end(), s) == v.end()) v.push_back(s);
  };
  for (const auto& r : rows) {
    note(methods, r.method);
    note(families, r.family);
  }
  auto find = [&](const std::string& m, const std::string& f) -> const ReportRow* {
    for (const auto& r : rows)
      if (r.method == m && r.family == f) return &r;
    return nullptr;
  };

  constexpr int kLabel = 22, kCell = 10;
  std::ostringstream os;
  os << std::left << std::setw(kLabel) << "";
  for (const auto& m : methods) os << "| " << std::setw(2 * kCell) << m;
  os << '\n' << std::setw(kLabel) << "Metric";
  for (std::size_t i = 0; i < methods.size(); ++i) os << "| " << std::setw(kCell) << "MAE" << std::setw(kCell) << "PSNR";
  os << '\n';
  for (const auto& f : families) {
    os << std::setw(kLabel) << family_label(f);
    for (const auto& m : methods) {
      const ReportRow* r = find(m, f);
      os << "| " << std::setw(kCell) << (r ? format_metric(r->report.mae, 4) : "-") << std::setw(kCell)
         << (r ? format_metric(r->report.psnr, 2) : "-");
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace csi
