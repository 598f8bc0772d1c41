#include "ahdc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include <Eigen/Dense>
#include <json.hpp>

#include "ahdc/errors.hpp"
#include "ahdc/format.hpp"
#include "ahdc/parallel.hpp"

namespace ahdc::metrics {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_same_shape(const LabelMask& a, const LabelMask& b) {
  if (a.height() != b.height() || a.width() != b.width()) throw ValidationError("mask shapes differ");
}

struct Overlap {
  std::size_t a = 0;
  std::size_t b = 0;
  std::size_t both = 0;
};

Overlap overlap(const LabelMask& a, const LabelMask& b) {
  check_same_shape(a, b);
  Overlap o;
  const auto va = a.values();
  const auto vb = b.values();
  for (std::size_t i = 0; i < va.size(); ++i) {
    o.a += va[i];
    o.b += vb[i];
    o.both += va[i] & vb[i];
  }
  return o;
}

// One-dimensional squared distance transform (lower envelope of parabolas)
// over samples at positions i * step. Entries equal to +inf are absent.
void edt_1d(std::vector<double>& f, double step) {
  const std::size_t n = f.size();
  std::vector<std::size_t> v(n);
  std::vector<double> z(n + 1);
  std::vector<double> out(n, kInf);
  std::ptrdiff_t k = -1;
  for (std::size_t q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    const double xq = step * static_cast<double>(q);
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    double s = 0.0;
    while (true) {
      const double xv = step * static_cast<double>(v[k]);
      s = ((f[q] + xq * xq) - (f[v[k]] + xv * xv)) / (2.0 * xq - 2.0 * xv);
      if (s > z[k] || k == 0) break;
      --k;
    }
    if (s <= z[k]) {
      // Only possible for k == 0: the new parabola dominates everywhere.
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  if (k < 0) {
    f.assign(n, kInf);
    return;
  }
  std::ptrdiff_t j = 0;
  for (std::size_t q = 0; q < n; ++q) {
    const double xq = step * static_cast<double>(q);
    while (z[j + 1] < xq) ++j;
    const double d = xq - step * static_cast<double>(v[j]);
    out[q] = d * d + f[v[j]];
  }
  f = std::move(out);
}

// Squared Euclidean distance (mm^2) from every pixel to the nearest set pixel.
std::vector<double> squared_distance_map(const std::vector<std::pair<int, int>>& points, int h, int w, Spacing s) {
  std::vector<double> grid(static_cast<std::size_t>(h) * w, kInf);
  for (const auto& [y, x] : points) grid[static_cast<std::size_t>(y) * w + x] = 0.0;
  std::vector<double> line;
  for (int x = 0; x < w; ++x) {
    line.resize(h);
    for (int y = 0; y < h; ++y) line[y] = grid[static_cast<std::size_t>(y) * w + x];
    edt_1d(line, s.dy);
    for (int y = 0; y < h; ++y) grid[static_cast<std::size_t>(y) * w + x] = line[y];
  }
  for (int y = 0; y < h; ++y) {
    line.assign(grid.begin() + static_cast<std::ptrdiff_t>(y) * w, grid.begin() + static_cast<std::ptrdiff_t>(y + 1) * w);
    edt_1d(line, s.dx);
    std::copy(line.begin(), line.end(), grid.begin() + static_cast<std::ptrdiff_t>(y) * w);
  }
  return grid;
}

}  // namespace

double dsc(const LabelMask& a, const LabelMask& b) {
  const auto o = overlap(a, b);
  if (o.a + o.b == 0) throw ValidationError("undefined DSC: both masks are empty");
  return 2.0 * static_cast<double>(o.both) / static_cast<double>(o.a + o.b);
}

double jaccard(const LabelMask& a, const LabelMask& b) {
  const auto o = overlap(a, b);
  const std::size_t uni = o.a + o.b - o.both;
  if (uni == 0) throw ValidationError("undefined Jaccard index: both masks are empty");
  return static_cast<double>(o.both) / static_cast<double>(uni);
}

std::vector<std::pair<int, int>> boundary_pixels(const LabelMask& m) {
  std::vector<std::pair<int, int>> out;
  const int h = m.height();
  const int w = m.width();
  const auto bg = [&](int y, int x) { return y < 0 || y >= h || x < 0 || x >= w || m.at(y, x) == 0; };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (m.at(y, x) && (bg(y - 1, x) || bg(y + 1, x) || bg(y, x - 1) || bg(y, x + 1))) out.emplace_back(y, x);
    }
  }
  return out;
}

double asd(const LabelMask& a, const LabelMask& b, Spacing spacing) {
  check_same_shape(a, b);
  if (a.count() == 0 || b.count() == 0) throw ValidationError("undefined surface distance: empty mask");
  const auto ba = boundary_pixels(a);
  const auto bb = boundary_pixels(b);
  const int h = a.height();
  const int w = a.width();
  const auto to_b = squared_distance_map(bb, h, w, spacing);
  const auto to_a = squared_distance_map(ba, h, w, spacing);
  double total = 0.0;
  for (const auto& [y, x] : ba) total += std::sqrt(to_b[static_cast<std::size_t>(y) * w + x]);
  for (const auto& [y, x] : bb) total += std::sqrt(to_a[static_cast<std::size_t>(y) * w + x]);
  return total / static_cast<double>(ba.size() + bb.size());
}

// ---------------------------------------------------------------------------
// Reports

Aggregate aggregate(std::span<const double> values) {
  Aggregate g;
  if (values.empty()) return g;
  const double n = static_cast<double>(values.size());
  g.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() > 1) {
    double ss = 0.0;
    for (const double v : values) ss += (v - g.mean) * (v - g.mean);
    g.std = std::sqrt(ss / (n - 1.0));
  }
  return g;
}

MetricReport make_report(std::span<const std::string> ids, std::span<const LabelMask> truth,
                         std::span<const LabelMask> predicted) {
  if (ids.size() != truth.size() || ids.size() != predicted.size()) {
    throw ValidationError("make_report: argument lengths differ");
  }
  struct Slot {
    bool ok = false;
    MetricRow row;
  };
  std::vector<Slot> slots(ids.size());
  parallel_for(ids.size(), [&](std::size_t i) {
    const auto& t = truth[i];
    const auto& p = predicted[i];
    if (t.count() == 0 || p.count() == 0) return;
    slots[i] = {true, {ids[i], dsc(t, p), jaccard(t, p), asd(t, p, t.spacing())}};
  });
  MetricReport r;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i].ok) r.rows.push_back(std::move(slots[i].row));
    else r.excluded.push_back(ids[i]);
  }
  std::sort(r.rows.begin(), r.rows.end(), [](const auto& x, const auto& y) { return x.id < y.id; });
  std::sort(r.excluded.begin(), r.excluded.end());
  std::vector<double> d;
  std::vector<double> j;
  std::vector<double> s;
  for (const auto& row : r.rows) {
    d.push_back(row.dsc);
    j.push_back(row.ji);
    s.push_back(row.asd_mm);
  }
  r.dsc = aggregate(d);
  r.ji = aggregate(j);
  r.asd = aggregate(s);
  return r;
}

MetricReport evaluate_dataset(const Predictor& predict, const DomainDataset& dataset) {
  std::vector<std::string> ids;
  std::vector<LabelMask> truth;
  std::vector<LabelMask> pred;
  for (const auto& s : dataset.samples()) {
    if (s.split != Split::Test || !s.mask) continue;
    ids.push_back(s.id);
    truth.push_back(*s.mask);
    pred.push_back(predict(s));
  }
  if (ids.empty()) throw ValidationError("dataset " + dataset.name() + " has no labelled test samples");
  return make_report(ids, truth, pred);
}

void MetricReport::write(const fs::path& dir) const {
  std::ofstream csv(dir / "report.csv", std::ios::trunc);
  if (!csv) throw IoError("cannot write " + (dir / "report.csv").string());
  csv << "id,dsc,ji,asd_mm\n";
  for (const auto& r : rows) csv << r.id << ',' << fmt_real(r.dsc) << ',' << fmt_real(r.ji) << ',' << fmt_real(r.asd_mm) << '\n';
  const auto agg = [](const Aggregate& a) { return json{{"mean", a.mean}, {"std", a.std}}; };
  const json summary = {{"n", rows.size()},  {"dsc", agg(dsc)}, {"ji", agg(ji)},
                        {"asd", agg(asd)}, {"excluded", excluded}};
  std::ofstream js(dir / "summary.json", std::ios::trunc);
  if (!js) throw IoError("cannot write " + (dir / "summary.json").string());
  js << summary.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// PCA

Projection pca_project(std::span<const LabelledImage> images, int k) {
  if (k < 1) throw ValidationError("pca_project: k must be positive");
  if (images.size() < static_cast<std::size_t>(k) + 1) {
    throw ValidationError("pca_project: rank deficiency, need at least k + 1 images");
  }
  const auto& first = *images.front().image;
  const auto d = static_cast<Eigen::Index>(first.size());
  if (d < k) throw ValidationError("pca_project: rank deficiency, fewer pixels than components");
  const auto n = static_cast<Eigen::Index>(images.size());
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& img = *images[i].image;
    if (img.height() != first.height() || img.width() != first.width() || img.channels() != first.channels()) {
      throw ValidationError("pca_project: images must share one shape");
    }
    const auto v = img.values();
    for (Eigen::Index j = 0; j < d; ++j) x(i, j) = v[j];
  }
  const Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;
  Eigen::BDCSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeThinV);
  Eigen::MatrixXd basis = svd.matrixV().leftCols(k);
  for (int c = 0; c < k; ++c) {
    Eigen::Index arg = 0;
    basis.col(c).cwiseAbs().maxCoeff(&arg);
    if (basis(arg, c) < 0.0) basis.col(c) *= -1.0;
  }
  const Eigen::MatrixXd scores = x * basis;

  Projection p;
  p.mean.assign(mean.data(), mean.data() + d);
  const auto sv = svd.singularValues();
  for (int c = 0; c < k; ++c) {
    const double s = c < sv.size() ? sv(c) : 0.0;
    p.explained_variance.push_back(s * s / static_cast<double>(n - 1));
    p.components.emplace_back(basis.col(c).data(), basis.col(c).data() + d);
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    ProjectionRow row{images[i].id, images[i].domain, {}};
    for (int c = 0; c < k; ++c) row.scores.push_back(scores(i, c));
    p.rows.push_back(std::move(row));
  }
  return p;
}

void Projection::write_csv(const fs::path& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << "id,domain,pc1,pc2\n";
  for (const auto& r : rows) {
    os << r.id << ',' << r.domain << ',' << fmt_real(r.scores.at(0)) << ','
       << fmt_real(r.scores.size() > 1 ? r.scores[1] : 0.0) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Correlation

double abs_pearson(std::span<const float> a, std::span<const float> b, bool* degenerate) {
  if (a.size() != b.size() || a.empty()) throw ValidationError("abs_pearson: sizes differ or are empty");
  const double n = static_cast<double>(a.size());
  double ma = 0.0;
  double mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0;
  double saa = 0.0;
  double sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (degenerate) *degenerate = false;
  if (saa <= 0.0 || sbb <= 0.0) {
    if (degenerate) *degenerate = true;
    return 0.0;
  }
  return std::min(1.0, std::abs(sab) / std::sqrt(saa * sbb));
}

void write_featcorr_csv(const fs::path& path, std::span<const LayerCorrelation> layers) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << "layer,abs_pearson\n";
  for (const auto& l : layers) os << l.layer << ',' << fmt_real(l.abs_pearson) << '\n';
}

}  // namespace ahdc::metrics
