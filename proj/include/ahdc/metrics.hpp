#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ahdc/core_data.hpp"

namespace ahdc::metrics {

/// 2|a∩b| / (|a|+|b|). Throws when both masks are empty.
double dsc(const LabelMask& a, const LabelMask& b);

/// |a∩b| / |a∪b|. Throws when both masks are empty.
double jaccard(const LabelMask& a, const LabelMask& b);

/// Foreground pixels with at least one 4-neighbour in the background.
/// Pixels outside the raster count as background.
std::vector<std::pair<int, int>> boundary_pixels(const LabelMask& m);

/// Symmetric average surface distance in mm between the 4-connected
/// boundaries of a and b. Throws when either mask is empty.
double asd(const LabelMask& a, const LabelMask& b, Spacing spacing);
inline double asd(const LabelMask& a, const LabelMask& b) { return asd(a, b, a.spacing()); }

struct MetricRow {
  std::string id;
  double dsc = 0.0;
  double ji = 0.0;
  double asd_mm = 0.0;
};

struct Aggregate {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (n - 1); 0 for n < 2
};

struct MetricReport {
  std::vector<MetricRow> rows;      // sorted by id
  std::vector<std::string> excluded;  // samples with an undefined metric
  Aggregate dsc;
  Aggregate ji;
  Aggregate asd;

  void write(const std::filesystem::path& dir) const;  // report.csv + summary.json
};

Aggregate aggregate(std::span<const double> values);

/// Builds a report from (id, ground truth, prediction) triples. Samples whose
/// DSC, JI or ASD is undefined are listed in `excluded`.
MetricReport make_report(std::span<const std::string> ids, std::span<const LabelMask> truth,
                         std::span<const LabelMask> predicted);

using Predictor = std::function<LabelMask(const Sample&)>;

/// Predicts every test sample with a mask and scores it. Prediction runs
/// sequentially (predictors may carry mutable state); scoring is parallel.
MetricReport evaluate_dataset(const Predictor& predict, const DomainDataset& dataset);

struct ProjectionRow {
  std::string id;
  std::string domain;
  std::vector<double> scores;  // pc1, pc2, ...
};

struct Projection {
  std::vector<ProjectionRow> rows;
  std::vector<double> explained_variance;  // descending
  std::vector<double> mean;                // flattened mean image
  std::vector<std::vector<double>> components;  // k unit vectors of length d

  void write_csv(const std::filesystem::path& path) const;  // id,domain,pc1,pc2
};

struct LabelledImage {
  std::string id;
  std::string domain;
  const TensorImage* image = nullptr;
};

/// Mean-centred PCA via SVD. Each component's largest-magnitude loading is
/// made positive. Requires at least k + 1 equally shaped images.
Projection pca_project(std::span<const LabelledImage> images, int k = 2);

/// |Pearson r| between two equally sized activation tensors. Returns 0 when
/// either side has zero variance (and sets *degenerate if given).
double abs_pearson(std::span<const float> a, std::span<const float> b, bool* degenerate = nullptr);

struct LayerCorrelation {
  std::string layer;
  double abs_pearson = 0.0;
};

void write_featcorr_csv(const std::filesystem::path& path, std::span<const LayerCorrelation> layers);

}  // namespace ahdc::metrics
