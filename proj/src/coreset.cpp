// SPDX-License-Identifier: Apache-2.0
#include "dance/coreset.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "dance/error.hpp"
#include "dance/rng.hpp"

namespace dance {
namespace {

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

void check_k(const FeatureRows& rows, std::size_t k) {
  if (k == 0) throw ConfigError("coreset: ipc must be >= 1");
  if (k > rows.size())
    throw ConfigError("coreset: ipc " + std::to_string(k) + " exceeds class size " +
                      std::to_string(rows.size()));
}

// True when candidate (score a, row i) beats (score b, row j). `lower`
// selects whether smaller scores win.
bool better(double a, std::size_t i, double b, std::size_t j, const FeatureRows& rows,
            bool lower) {
  if (a != b) return lower ? a < b : a > b;
  if (rows[i] != rows[j]) return rows[i] < rows[j];
  return i < j;
}

void check_class_sizes(const RealDataset& ds, std::size_t ipc) {
  if (ipc == 0) throw ConfigError("coreset: ipc must be >= 1");
  for (std::size_t c = 0; c < ds.classes; ++c)
    if (ds.class_index[c].size() < ipc)
      throw ConfigError("coreset: class " + std::to_string(c) + " has " +
                        std::to_string(ds.class_index[c].size()) + " examples, ipc is " +
                        std::to_string(ipc));
}

std::vector<FeatureRows> class_features(const RealDataset& ds, const ParamSet<float>* encoder) {
  std::vector<FeatureRows> out(ds.classes);
  for (std::size_t c = 0; c < ds.classes; ++c) {
    Tensor<float> imgs = class_images(ds, c);
    Tensor<float> feats = encoder ? encode(*encoder, imgs) : imgs;
    const std::size_t n = feats.dim(0);
    const std::size_t d = n ? feats.size() / n : 0;
    out[c].resize(n);
    for (std::size_t i = 0; i < n; ++i)
      out[c][i].assign(feats.data() + i * d, feats.data() + (i + 1) * d);
  }
  return out;
}

template <class Order>
Selection greedy_indices(const RealDataset& ds, std::size_t ipc, const ParamSet<float>* encoder,
                         Order order) {
  check_class_sizes(ds, ipc);
  const std::vector<FeatureRows> feats = class_features(ds, encoder);
  Selection sel(ds.classes);
  for (std::size_t c = 0; c < ds.classes; ++c)
    for (std::size_t local : order(feats[c], ipc)) sel[c].push_back(ds.class_index[c][local]);
  return sel;
}

}  // namespace

std::vector<double> canonical_mean(const FeatureRows& rows) {
  if (rows.empty()) return {};
  std::vector<std::size_t> idx(rows.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return rows[a] < rows[b]; });
  std::vector<double> mu(rows[0].size(), 0.0);
  for (std::size_t i : idx)
    for (std::size_t d = 0; d < mu.size(); ++d) mu[d] += rows[i][d];
  for (double& v : mu) v /= static_cast<double>(rows.size());
  return mu;
}

std::vector<std::size_t> herding_order(const FeatureRows& rows, std::size_t k) {
  check_k(rows, k);
  const std::vector<double> mu = canonical_mean(rows);
  const std::size_t dim = mu.size();
  std::vector<double> acc(dim, 0.0), trial(dim);
  std::vector<bool> used(rows.size(), false);
  std::vector<std::size_t> picked;
  for (std::size_t step = 0; step < k; ++step) {
    const double denom = static_cast<double>(step + 1);
    std::size_t best = rows.size();
    double best_obj = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (used[i]) continue;
      for (std::size_t d = 0; d < dim; ++d) trial[d] = (acc[d] + rows[i][d]) / denom;
      const double obj = sq_dist(mu, trial);
      if (best == rows.size() || better(obj, i, best_obj, best, rows, true)) {
        best = i;
        best_obj = obj;
      }
    }
    used[best] = true;
    picked.push_back(best);
    for (std::size_t d = 0; d < dim; ++d) acc[d] += rows[best][d];
  }
  return picked;
}

std::vector<std::size_t> kcenter_order(const FeatureRows& rows, std::size_t k) {
  check_k(rows, k);
  const std::vector<double> mu = canonical_mean(rows);
  std::size_t first = 0;
  double first_d = sq_dist(rows[0], mu);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const double d = sq_dist(rows[i], mu);
    if (better(d, i, first_d, first, rows, true)) {
      first = i;
      first_d = d;
    }
  }
  std::vector<std::size_t> picked{first};
  std::vector<bool> used(rows.size(), false);
  used[first] = true;
  std::vector<double> nearest(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) nearest[i] = sq_dist(rows[i], rows[first]);
  while (picked.size() < k) {
    std::size_t best = rows.size();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (used[i]) continue;
      if (best == rows.size() || better(nearest[i], i, nearest[best], best, rows, false)) best = i;
    }
    used[best] = true;
    picked.push_back(best);
    for (std::size_t i = 0; i < rows.size(); ++i)
      nearest[i] = std::min(nearest[i], sq_dist(rows[i], rows[best]));
  }
  return picked;
}

Selection random_indices(const RealDataset& ds, std::size_t ipc, std::uint64_t seed) {
  check_class_sizes(ds, ipc);
  Selection sel(ds.classes);
  for (std::size_t c = 0; c < ds.classes; ++c) {
    Rng rng = Rng::substream(seed, "random:" + std::to_string(c));
    std::vector<std::size_t> pool = ds.class_index[c];
    // Partial Fisher-Yates.
    for (std::size_t i = 0; i < ipc; ++i) {
      std::swap(pool[i], pool[i + rng.index(pool.size() - i)]);
      sel[c].push_back(pool[i]);
    }
  }
  return sel;
}

Selection herding_indices(const RealDataset& ds, std::size_t ipc, const ParamSet<float>* encoder) {
  return greedy_indices(ds, ipc, encoder, herding_order);
}

Selection kcenter_indices(const RealDataset& ds, std::size_t ipc, const ParamSet<float>* encoder) {
  return greedy_indices(ds, ipc, encoder, kcenter_order);
}

SyntheticSet selection_to_synthetic(const RealDataset& ds, const Selection& sel) {
  if (sel.size() != ds.classes || sel.empty())
    throw ShapeError("coreset: selection does not cover every class");
  const std::size_t ipc = sel[0].size();
  std::vector<std::size_t> flat;
  for (std::size_t c = 0; c < sel.size(); ++c) {
    if (sel[c].size() != ipc) throw ShapeError("coreset: unequal selection sizes");
    for (std::size_t i : sel[c]) {
      if (ds.labels.at(i) != c) throw ShapeError("coreset: selected example from another class");
      flat.push_back(i);
    }
  }
  SyntheticSet syn;
  syn.canvases = gather_rows(ds.images, flat);
  syn.labels = balanced_labels(ds.classes, ipc);
  syn.classes = ds.classes;
  syn.ipc = ipc;
  syn.factor = 1;
  syn.stats = ds.stats;
  return syn;
}

SyntheticSet random_select(const RealDataset& ds, std::size_t ipc, std::uint64_t seed) {
  return selection_to_synthetic(ds, random_indices(ds, ipc, seed));
}

SyntheticSet herding_select(const RealDataset& ds, std::size_t ipc, const ParamSet<float>* encoder) {
  return selection_to_synthetic(ds, herding_indices(ds, ipc, encoder));
}

SyntheticSet kcenter_select(const RealDataset& ds, std::size_t ipc, const ParamSet<float>* encoder) {
  return selection_to_synthetic(ds, kcenter_indices(ds, ipc, encoder));
}

}  // namespace dance
