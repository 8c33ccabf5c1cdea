// SPDX-License-Identifier: Apache-2.0
#include "dance/diagnostics.hpp"

#include <cmath>
#include <cstdio>

#include "dance/error.hpp"

namespace dance {
namespace {

std::vector<double> mean_row(const Tensor<float>& feats) {
  const std::size_t n = feats.dim(0), d = feats.dim(1);
  std::vector<double> mu(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mu[j] += feats.data()[i * d + j];
  for (double& v : mu) v /= static_cast<double>(n);
  return mu;
}

}  // namespace

double feature_discrepancy(const ParamSet<float>& params, const RealDataset& real,
                           const RealDataset& syn) {
  if (syn.classes != real.classes) throw ShapeError("discrepancy: class counts differ");
  const std::size_t dim = params.spec().feature_dim();
  double total = 0.0;
  for (std::size_t c = 0; c < real.classes; ++c) {
    if (real.class_index[c].empty() || syn.class_index[c].empty())
      throw ShapeError("discrepancy: class " + std::to_string(c) + " has no examples");
    const std::vector<double> a = mean_row(encode(params, class_images(real, c)));
    const std::vector<double> b = mean_row(encode(params, class_images(syn, c)));
    for (std::size_t j = 0; j < dim; ++j) total += (a[j] - b[j]) * (a[j] - b[j]);
  }
  return total / static_cast<double>(dim);
}

std::vector<std::size_t> stage_epochs(std::size_t epochs, std::size_t stages) {
  if (stages == 0) throw ConfigError("discrepancy: checkpoints must be >= 1");
  if (stages == 1) return {epochs};
  std::vector<std::size_t> out;
  for (std::size_t s = 0; s < stages; ++s)
    out.push_back((s * epochs + (stages - 1) / 2) / (stages - 1));
  return out;
}

std::vector<CurvePoint> discrepancy_curve(const SyntheticSet& syn, const RealDataset& real,
                                          const ConvNetSpec& spec, std::size_t stages,
                                          const TrainOptions& opts, std::uint64_t seed) {
  const RealDataset syn_ds = synthetic_as_dataset(syn);
  const std::vector<std::size_t> at = stage_epochs(opts.epochs, stages);
  std::vector<CurvePoint> curve;
  auto snapshot = [&](std::size_t epoch, const ParamSet<float>& p) {
    while (curve.size() < at.size() && at[curve.size()] == epoch)
      curve.push_back({epoch, feature_discrepancy(p, real, syn_ds)});
  };
  ParamSet<float> model = build_convnet(spec, seed);
  snapshot(0, model);
  Rng rng = Rng::substream(seed, "discrepancy.train");
  train_classifier(model, real.images, std::span<const std::uint32_t>(real.labels), opts, rng, {},
                   EpochHook<float>(snapshot));
  return curve;
}

std::vector<std::pair<double, double>> lambda_sweep(const ExpertEntry& entry,
                                                    const RealDataset& test,
                                                    std::span<const double> grid) {
  std::vector<std::pair<double, double>> rows;
  for (double lam : grid) {
    if (!(lam >= 0.0 && lam <= 1.0)) throw ConfigError("lambda_sweep: grid value outside [0, 1]");
    const ParamSet<float> mid = interpolate_params(entry.init, entry.expert, lam);
    rows.emplace_back(lam, accuracy(mid, test.images, std::span<const std::uint32_t>(test.labels)));
  }
  return rows;
}

std::vector<double> lambda_grid(double step) {
  if (!(step > 0.0 && step <= 1.0)) throw ConfigError("lambda grid step must be in (0, 1]");
  const auto n = static_cast<std::size_t>(std::llround(1.0 / step));
  std::vector<double> grid;
  for (std::size_t i = 0; i <= n; ++i) grid.push_back(i == n ? 1.0 : static_cast<double>(i) * step);
  return grid;
}

double expert_acc_on_syn(const ExpertBank& bank, const SyntheticSet& syn) {
  if (bank.entries.empty()) throw ConfigError("expert_acc_on_syn: empty bank");
  auto [images, labels] = unfactor_all(syn);
  double sum = 0.0;
  for (const ExpertEntry& e : bank.entries)
    sum += accuracy(e.expert, images, std::span<const std::uint32_t>(labels));
  return sum / static_cast<double>(bank.entries.size());
}

std::string discrepancy_csv(std::span<const CurvePoint> curve) {
  std::string out = "stage,value\n";
  char buf[64];
  for (const CurvePoint& p : curve) {
    std::snprintf(buf, sizeof buf, "%zu,%.6g\n", p.stage, p.value);
    out += buf;
  }
  return out;
}

std::string lambda_sweep_csv(std::span<const std::pair<double, double>> rows) {
  std::string out = "lambda,accuracy\n";
  char buf[64];
  for (const auto& [lam, acc] : rows) {
    std::snprintf(buf, sizeof buf, "%.6g,%.6g\n", lam, acc);
    out += buf;
  }
  return out;
}

}  // namespace dance
