#include <algorithm>
#include <chrono>
#include <cmath>

#include "conhd/errors.hpp"
#include "conhd/verify.hpp"

namespace conhd::verify {

std::vector<BenchPoint> bench_ladder(const nn::ModelConfig& cfg, std::size_t base_edges, int steps, int repeats,
                                     std::uint64_t seed) {
  if (base_edges < 1 || steps < 2 || repeats < 1) throw ParameterError("bench ladder needs base_edges >= 1, steps >= 2, repeats >= 1");
  nn::ModelConfig model = cfg;
  model.dropout = 0.0;
  model.validate();
  nn::ParameterStore store = nn::init_parameters(model, derive_seed(seed, "bench.init"));
  Rng rng = make_rng(seed, "bench.features");
  std::vector<BenchPoint> points;
  for (int k = 0; k < steps; ++k) {
    const std::size_t m = base_edges << k;
    const Hypergraph h = random_hypergraph(m, m, {2, 6}, derive_seed(seed, "bench.graph." + std::to_string(k)));
    const PairIndex idx = build_pair_index(h);
    const nn::Structure st = nn::build_structure(idx);
    Matrix x(static_cast<Eigen::Index>(h.num_nodes()), model.in_features);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = standard_normal(rng);
    Matrix target(static_cast<Eigen::Index>(idx.size()), model.classes);
    for (Eigen::Index i = 0; i < target.size(); ++i) target.data()[i] = standard_normal(rng);
    auto pass = [&] {
      nn::Tape tape;
      const nn::Var out = nn::classify_head(tape, store, model, nn::conhd_forward(tape, store, model, st, x, {}));
      tape.backward(nn::mae(out, target), store);
    };
    pass();
    std::vector<double> times;
    for (int r = 0; r < repeats; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      pass();
      times.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    std::nth_element(times.begin(), times.begin() + static_cast<std::ptrdiff_t>(times.size() / 2), times.end());
    points.push_back({idx.size(), times[times.size() / 2]});
  }
  return points;
}

double fit_loglog_exponent(const std::vector<BenchPoint>& points) {
  if (points.size() < 2) throw ParameterError("need at least two points to fit an exponent");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const BenchPoint& p : points) {
    if (p.pairs == 0 || !(p.seconds > 0.0)) throw ParameterError("bench points must be positive");
    const double x = std::log(static_cast<double>(p.pairs)), y = std::log(p.seconds);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double n = static_cast<double>(points.size());
  const double denom = n * sxx - sx * sx;
  if (denom <= 0.0) throw ParameterError("bench sizes must differ");
  return (n * sxy - sx * sy) / denom;
}

}  // namespace conhd::verify
