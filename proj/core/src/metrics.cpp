#include "trajclust/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

namespace trajclust::metrics {

namespace {

double entropy(const std::vector<double>& counts, double n) {
  double h = 0.0;
  for (double c : counts)
    if (c > 0) h -= (c / n) * std::log(c / n);
  return h;
}

double sq_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

KmeansResult lloyd(const std::vector<std::vector<double>>& points, std::size_t k, std::size_t max_iters, Rng& rng) {
  const std::size_t n = points.size();
  KmeansResult r;
  // k-means++ seeding
  std::uniform_int_distribution<std::size_t> uniform(0, n - 1);
  r.centers.push_back(points[uniform(rng)]);
  std::vector<double> d2(n);
  while (r.centers.size() < k) {
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : r.centers) best = std::min(best, sq_distance(points[i], c));
      d2[i] = best;
    }
    std::discrete_distribution<std::size_t> pick(d2.begin(), d2.end());
    r.centers.push_back(points[pick(rng)]);
  }

  r.labels.assign(n, 0);
  for (std::size_t it = 0; it < max_iters; ++it) {
    bool changed = it == 0;
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_d = sq_distance(points[i], r.centers[0]);
      for (std::size_t j = 1; j < k; ++j) {
        const double d = sq_distance(points[i], r.centers[j]);
        if (d < best_d) {
          best = j;
          best_d = d;
        }
      }
      if (best != r.labels[i]) changed = true;
      r.labels[i] = best;
      inertia += best_d;
    }
    // update; an emptied cluster keeps its old centre
    std::vector<std::vector<double>> sums(k, std::vector<double>(points[0].size(), 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[r.labels[i]];
      for (std::size_t d = 0; d < points[i].size(); ++d) sums[r.labels[i]][d] += points[i][d];
    }
    for (std::size_t j = 0; j < k; ++j)
      if (counts[j])
        for (std::size_t d = 0; d < sums[j].size(); ++d) r.centers[j][d] = sums[j][d] / static_cast<double>(counts[j]);
    inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) inertia += sq_distance(points[i], r.centers[r.labels[i]]);
    r.inertia_curve.push_back(inertia);
    r.inertia = inertia;
    if (!changed) break;
  }
  return r;
}

}  // namespace

std::vector<std::size_t> canonicalize(std::span<const std::size_t> labels) {
  std::map<std::size_t, std::size_t> ids;
  std::vector<std::size_t> out;
  out.reserve(labels.size());
  for (auto l : labels) out.push_back(ids.try_emplace(l, ids.size()).first->second);
  return out;
}

double nmi(std::span<const std::size_t> pred, std::span<const std::size_t> truth) {
  if (pred.size() != truth.size())
    throw DataError("nmi: label vectors differ in length (" + std::to_string(pred.size()) + " vs " +
                    std::to_string(truth.size()) + ")");
  if (pred.empty()) throw DataError("nmi: empty label vectors");
  const auto c = canonicalize(pred);
  const auto l = canonicalize(truth);
  const std::size_t kc = *std::max_element(c.begin(), c.end()) + 1;
  const std::size_t kl = *std::max_element(l.begin(), l.end()) + 1;
  std::vector<double> joint(kc * kl, 0.0), pc(kc, 0.0), pl(kl, 0.0);
  for (std::size_t i = 0; i < c.size(); ++i) {
    joint[c[i] * kl + l[i]] += 1;
    pc[c[i]] += 1;
    pl[l[i]] += 1;
  }
  const double n = static_cast<double>(c.size());
  const double hc = entropy(pc, n), hl = entropy(pl, n);
  if (hc == 0.0 && hl == 0.0) return 1.0;
  if (hc == 0.0 || hl == 0.0) return 0.0;
  double mi = 0.0;
  for (std::size_t a = 0; a < kc; ++a)
    for (std::size_t b = 0; b < kl; ++b) {
      const double j = joint[a * kl + b];
      if (j > 0) mi += (j / n) * std::log(j * n / (pc[a] * pl[b]));
    }
  return std::clamp(2.0 * mi / (hc + hl), 0.0, 1.0);
}

double nmi(std::span<const int> pred, std::span<const int> truth) {
  auto widen = [](std::span<const int> v) {
    std::vector<std::size_t> out;
    out.reserve(v.size());
    for (int x : v) {
      if (x < 0) throw DataError("nmi: negative label " + std::to_string(x));
      out.push_back(static_cast<std::size_t>(x));
    }
    return out;
  };
  const auto a = widen(pred), b = widen(truth);
  return nmi(std::span<const std::size_t>(a), std::span<const std::size_t>(b));
}

KmeansResult kmeans(const std::vector<std::vector<double>>& points, std::size_t k, std::uint64_t seed,
                    const KmeansConfig& config) {
  if (k == 0) throw DataError("kmeans: k must be at least 1");
  if (points.empty()) throw DataError("kmeans: no points");
  const std::size_t dim = points[0].size();
  for (const auto& p : points)
    if (p.size() != dim) throw DataError("kmeans: points have mixed dimensions");
  const std::set<std::vector<double>> distinct(points.begin(), points.end());
  if (k > distinct.size())
    throw DataError("kmeans: k = " + std::to_string(k) + " exceeds " + std::to_string(distinct.size()) +
                    " distinct points");

  KmeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < std::max<std::size_t>(1, config.restarts); ++r) {
    Rng rng = make_rng({seed, r, 0x4b4dULL});
    auto result = lloyd(points, k, config.max_iters, rng);
    if (result.inertia < best.inertia) best = std::move(result);
  }
  return best;
}

std::vector<std::size_t> return_kmeans_baseline(const Dataset& data, std::size_t k, std::uint64_t seed) {
  if (data.size() == 0) throw DataError("return-kmeans: empty dataset");
  std::vector<std::vector<double>> returns;
  returns.reserve(data.size());
  for (const auto& t : data.trajectories) returns.push_back({t.total_reward()});
  const bool constant = std::all_of(returns.begin(), returns.end(), [&](const auto& r) { return r == returns[0]; });
  if (constant) throw NotApplicable("return-kmeans is not applicable: every trajectory has the same return");
  return kmeans(returns, k, seed).labels;
}

ClusterReport cluster_report(std::span<const std::size_t> assignment, std::size_t k,
                             std::optional<std::span<const std::size_t>> truth, std::span<const double> curve) {
  ClusterReport r;
  r.k = k;
  r.sizes.assign(k, 0);
  for (auto c : assignment) {
    if (c >= k) throw DataError("cluster_report: label " + std::to_string(c) + " >= k");
    ++r.sizes[c];
  }
  if (truth && !truth->empty()) r.nmi = nmi(assignment, *truth);
  r.curve.assign(curve.begin(), curve.end());
  if (!curve.empty()) r.objective = curve.back();
  r.iterations = curve.size();
  return r;
}

std::string to_json_line(const ClusterReport& r) {
  nlohmann::json j;
  j["run_id"] = r.run_id;
  j["method"] = r.method;
  j["env"] = r.env;
  j["k"] = r.k;
  j["k_star"] = r.k_star ? nlohmann::json(*r.k_star) : nlohmann::json(nullptr);
  j["seed"] = r.seed;
  j["nmi"] = r.nmi ? nlohmann::json(*r.nmi) : nlohmann::json(nullptr);
  j["iterations"] = r.iterations;
  j["objective"] = r.objective ? nlohmann::json(*r.objective) : nlohmann::json(nullptr);
  j["curve"] = r.curve;
  j["converged"] = r.converged;
  j["wall_time"] = r.wall_seconds;
  j["sizes"] = r.sizes;
  return j.dump();
}

ClusterReport parse_report_line(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed report record: ") + e.what());
  }
  ClusterReport r;
  try {
    r.run_id = j.at("run_id").get<std::string>();
    r.method = j.at("method").get<std::string>();
    r.env = j.at("env").get<std::string>();
    r.k = j.at("k").get<std::size_t>();
    if (!j.at("k_star").is_null()) r.k_star = j["k_star"].get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    if (!j.at("nmi").is_null()) r.nmi = j["nmi"].get<double>();
    r.iterations = j.at("iterations").get<std::size_t>();
    if (!j.at("objective").is_null()) r.objective = j["objective"].get<double>();
    r.curve = j.at("curve").get<std::vector<double>>();
    r.converged = j.at("converged").get<bool>();
    r.wall_seconds = j.at("wall_time").get<double>();
    r.sizes = j.at("sizes").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed report record: ") + e.what());
  }
  return r;
}

void append_report(const ClusterReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw DataError("cannot open " + path.string() + " for appending");
  out << to_json_line(report) << '\n';
}

std::vector<ClusterReport> read_reports(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  std::vector<ClusterReport> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(parse_report_line(line));
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace trajclust::metrics
