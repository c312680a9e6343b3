// trajclust command-line driver.
//
// Exit codes: 0 success, 2 usage, 3 data error, 4 method error.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "trajclust/caae.hpp"
#include "trajclust/coloring.hpp"
#include "trajclust/metrics.hpp"
#include "trajclust/pgkmeans.hpp"

namespace fs = std::filesystem;
using namespace trajclust;

namespace {

struct UsageError : Error {
  using Error::Error;
};

enum Exit { kOk = 0, kUsage = 2, kData = 3, kMethod = 4 };

// Write to a sibling temp file, then rename over the target.
void write_atomically(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << content;
    if (!out) throw DataError("write failed for " + path.string());
  }
  fs::rename(tmp, path);
}

std::vector<std::size_t> read_assignment(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open assignment " + path.string());
  std::vector<std::size_t> labels;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      std::size_t used = 0;
      const long long v = std::stoll(line, &used);
      if (v < 0 || line.find_first_not_of(" \t\r", used) != std::string::npos) throw std::invalid_argument("");
      labels.push_back(static_cast<std::size_t>(v));
    } catch (const std::logic_error&) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected a non-negative label");
    }
  }
  return labels;
}

std::string assignment_text(const std::vector<std::size_t>& labels) {
  std::string s;
  for (auto l : labels) s += std::to_string(l) + "\n";
  return s;
}

std::vector<std::size_t> truth_labels(const Dataset& d) {
  if (!d.labeled()) throw DataError("dataset has no ground-truth labels");
  std::vector<std::size_t> out;
  for (int l : *d.labels) out.push_back(static_cast<std::size_t>(l));
  return out;
}

// ---- clustering ---------------------------------------------------------

struct MethodConfig {
  std::string method = "pgkmeans";
  std::size_t k = 4;
  std::optional<std::size_t> k_star;
  std::size_t best_of = 1;
  std::size_t max_iters = 50;
  std::size_t epochs = 50;
  double alpha = 1.0;
  std::string family = "tabular";
  std::string merge = "compatible";
  bool reset = true;
  unsigned jobs = 1;
};

struct Clustering {
  std::vector<std::size_t> labels;
  std::size_t k = 0;
  std::size_t iterations = 0;
  bool converged = false;
  std::optional<double> objective;
  std::vector<double> curve;
  double seconds = 0;
};

void check_method(const MethodConfig& m) {
  static const std::set<std::string> known{"pgkmeans", "caae", "return-kmeans", "latent-kmeans"};
  if (!known.count(m.method)) throw UsageError("unknown method '" + m.method + "'");
  if (m.k == 0) throw UsageError("k must be at least 1");
  if (m.k_star && (*m.k_star == 0 || *m.k_star > m.k)) throw UsageError("k-star must be in [1, k]");
  if (m.k_star && m.method != "pgkmeans") throw UsageError("k-star only applies to pgkmeans");
  if (m.best_of == 0) throw UsageError("best-of must be at least 1");
  if (m.merge != "compatible" && m.merge != "literal") throw UsageError("merge must be 'compatible' or 'literal'");
  try {
    policy::parse_family(m.family);
  } catch (const DataError& e) {
    throw UsageError(e.what());
  }
}

Clustering cluster_once(const Dataset& data, const MethodConfig& m, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  Clustering out;
  if (m.method == "pgkmeans") {
    pgk::PgkConfig c;
    c.k = m.k;
    c.k_star = m.k_star;
    c.max_iters = m.max_iters;
    c.family = policy::parse_family(m.family);
    c.merge = m.merge == "literal" ? pgk::MergeCriterion::literal_argmin : pgk::MergeCriterion::most_compatible;
    c.seed = seed;
    c.jobs = m.jobs;
    const auto r = pgk::best_of_n(data, m.best_of, c);
    out.labels = r.assignment.labels();
    out.k = r.assignment.k();
    out.iterations = r.iterations;
    out.converged = r.converged;
    out.objective = r.final_objective;
    out.curve = r.objective;
  } else if (m.method == "caae" || m.method == "latent-kmeans") {
    caae::CaaeConfig c;
    c.alpha = m.alpha;
    c.epochs = m.epochs;
    c.reset_dead_centroids = m.reset;
    const auto r = caae::train(data, m.k, c, seed);
    for (const auto& e : r.log) out.curve.push_back(e.loss.total);
    out.iterations = m.epochs;
    out.converged = true;
    out.objective = r.log.back().loss.total;
    out.k = m.k;
    if (m.method == "caae") {
      out.labels = caae::assign(r.model, data).labels();
    } else {
      std::vector<std::vector<double>> z;
      for (const auto& e : caae::encode_all(r.model, data)) z.push_back(e.z);
      const auto km = metrics::kmeans(z, m.k, seed);
      out.labels = km.labels;
      out.curve = km.inertia_curve;
      out.objective = km.inertia;
      out.iterations = km.inertia_curve.size();
    }
  } else {
    out.labels = metrics::return_kmeans_baseline(data, m.k, seed);
    out.k = m.k;
    out.converged = true;
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

metrics::ClusterReport report_for(const Clustering& c, const MethodConfig& m, const Dataset& data,
                                  std::uint64_t seed, const std::vector<std::size_t>* truth) {
  auto r = truth ? metrics::cluster_report(c.labels, c.k, std::span<const std::size_t>(*truth), c.curve)
                 : metrics::cluster_report(c.labels, c.k, std::nullopt, c.curve);
  r.run_id = m.method + "-" + data.meta.env + "-k" + std::to_string(m.k) + "-s" + std::to_string(seed);
  r.method = m.method;
  r.env = data.meta.env;
  r.k = m.k;
  r.k_star = m.k_star;
  r.seed = seed;
  r.iterations = c.iterations;
  r.objective = c.objective;
  r.converged = c.converged;
  r.wall_seconds = c.seconds;
  return r;
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto dots = item.find("..");
    try {
      if (dots == std::string::npos) {
        out.push_back(std::stoull(item));
      } else {
        const auto lo = std::stoull(item.substr(0, dots)), hi = std::stoull(item.substr(dots + 2));
        if (hi < lo) throw UsageError("empty range '" + item + "'");
        for (auto v = lo; v <= hi; ++v) out.push_back(v);
      }
    } catch (const std::logic_error&) {
      throw UsageError("bad number list '" + text + "'");
    }
  }
  if (out.empty()) throw UsageError("empty list '" + text + "'");
  return out;
}

// ---- subcommands --------------------------------------------------------

struct GenArgs {
  std::string env;
  std::size_t episodes = 100;
  std::uint64_t seed = 0;
  std::string experts;
  std::string out;
  unsigned jobs = 1;
};

int cmd_gen(const GenArgs& a) {
  envs::EnvId env;
  try {
    env = envs::parse_env(a.env);
  } catch (const DataError& e) {
    throw UsageError(e.what());
  }
  if (a.episodes == 0) throw UsageError("episodes must be at least 1");
  Dataset d;
  if (a.experts.empty()) {
    d = generate(env, a.episodes, a.seed, a.jobs);
  } else {
    std::vector<int> ex;
    for (auto v : parse_seeds(a.experts)) ex.push_back(static_cast<int>(v));
    d = generate(env, ex, a.episodes, a.seed, a.jobs);
  }
  std::ostringstream buf;
  write_dataset(d, buf);
  write_atomically(a.out, buf.str());
  std::map<int, std::size_t> hist;
  for (int l : *d.labels) ++hist[l];
  std::cout << d.size() << " trajectories\n";
  for (const auto& [label, count] : hist) std::cout << "  expert " << label << ": " << count << "\n";
  return kOk;
}

struct ClusterArgs {
  std::string data;
  std::string out = ".";
  std::string seeds = "0";
  MethodConfig m;
};

int cmd_cluster(ClusterArgs a) {
  check_method(a.m);
  const auto seeds = parse_seeds(a.seeds);
  // Clustering never sees ground truth.
  const Dataset data = without_labels(load(a.data));
  if (a.m.k > data.size()) throw UsageError("k exceeds the number of trajectories");
  const fs::path out(a.out);
  fs::create_directories(out);
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    const auto c = cluster_once(data, a.m, seeds[i]);
    const std::string text = assignment_text(c.labels);
    if (i == 0) write_atomically(out / "assignment.txt", text);
    if (seeds.size() > 1) write_atomically(out / ("assignment-s" + std::to_string(seeds[i]) + ".txt"), text);
    const auto report = report_for(c, a.m, data, seeds[i], nullptr);
    metrics::append_report(report, out / "report.jsonl");
    std::cout << "seed " << seeds[i] << ": k=" << c.k << " iterations=" << c.iterations;
    if (c.objective) std::cout << " objective=" << *c.objective;
    std::cout << " sizes=";
    for (std::size_t j = 0; j < report.sizes.size(); ++j) std::cout << (j ? "," : "") << report.sizes[j];
    std::cout << "\n";
  }
  return kOk;
}

struct EvalArgs {
  std::string assignment;
  std::string data;
  std::string out;
};

int cmd_eval(const EvalArgs& a) {
  const auto labels = read_assignment(a.assignment);
  const Dataset data = load(a.data);
  const auto truth = truth_labels(data);
  if (labels.size() != truth.size())
    throw DataError("assignment has " + std::to_string(labels.size()) + " labels but the dataset has " +
                    std::to_string(truth.size()) + " trajectories");
  const double score = metrics::nmi(labels, truth);
  std::printf("%.3f\n", score);
  if (!a.out.empty()) {
    const std::size_t k = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
    auto r = metrics::cluster_report(labels, k, std::span<const std::size_t>(truth));
    r.run_id = "eval-" + fs::path(a.assignment).stem().string();
    r.method = "eval";
    r.env = data.meta.env;
    r.k = k;
    fs::create_directories(a.out);
    metrics::append_report(r, fs::path(a.out) / "report.jsonl");
  }
  return kOk;
}

struct GraphArgs {
  std::string data;
  std::string check;
  std::string edges_out;
  unsigned jobs = 1;
};

int cmd_graph(const GraphArgs& a) {
  const Dataset data = load(a.data);
  const auto g = coloring::build_graph(data, coloring::kActionTolerance, a.jobs);
  std::cout << g.size() << " nodes, " << g.edge_count() << " edges, max degree " << g.max_degree() << "\n";
  if (!a.edges_out.empty()) {
    std::ostringstream buf;
    coloring::write_edge_list(g, buf);
    write_atomically(a.edges_out, buf.str());
  }
  if (!a.check.empty()) {
    const auto labels = read_assignment(a.check);
    if (labels.size() != g.size())
      throw DataError("assignment has " + std::to_string(labels.size()) + " labels for " + std::to_string(g.size()) +
                      " nodes");
    const auto v = coloring::clustering_valid(g, labels);
    if (v.valid)
      std::cout << "valid\n";
    else
      std::cout << "invalid: conflict between " << v.witness->first << " and " << v.witness->second << "\n";
  }
  return kOk;
}

struct ReduceArgs {
  std::string edges;
  std::optional<std::size_t> horizon;
  bool literal = false;
  std::string out;
};

int cmd_reduce(const ReduceArgs& a) {
  const auto g = coloring::load_graph(a.edges);
  const std::size_t h = a.horizon.value_or(g.max_degree() + 1);
  const auto d = coloring::reduce_from_graph(
      g, h, a.literal ? coloring::ReductionMode::literal : coloring::ReductionMode::conflict_safe);
  std::ostringstream buf;
  write_dataset(d, buf);
  write_atomically(a.out, buf.str());
  std::cout << d.size() << " trajectories of length " << h << "\n";
  return kOk;
}

// Sweep config: key = value lines, '#' comments. Lists accept "4,5,6" and
// ranges "4..8".
struct SweepConfig {
  std::string env = "takeball";
  std::string experts;
  std::size_t episodes = 100;
  std::uint64_t dataset_seed = 0;
  std::vector<std::size_t> ks{4};
  std::vector<std::uint64_t> seeds{0};
  std::string out = ".";
  MethodConfig m;
};

SweepConfig read_sweep_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config " + path.string());
  SweepConfig c;
  std::string line;
  std::size_t lineno = 0;
  auto where = [&] { return path.string() + ":" + std::to_string(lineno) + ": "; };
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
    };
    if (trim(line).empty()) continue;
    if (eq == std::string::npos) throw UsageError(where() + "expected key = value");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    try {
      if (key == "env") c.env = value;
      else if (key == "experts") c.experts = value;
      else if (key == "episodes") c.episodes = std::stoull(value);
      else if (key == "dataset_seed") c.dataset_seed = std::stoull(value);
      else if (key == "method") c.m.method = value;
      else if (key == "k") {
        c.ks.clear();
        for (auto v : parse_seeds(value)) c.ks.push_back(v);
      } else if (key == "k_star") c.m.k_star = std::stoull(value);
      else if (key == "best_of") c.m.best_of = std::stoull(value);
      else if (key == "max_iters") c.m.max_iters = std::stoull(value);
      else if (key == "epochs") c.m.epochs = std::stoull(value);
      else if (key == "alpha") c.m.alpha = std::stod(value);
      else if (key == "family") c.m.family = value;
      else if (key == "merge") c.m.merge = value;
      else if (key == "reset") c.m.reset = value == "true" || value == "1";
      else if (key == "seeds") c.seeds = parse_seeds(value);
      else if (key == "out") c.out = value;
      else throw UsageError(where() + "unknown key '" + key + "'");
    } catch (const UsageError& e) {
      throw UsageError(std::string(e.what()).starts_with(path.string()) ? e.what() : where() + e.what());
    } catch (const std::logic_error&) {
      throw UsageError(where() + "bad value for '" + key + "'");
    }
  }
  return c;
}

struct SweepArgs {
  std::string config;
  std::string out;
  unsigned jobs = 1;
};

int cmd_sweep(const SweepArgs& a) {
  SweepConfig c = read_sweep_config(a.config);
  if (!a.out.empty()) c.out = a.out;
  envs::EnvId env;
  try {
    env = envs::parse_env(c.env);
  } catch (const DataError& e) {
    throw UsageError(e.what());
  }
  for (auto k : c.ks) {
    MethodConfig m = c.m;
    m.k = k;
    check_method(m);
  }
  Dataset data;
  if (c.experts.empty()) {
    data = generate(env, c.episodes, c.dataset_seed, a.jobs);
  } else {
    std::vector<int> ex;
    for (auto v : parse_seeds(c.experts)) ex.push_back(static_cast<int>(v));
    data = generate(env, ex, c.episodes, c.dataset_seed, a.jobs);
  }
  const auto truth = truth_labels(data);
  const Dataset blind = without_labels(data);

  // One task per (k, seed); each writes only its own slot.
  const std::size_t tasks = c.ks.size() * c.seeds.size();
  std::vector<Clustering> results(tasks);
  parallel_for(tasks, a.jobs, [&](std::size_t t) {
    MethodConfig m = c.m;
    m.k = c.ks[t / c.seeds.size()];
    results[t] = cluster_once(blind, m, c.seeds[t % c.seeds.size()]);
  });

  const fs::path out(c.out);
  fs::create_directories(out);
  std::string csv = "k,mean_nmi,std\n";
  for (std::size_t i = 0; i < c.ks.size(); ++i) {
    MethodConfig m = c.m;
    m.k = c.ks[i];
    std::vector<double> scores;
    for (std::size_t s = 0; s < c.seeds.size(); ++s) {
      const auto& r = results[i * c.seeds.size() + s];
      scores.push_back(metrics::nmi(r.labels, truth));
      metrics::append_report(report_for(r, m, data, c.seeds[s], &truth), out / "report.jsonl");
    }
    double mean = 0, var = 0;
    for (double x : scores) mean += x / static_cast<double>(scores.size());
    for (double x : scores) var += (x - mean) * (x - mean) / static_cast<double>(scores.size());
    char row[96];
    std::snprintf(row, sizeof row, "%zu,%.6f,%.6f\n", c.ks[i], mean, std::sqrt(var));
    csv += row;
  }
  write_atomically(out / "sweep.csv", csv);
  std::cout << csv;
  return kOk;
}

void add_method_flags(CLI::App* sub, MethodConfig& m) {
  sub->add_option("--method", m.method, "pgkmeans | caae | return-kmeans | latent-kmeans");
  sub->add_option("--k", m.k, "Number of clusters");
  sub->add_option("--k-star", m.k_star, "Merge down to this many clusters (pgkmeans)");
  sub->add_option("--best-of", m.best_of, "Independent pgkmeans runs; keep the best J");
  sub->add_option("--max-iters", m.max_iters, "pgkmeans iteration cap");
  sub->add_option("--epochs", m.epochs, "CAAE epochs");
  sub->add_option("--alpha", m.alpha, "CAAE attraction weight");
  sub->add_option("--family", m.family, "Policy family: tabular | linear_softmax | mlp_categorical | linear_gaussian");
  sub->add_option("--merge", m.merge, "Merge criterion: compatible | literal");
  sub->add_flag("!--no-reset", m.reset, "Disable CAAE dead-centroid resets");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Policy-based trajectory clustering"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate an expert dataset");
  g->add_option("--env", gen.env, "diagonal | takeball | extra | pathfollowing")->required();
  g->add_option("--episodes", gen.episodes, "Episodes per expert");
  g->add_option("--seed", gen.seed);
  g->add_option("--experts", gen.experts, "Expert ids, e.g. 0,1 or 0..2 (default: all)");
  g->add_option("--out", gen.out, "Dataset file")->required();
  g->add_option("--jobs", gen.jobs);

  ClusterArgs cl;
  auto* c = app.add_subcommand("cluster", "Cluster a dataset");
  c->add_option("--data", cl.data, "Dataset file")->required();
  c->add_option("--out", cl.out, "Output directory");
  c->add_option("--seeds,--seed", cl.seeds, "Seed list, e.g. 0,1,2 or 0..9");
  c->add_option("--jobs", cl.m.jobs);
  add_method_flags(c, cl.m);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "NMI of an assignment against dataset labels");
  e->add_option("--assignment", ev.assignment)->required();
  e->add_option("--data", ev.data)->required();
  e->add_option("--out", ev.out, "Append a report record to <out>/report.jsonl");

  GraphArgs gr;
  auto* gp = app.add_subcommand("graph", "Conflict graph statistics");
  gp->add_option("--data", gr.data)->required();
  gp->add_option("--check", gr.check, "Assignment file to validate as a coloring");
  gp->add_option("--edges", gr.edges_out, "Write the conflict graph as an edge list");
  gp->add_option("--jobs", gr.jobs);

  ReduceArgs rd;
  auto* r = app.add_subcommand("reduce", "Build a dataset whose conflict graph is the given graph");
  r->add_option("--edges", rd.edges, "Edge-list file")->required();
  r->add_option("--horizon", rd.horizon, "Trajectory length (default: max degree + 1)");
  r->add_flag("--literal", rd.literal, "Plain smallest-fresh-state rule (may add conflicts)");
  r->add_option("--out", rd.out, "Dataset file")->required();

  SweepArgs sw;
  auto* s = app.add_subcommand("sweep", "NMI versus k table");
  s->add_option("--config", sw.config, "key = value config file")->required();
  s->add_option("--out", sw.out, "Output directory (overrides the config)");
  s->add_option("--jobs", sw.jobs);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*g) return cmd_gen(gen);
    if (*c) return cmd_cluster(cl);
    if (*e) return cmd_eval(ev);
    if (*gp) return cmd_graph(gr);
    if (*r) return cmd_reduce(rd);
    if (*s) return cmd_sweep(sw);
  } catch (const UsageError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kUsage;
  } catch (const NotApplicable& err) {
    std::cerr << "not applicable: " << err.what() << "\n";
    return kMethod;
  } catch (const DataError& err) {
    std::cerr << "data error: " << err.what() << "\n";
    return kData;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kMethod;
  }
  return kUsage;
}
