#include "hdfa/harness.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace hdfa {

std::vector<int> resolve_branching(const SyntheticTreeSpec& spec) {
  if (!spec.branching.empty()) {
    int product = 1;
    for (int b : spec.branching) {
      if (b < 1) throw std::invalid_argument("tree: branching factors must be >= 1");
      product *= b;
    }
    if (spec.leaf_classes > 0 && spec.leaf_classes != product) {
      throw std::invalid_argument("tree: branching product != leaf_classes");
    }
    return spec.branching;
  }
  if (spec.leaf_classes < 1) {
    throw std::invalid_argument("tree: leaf_classes must be >= 1");
  }
  // factor into 2s and 3s where possible, remainder as one level
  std::vector<int> levels;
  int n = spec.leaf_classes;
  for (int f : {2, 3}) {
    while (n % f == 0) {
      levels.push_back(f);
      n /= f;
    }
  }
  if (n > 1) levels.push_back(n);
  std::sort(levels.begin(), levels.end());
  return levels;
}

FeatureTable generate_tree_data(const SyntheticTreeSpec& spec) {
  if (spec.dimension < 1) throw std::invalid_argument("tree: dimension must be >= 1");
  if (spec.samples_per_class < 1) {
    throw std::invalid_argument("tree: samples_per_class must be >= 1");
  }
  if (!(spec.class_spread >= 0.0) || !(spec.within_spread >= 0.0)) {
    throw std::invalid_argument("tree: spreads must be non-negative");
  }
  const auto branching = resolve_branching(spec);
  const Curvature<double> curv(spec.curvature);
  NormalSampler rng(mix_seed(spec.seed, 0x7ee));

  std::vector<Eigen::VectorXd> level{Eigen::VectorXd::Zero(spec.dimension)};
  for (int b : branching) {
    std::vector<Eigen::VectorXd> next;
    next.reserve(level.size() * static_cast<std::size_t>(b));
    for (const auto& parent : level) {
      for (int k = 0; k < b; ++k) {
        next.push_back(parent + spec.class_spread * rng.vector(spec.dimension));
      }
    }
    level = std::move(next);
  }

  FeatureTable table;
  table.dim = spec.dimension;
  table.curvature_hint = spec.curvature;
  int width = 1;
  for (std::size_t n = level.size(); n >= 10; n /= 10) ++width;
  for (std::size_t leaf = 0; leaf < level.size(); ++leaf) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "c%0*d", width, static_cast<int>(leaf));
    const BallPoint<double> proto = expm0(VecX<double>(level[leaf]), curv);
    const WrappedNormal<double> wn{
        curv, proto, Eigen::VectorXd::Zero(spec.dimension),
        clamp_scale_tril<double>(spec.within_spread *
                                 Eigen::MatrixXd::Identity(spec.dimension, spec.dimension))};
    for (int s = 0; s < spec.samples_per_class; ++s) {
      const BallPoint<double> x = sample(wn, rng.vector(spec.dimension));
      table.rows.emplace_back(buf, logm0(x));
    }
  }
  return table;
}

FeatureTable load_features(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("load_features: cannot open " + path);
  FeatureTable table;
  table.dim = -1;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (line.rfind("#dim=", 0) == 0) {
        table.dim = std::stoi(line.substr(5));
      } else if (line.rfind("#c=", 0) == 0) {
        table.curvature_hint = std::stod(line.substr(3));
      }
      continue;
    }
    if (table.dim < 0) {
      throw std::invalid_argument("load_features: missing #dim header before line " +
                                  std::to_string(line_no));
    }
    std::istringstream row(line);
    std::string label;
    if (!(row >> label)) {
      throw std::invalid_argument("load_features: malformed row at line " +
                                  std::to_string(line_no));
    }
    Eigen::VectorXd v(table.dim);
    for (int i = 0; i < table.dim; ++i) {
      if (!(row >> v[i])) {
        throw std::invalid_argument("load_features: row has fewer than " +
                                    std::to_string(table.dim) + " values at line " +
                                    std::to_string(line_no));
      }
    }
    double extra;
    if (row >> extra) {
      throw std::invalid_argument("load_features: row has more than " +
                                  std::to_string(table.dim) + " values at line " +
                                  std::to_string(line_no));
    }
    if (!v.allFinite()) {
      throw std::invalid_argument("load_features: non-finite value at line " +
                                  std::to_string(line_no));
    }
    table.rows.emplace_back(std::move(label), std::move(v));
  }
  if (table.dim < 0) {
    throw std::invalid_argument("load_features: missing #dim header in " + path);
  }
  return table;
}

void save_features(const FeatureTable& table, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::invalid_argument("save_features: cannot open " + path);
  out << "#dim=" << table.dim << "\n";
  char buf[64];
  if (table.curvature_hint) {
    std::snprintf(buf, sizeof(buf), "#c=%.17g", *table.curvature_hint);
    out << buf << "\n";
  }
  for (const auto& [label, v] : table.rows) {
    if (v.size() != table.dim) {
      throw std::invalid_argument("save_features: row dimension mismatch for " + label);
    }
    out << label;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", v[i]);
      out << "\t" << buf;
    }
    out << "\n";
  }
}

std::vector<std::pair<std::string, BallPoint<double>>> ingest_features(
    const FeatureTable& table, double curvature, bool raw_ball) {
  const Curvature<double> curv(curvature);
  std::vector<std::pair<std::string, BallPoint<double>>> out;
  out.reserve(table.rows.size());
  for (const auto& [label, v] : table.rows) {
    if (label.empty()) throw std::invalid_argument("ingest_features: empty label");
    out.emplace_back(label, raw_ball ? project_to_ball(VecX<double>(v), curv)
                                     : expm0(VecX<double>(v), curv));
  }
  return out;
}

FeaturesByClass<double> group_by_class(
    const std::vector<std::pair<std::string, BallPoint<double>>>& features) {
  std::map<std::string, std::vector<BallPoint<double>>> groups;
  for (const auto& [label, x] : features) groups[label].push_back(x);
  FeaturesByClass<double> out;
  out.reserve(groups.size());
  for (auto& [label, feats] : groups) out.emplace_back(label, std::move(feats));
  return out;
}

AugMode parse_aug_mode(const std::string& name) {
  if (name == "no_aug") return AugMode::kNone;
  if (name == "seen_aug") return AugMode::kSeen;
  if (name == "dual_aug") return AugMode::kDual;
  throw std::invalid_argument("unknown mode '" + name +
                              "' (expected no_aug, seen_aug or dual_aug)");
}

std::string aug_mode_name(AugMode mode) {
  switch (mode) {
    case AugMode::kNone: return "no_aug";
    case AugMode::kSeen: return "seen_aug";
    case AugMode::kDual: return "dual_aug";
  }
  return "?";
}

namespace {

ClassDistributions<double> distributions_for(const EstimatorBank<double>* bank,
                                             const FeaturesByClass<double>& support,
                                             AugMode mode, double c0) {
  if (mode == AugMode::kNone) {
    // initial statistics only, scale factors held fixed
    ClassDistributions<double> dists{Curvature<double>(c0), {}};
    for (const auto& [label, feats] : support) {
      auto fit = fit_initial<double>(feats);
      dists.entries.push_back(ClassEntry<double>{label, Provenance::kSeen,
                                                 fit.prototype.coords, fit.mean,
                                                 fit.scale_tril});
    }
    return dists;
  }
  if (bank == nullptr) {
    throw std::invalid_argument("eval: mode " + aug_mode_name(mode) +
                                " requires an estimator bank");
  }
  auto seen = estimate_seen(*bank, support);
  if (mode == AugMode::kSeen) return seen;
  return concatenate(seen, synthesize_unseen(*bank, seen));
}

struct EpisodeOutcome {
  double acc_seen = 0.0;
  double acc_all = 0.0;
};

EpisodeOutcome run_one_episode(const EstimatorBank<double>* bank,
                               const FeaturesByClass<double>& by_class,
                               const std::vector<std::size_t>& eligible,
                               const EpisodeSpec& spec, AugMode mode,
                               const EvalOptions& opts, double c0, int episode_index) {
  NormalSampler rng(mix_seed(spec.seed, static_cast<std::uint64_t>(episode_index)));

  std::vector<std::size_t> classes = eligible;
  rng.shuffle(classes);
  classes.resize(static_cast<std::size_t>(spec.ways));
  std::sort(classes.begin(), classes.end());  // label order (by_class is sorted)

  FeaturesByClass<double> support;
  std::vector<std::pair<std::string, BallPoint<double>>> queries;
  for (std::size_t ci : classes) {
    const auto& [label, feats] = by_class[ci];
    std::vector<std::size_t> idx(feats.size());
    std::iota(idx.begin(), idx.end(), 0);
    rng.shuffle(idx);
    std::vector<BallPoint<double>> sup;
    for (int k = 0; k < spec.shots; ++k) sup.push_back(feats[idx[static_cast<std::size_t>(k)]]);
    for (int q = 0; q < spec.queries; ++q) {
      queries.emplace_back(label, feats[idx[static_cast<std::size_t>(spec.shots + q)]]);
    }
    support.emplace_back(label, std::move(sup));
  }

  const auto dists = distributions_for(bank, support, mode, c0);
  const auto clf = train_inner(dists, opts.inner);

  // the classifier lives at the estimated curvature; queries follow it
  if (dists.curv.value != c0) {
    for (auto& [label, x] : queries) x = reembed(x, dists.curv);
  }

  Eigen::Index n_seen = 0;
  for (const auto& e : dists.entries) {
    if (e.provenance == Provenance::kSeen) ++n_seen;
  }

  EpisodeOutcome out;
  for (const auto& [label, x] : queries) {
    VecX<double> neg_dist(clf.size());
    for (Eigen::Index r = 0; r < clf.size(); ++r) {
      neg_dist[r] = -distance(x, clf.weight_point(static_cast<std::size_t>(r)));
    }
    Eigen::Index best_seen = 0, best_all = 0;
    neg_dist.head(n_seen).maxCoeff(&best_seen);
    neg_dist.maxCoeff(&best_all);
    if (clf.labels[static_cast<std::size_t>(best_seen)] == label) out.acc_seen += 1.0;
    if (clf.labels[static_cast<std::size_t>(best_all)] == label) out.acc_all += 1.0;
  }
  const double q_total = static_cast<double>(queries.size());
  out.acc_seen /= q_total;
  out.acc_all /= q_total;
  return out;
}

}  // namespace

EpisodeMetrics run_episodes(const EstimatorBank<double>* bank, const FeatureTable& table,
                            const EpisodeSpec& spec, AugMode mode,
                            const EvalOptions& opts) {
  spec.validate();
  const double c0 = bank ? bank->c0 : opts.c0;
  const auto by_class = group_by_class(ingest_features(table, c0, opts.raw_ball));

  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < by_class.size(); ++i) {
    if (by_class[i].second.size() >=
        static_cast<std::size_t>(spec.shots + spec.queries)) {
      eligible.push_back(i);
    }
  }
  if (eligible.size() < static_cast<std::size_t>(spec.ways)) {
    throw std::invalid_argument(
        "eval: need at least " + std::to_string(spec.ways) + " classes with " +
        std::to_string(spec.shots + spec.queries) + " samples each");
  }

  std::vector<EpisodeOutcome> outcomes(static_cast<std::size_t>(spec.episodes));
  const int threads = std::max(1, std::min(opts.threads, spec.episodes));
  auto work = [&](int first, int last) {
    for (int e = first; e < last; ++e) {
      outcomes[static_cast<std::size_t>(e)] =
          run_one_episode(bank, by_class, eligible, spec, mode, opts, c0, e);
    }
  };
  if (threads == 1) {
    work(0, spec.episodes);
  } else {
    std::vector<std::thread> pool;
    const int chunk = (spec.episodes + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
      const int first = t * chunk;
      const int last = std::min(spec.episodes, first + chunk);
      if (first < last) pool.emplace_back(work, first, last);
    }
    for (auto& th : pool) th.join();
  }

  EpisodeMetrics m;
  m.mode = aug_mode_name(mode);
  m.ways = spec.ways;
  m.shots = spec.shots;
  m.queries = spec.queries;
  m.episodes = spec.episodes;
  m.seed = spec.seed;
  double sum = 0.0, sum_all = 0.0;
  for (const auto& o : outcomes) {
    sum += o.acc_seen;
    sum_all += o.acc_all;
  }
  m.mean_acc = sum / spec.episodes;
  m.mean_acc_all_logits = sum_all / spec.episodes;
  if (spec.episodes > 1) {
    double ss = 0.0;
    for (const auto& o : outcomes) {
      ss += (o.acc_seen - m.mean_acc) * (o.acc_seen - m.mean_acc);
    }
    m.ci95 = 1.96 * std::sqrt(ss / (spec.episodes - 1)) / std::sqrt(double(spec.episodes));
  }
  return m;
}

ReplayMetrics run_replay_lite(const EstimatorBank<double>* bank,
                              const std::vector<FeatureTable>& task_stream,
                              int buffer_per_class, AugMode mode,
                              const EvalOptions& opts) {
  if (task_stream.empty()) throw std::invalid_argument("replay: empty task stream");
  if (buffer_per_class < 1) {
    throw std::invalid_argument("replay: buffer_per_class must be >= 1");
  }
  const double c0 = bank ? bank->c0 : opts.c0;

  // disjoint label sets across stages
  std::set<std::string> all_labels;
  for (const auto& stage : task_stream) {
    std::set<std::string> stage_labels;
    for (const auto& [label, v] : stage.rows) stage_labels.insert(label);
    for (const auto& l : stage_labels) {
      if (!all_labels.insert(l).second) {
        throw std::invalid_argument("replay: label '" + l + "' appears in two stages");
      }
    }
  }

  ReplayMetrics out;
  out.mode = aug_mode_name(mode);
  out.buffer_per_class = buffer_per_class;

  FeaturesByClass<double> buffer;  // past classes only, capped per class
  std::vector<std::vector<std::pair<std::string, BallPoint<double>>>> eval_sets;

  for (std::size_t s = 0; s < task_stream.size(); ++s) {
    const auto current = group_by_class(ingest_features(task_stream[s], c0, opts.raw_ball));
    eval_sets.push_back(ingest_features(task_stream[s], c0, opts.raw_ball));

    FeaturesByClass<double> training = buffer;
    training.insert(training.end(), current.begin(), current.end());
    std::sort(training.begin(), training.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });

    const auto dists = distributions_for(bank, training, mode, c0);
    const auto clf = train_inner(dists, opts.inner);
    Eigen::Index n_seen = 0;
    for (const auto& e : dists.entries) {
      if (e.provenance == Provenance::kSeen) ++n_seen;
    }

    ReplayStageMetrics stage_m;
    stage_m.stage = static_cast<int>(s);
    double union_correct = 0.0, union_total = 0.0;
    for (std::size_t past = 0; past < eval_sets.size(); ++past) {
      double correct = 0.0;
      for (const auto& [label, x_raw] : eval_sets[past]) {
        const BallPoint<double> x =
            x_raw.curv.value != dists.curv.value ? reembed(x_raw, dists.curv) : x_raw;
        VecX<double> neg_dist(n_seen);
        for (Eigen::Index r = 0; r < n_seen; ++r) {
          neg_dist[r] = -distance(x, clf.weight_point(static_cast<std::size_t>(r)));
        }
        Eigen::Index best = 0;
        neg_dist.maxCoeff(&best);
        if (clf.labels[static_cast<std::size_t>(best)] == label) correct += 1.0;
      }
      stage_m.accuracy_per_stage.push_back(correct / eval_sets[past].size());
      union_correct += correct;
      union_total += static_cast<double>(eval_sets[past].size());
    }
    stage_m.accuracy_union = union_correct / union_total;
    out.stages.push_back(std::move(stage_m));

    for (const auto& [label, feats] : current) {
      std::vector<BallPoint<double>> kept(
          feats.begin(),
          feats.begin() + std::min<std::size_t>(feats.size(),
                                                static_cast<std::size_t>(buffer_per_class)));
      buffer.emplace_back(label, std::move(kept));
    }
  }
  return out;
}

std::string to_json_string(const EpisodeMetrics& m) {
  nlohmann::json j{{"mode", m.mode},
                   {"N", m.ways},
                   {"K", m.shots},
                   {"Q", m.queries},
                   {"episodes", m.episodes},
                   {"mean_acc", m.mean_acc},
                   {"ci95", m.ci95},
                   {"mean_acc_all_logits", m.mean_acc_all_logits},
                   {"seed", m.seed}};
  return j.dump(2);
}

std::string to_json_string(const ReplayMetrics& m) {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : m.stages) {
    stages.push_back(nlohmann::json{{"stage", s.stage},
                                    {"accuracy_union", s.accuracy_union},
                                    {"accuracy_per_stage", s.accuracy_per_stage}});
  }
  nlohmann::json j{{"mode", m.mode},
                   {"buffer_per_class", m.buffer_per_class},
                   {"seed", m.seed},
                   {"stages", std::move(stages)}};
  return j.dump(2);
}

}  // namespace hdfa
