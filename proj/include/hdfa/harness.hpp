#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hdfa/trainer.hpp"

namespace hdfa {

/// Labeled feature vectors; rows hold tangent-space features unless a caller
/// opts into raw-ball ingestion.
struct FeatureTable {
  int dim = 0;
  std::vector<std::pair<std::string, Eigen::VectorXd>> rows;
  std::optional<double> curvature_hint;
};

struct EpisodeSpec {
  int ways = 5;      // N
  int shots = 1;     // K
  int queries = 15;  // Q
  int episodes = 200;
  std::uint64_t seed = 0;

  void validate() const {
    if (ways < 2) throw std::invalid_argument("episodes: ways must be >= 2");
    if (shots < 1) throw std::invalid_argument("episodes: shots must be >= 1");
    if (queries < 1) throw std::invalid_argument("episodes: queries must be >= 1");
    if (episodes < 1) throw std::invalid_argument("episodes: episode count must be >= 1");
  }
};

struct SyntheticTreeSpec {
  std::vector<int> branching;  // per level; empty derives it from leaf_classes
  int leaf_classes = 0;        // 0 derives it from branching
  int samples_per_class = 20;
  double class_spread = 0.15;  // tangent step per tree level
  double within_spread = 1.0;  // within-class scale factor
  int dimension = 16;
  double curvature = -1.0;
  std::uint64_t seed = 0;
};

/// Resolved per-level branching factors (prefers repeated small factors so
/// that the leaves form a genuine multi-level hierarchy).
std::vector<int> resolve_branching(const SyntheticTreeSpec& spec);

/// Samples a rooted tree of class prototypes in the tangent space (child =
/// parent + class_spread * gaussian), maps the leaves into the ball, draws
/// wrapped-normal samples per leaf class and stores their tangent images.
FeatureTable generate_tree_data(const SyntheticTreeSpec& spec);

/// Text format: `#dim=<d>` header (plus optional `#c=<curvature>`), then one
/// row per feature: label, tab, coordinates with full double precision.
FeatureTable load_features(const std::string& path);
void save_features(const FeatureTable& table, const std::string& path);

/// Maps table rows into the ball: tangent features through expm_0, or a
/// boundary projection when the rows already are ball points.
std::vector<std::pair<std::string, BallPoint<double>>> ingest_features(
    const FeatureTable& table, double curvature, bool raw_ball = false);

/// Sorted-by-label grouping of ingested features.
FeaturesByClass<double> group_by_class(
    const std::vector<std::pair<std::string, BallPoint<double>>>& features);

enum class AugMode { kNone, kSeen, kDual };

AugMode parse_aug_mode(const std::string& name);  // no_aug / seen_aug / dual_aug
std::string aug_mode_name(AugMode mode);

struct EvalOptions {
  double c0 = -1.0;  // ingestion curvature when no bank is given
  bool raw_ball = false;
  InnerConfig inner;
  int threads = 1;
};

struct EpisodeMetrics {
  std::string mode;
  int ways = 0, shots = 0, queries = 0, episodes = 0;
  double mean_acc = 0.0;
  double ci95 = 0.0;
  double mean_acc_all_logits = 0.0;  // argmax over all n+m weights
  std::uint64_t seed = 0;
};

/// Episodic N-way K-shot evaluation. Modes: kNone trains on the initial
/// statistics alone (the estimator networks are never invoked), kSeen refines
/// them with the seen-class ODEs, kDual adds the synthesized unseen classes.
/// Reported accuracy is the argmax over seen-class probabilities; the
/// all-logits variant is reported alongside. Deterministic given the seed,
/// independent of the thread count.
EpisodeMetrics run_episodes(const EstimatorBank<double>* bank, const FeatureTable& table,
                            const EpisodeSpec& spec, AugMode mode,
                            const EvalOptions& opts);

struct ReplayStageMetrics {
  int stage = 0;
  double accuracy_union = 0.0;            // over all stages seen so far
  std::vector<double> accuracy_per_stage;  // indexed by original stage
};

struct ReplayMetrics {
  std::string mode;
  int buffer_per_class = 20;
  std::uint64_t seed = 0;
  std::vector<ReplayStageMetrics> stages;
};

/// Feature-space replay miniature: stages arrive with disjoint label sets; a
/// buffer keeps buffer_per_class features per past class, and at each stage
/// the classifier trains on distributions estimated from current features
/// plus the buffer, then is scored on the union of all stages so far.
ReplayMetrics run_replay_lite(const EstimatorBank<double>* bank,
                              const std::vector<FeatureTable>& task_stream,
                              int buffer_per_class, AugMode mode,
                              const EvalOptions& opts);

std::string to_json_string(const EpisodeMetrics& m);
std::string to_json_string(const ReplayMetrics& m);

}  // namespace hdfa
