#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "gpose/estimator.hpp"
#include "gpose/eval.hpp"
#include "gpose/store.hpp"
#include "gpose/synthetic.hpp"

namespace gpose {

struct EngineOptions {
  int top_k = 5;
  EstimatorMode mode = EstimatorMode::kSingle;
  double similarity_threshold = 0.5;
  double delta_px = 14.0;
  bool prune = true;
  int threads = 1;  // per-detection workers for retrieval and RANSAC

  static EngineOptions from_config(const Config& config);
};

struct StageTimes {
  double retrieval_ms = 0;
  double estimation_ms = 0;
  double recovery_ms = 0;
};

struct DetectionResult {
  int scene_id = 0;
  int im_id = 0;
  int obj_id = 0;
  bool ok = false;
  double score = 0;  // winning inlier count / masked query patches
  int template_id = -1;
  Pose6Dd pose;
  double time_s = 0;
  StageTimes stages;
  std::string diagnostic;
};

/// Read-only inference state shared by worker threads.
class Engine {
 public:
  Engine(const TemplateStore& store, std::optional<RegressorWeights> weights, EngineOptions options);

  /// Never throws for per-detection problems; failures come back with
  /// ok = false, score 0 and a diagnostic.
  DetectionResult run(const QueryObservation& query) const;

  const EngineOptions& options() const { return options_; }
  const TemplateStore& store() const { return store_; }

 private:
  const TemplateStore& store_;
  std::optional<RegressorWeights> weights_;
  EngineOptions options_;
  TemplateBank bank_;
};

/// Runs every detection on up to `threads` workers; results keep input order.
std::vector<DetectionResult> infer(const Engine& engine, const std::vector<QueryObservation>& queries, int threads);

/// BOP-style rows: scene_id,im_id,obj_id,score,R,t,time with R row-major and
/// t in mm, both space-separated.
void write_bop_csv(const std::vector<DetectionResult>& results, std::ostream& out);

struct BopRow {
  int scene_id = 0;
  int im_id = 0;
  int obj_id = 0;
  double score = 0;
  Pose6Dd pose;
  double time_s = 0;
};
std::vector<BopRow> read_bop_csv(std::istream& in);
std::vector<BopRow> read_bop_csv_file(const std::string& path);

struct BenchOptions {
  int n_queries = 100;
  int repeats = 1;
  std::uint64_t seed = 1;
  double noise = 0.05;  // per-descriptor Gaussian perturbation before renormalization
};

struct StagePercentiles {
  std::string stage;
  int samples = 0;
  double p50_ms = 0, p90_ms = 0, p99_ms = 0, mean_ms = 0;
};

struct BenchReport {
  std::vector<StagePercentiles> stages;  // retrieval, estimation, recovery, total
  std::uint64_t pose_digest = 0;         // hash of the poses, equal across thread counts
  int failures = 0;
};

/// Queries derived from the store's own templates (noisy copies) so any
/// store can be benchmarked.
std::vector<QueryObservation> bench_queries(const TemplateStore& store, const BenchOptions& options);
BenchReport bench(const Engine& engine, const BenchOptions& options);
void write_bench_jsonl(const BenchReport& report, std::ostream& out);

/// Synthetic fixture: onboarding directory, query manifest, ground truth,
/// oracle weights and object model.
struct SynthDatasetOptions {
  std::uint64_t seed = 7;
  int subdivisions = 2;
  int n_queries = 10;
  synth::ObjectParams object;
  synth::QueryParams query;
  int knots = 32;
  int model_points = 500;
  int object_id = 1;
};

struct SynthDatasetPaths {
  std::string templates_dir;  // contains templates.json
  std::string queries;        // queries.json
  std::string ground_truth;   // BOP-style CSV
  std::string weights;        // GPWT
  std::string model;          // model.json
};

SynthDatasetPaths write_synthetic_dataset(const std::string& out_dir, const SynthDatasetOptions& options,
                                          const PatchGeometry& geom = {});

/// {"points": [[x, y, z], ...], "symmetries": [[r00 .. r22], ...]}
ObjectModel load_object_model(const std::string& path);
void write_object_model(const ObjectModel& model, const std::string& path);

}  // namespace gpose
