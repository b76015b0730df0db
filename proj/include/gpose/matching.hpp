#pragma once

#include <Eigen/Dense>

#include <vector>

#include "gpose/featuregrid.hpp"

namespace gpose {

struct Correspondence {
  PatchIndex query_index;
  PatchIndex template_index;
  double score = 0;  // cosine similarity
};

struct NearestPatch {
  PatchIndex template_index;
  double score = 0;
};

/// Most similar masked template cell for query cell `i` (argmax of the dot
/// product of unit descriptors, smallest row-major index on ties).
NearestPatch nearest_patch(const FeatureGrid& query, PatchIndex i, const FeatureGrid& templ);

struct SimilarityResult {
  double similarity = 0;
  std::vector<Correspondence> correspondences;  // descending score
};

/// Sim(q, t) = (1/|m_Q|) * sum of nearest-neighbour scores over masked query
/// cells, where pairs scoring below `threshold` contribute zero. Returns the
/// pairs that pass the threshold.
SimilarityResult template_similarity(const FeatureGrid& query, const FeatureGrid& templ, double threshold = 0.5);

struct RetrievalResult {
  int template_id = -1;
  double similarity = 0;
  std::vector<Correspondence> correspondences;  // descending score
};

struct RetrievalOptions {
  double threshold = 0.5;
  bool prune = true;  // upper-bound pruning; rankings equal the exhaustive path
  int threads = 1;
};

struct RetrievalOutput {
  std::vector<RetrievalResult> ranked;
  bool k_clamped = false;      // requested k exceeded the collection size
  int exact_evaluations = 0;   // templates scored exactly
};

/// All templates of one object packed for batched scoring.
///
/// Masked template descriptors live in one (sum |m_T|) x D matrix; template j
/// owns rows [offset(j), offset(j+1)). Alongside it a rank-r projection with
/// the residual norm appended gives, by Cauchy-Schwarz, an upper bound
///   q.t <= (Pq).(Pt) + |q - Pq| |t - Pt|
/// on every patch similarity, which bounds Sim per template and lets top-K
/// retrieval skip templates that cannot enter the ranking.
class TemplateBank {
 public:
  TemplateBank() = default;
  /// `bound_rank` < 0 picks D / 8 clamped to [8, 128].
  explicit TemplateBank(const std::vector<FeatureGrid>& grids, int bound_rank = -1);

  int size() const { return static_cast<int>(offsets_.size()) - 1; }
  int dim() const { return dim_; }
  int grid_height() const { return height_; }
  int grid_width() const { return width_; }
  int bound_rank() const { return static_cast<int>(basis_.cols()); }

  /// Sim of every template, computed in f32 blocks per template.
  std::vector<double> similarities(const FeatureGrid& query, double threshold = 0.5, int threads = 1) const;

  /// Upper bounds on the similarity of every template.
  std::vector<double> similarity_bounds(const FeatureGrid& query, double threshold = 0.5, int threads = 1) const;

  /// k highest-similarity templates, descending, ties by smaller id.
  RetrievalOutput retrieve_topk(const FeatureGrid& query, int k, const RetrievalOptions& options = {}) const;

 private:
  struct Scored {
    double similarity = 0;
    std::vector<Correspondence> correspondences;
  };
  Scored score_template(int id, const DescriptorMatrix& query_rows, const std::vector<int>& query_cells,
                        double threshold, bool keep_correspondences) const;
  void check_query(const FeatureGrid& query) const;

  int dim_ = 0, height_ = 0, width_ = 0;
  DescriptorMatrix packed_;
  std::vector<int> offsets_{0};
  std::vector<int> row_cells_;  // grid cell of each packed row
  Eigen::MatrixXf basis_;       // D x r, orthonormal columns
  Eigen::MatrixXd basis_d_;     // basis_ in double for the residual norms
  DescriptorMatrix reduced_;    // packed rows projected, plus residual norm
};

/// Convenience wrapper over TemplateBank for a one-off collection.
RetrievalOutput retrieve_topk(const FeatureGrid& query, const std::vector<FeatureGrid>& templates, int k,
                              const RetrievalOptions& options = {});

}  // namespace gpose
