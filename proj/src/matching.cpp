#include "gpose/matching.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "gpose/parallel.hpp"

namespace gpose {
namespace {

// Slack added to every bound; covers f32 rounding in both the bound and the
// exact products (both are O(1e-6) for unit descriptors).
constexpr double kBoundSlack = 1e-4;

double dot_f64(const float* a, const float* b, int dim) {
  double acc = 0;
  for (int d = 0; d < dim; ++d) acc += static_cast<double>(a[d]) * static_cast<double>(b[d]);
  return std::clamp(acc, -1.0, 1.0);
}

void sort_by_score(std::vector<Correspondence>& corrs, int width) {
  std::stable_sort(corrs.begin(), corrs.end(), [width](const Correspondence& a, const Correspondence& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.query_index.linear(width) < b.query_index.linear(width);
  });
}

void check_compatible(const FeatureGrid& a, const FeatureGrid& b) {
  if (a.dim() != b.dim()) throw Error(ErrorCode::kInvalidArgument, "descriptor dimensions differ");
}

}  // namespace

NearestPatch nearest_patch(const FeatureGrid& query, PatchIndex i, const FeatureGrid& templ) {
  check_compatible(query, templ);
  if (i.row < 0 || i.col < 0 || i.row >= query.height() || i.col >= query.width())
    throw Error(ErrorCode::kInvalidArgument, "query index outside the grid");
  if (!query.masked(i)) throw Error(ErrorCode::kInvalidArgument, "query cell is not masked");
  const float* q = query.data().row(i.linear(query.width())).data();
  int best = -1;
  double best_score = -2.0;
  for (int c = 0; c < templ.cells(); ++c) {
    if (!templ.masked(c)) continue;
    const double sc = dot_f64(q, templ.data().row(c).data(), templ.dim());
    if (sc > best_score) {
      best_score = sc;
      best = c;
    }
  }
  if (best < 0) throw Error(ErrorCode::kNoCandidates, "template mask is empty");
  return {templ.index_of(best), best_score};
}

SimilarityResult template_similarity(const FeatureGrid& query, const FeatureGrid& templ, double threshold) {
  check_compatible(query, templ);
  const std::vector<int> cells = query.masked_cells();
  if (cells.empty()) throw Error(ErrorCode::kNoCandidates, "query mask is empty");
  SimilarityResult out;
  double sum = 0;
  for (int c : cells) {
    const PatchIndex qi = query.index_of(c);
    const NearestPatch nn = nearest_patch(query, qi, templ);
    if (nn.score >= threshold) {
      sum += nn.score;
      out.correspondences.push_back({qi, nn.template_index, nn.score});
    }
  }
  out.similarity = sum / static_cast<double>(cells.size());
  sort_by_score(out.correspondences, query.width());
  return out;
}

TemplateBank::TemplateBank(const std::vector<FeatureGrid>& grids, int bound_rank) {
  if (grids.empty()) return;
  dim_ = grids.front().dim();
  height_ = grids.front().height();
  width_ = grids.front().width();
  int total = 0;
  for (const auto& g : grids) {
    if (g.dim() != dim_ || g.height() != height_ || g.width() != width_)
      throw Error(ErrorCode::kInvalidArgument, "templates must share grid shape and descriptor dimension");
    total += g.masked_count();
  }
  packed_.resize(total, dim_);
  row_cells_.reserve(static_cast<std::size_t>(total));
  int row = 0;
  for (const auto& g : grids) {
    for (int c : g.masked_cells()) {
      packed_.row(row++) = g.data().row(c);
      row_cells_.push_back(c);
    }
    offsets_.push_back(row);
  }

  // Rank-r basis by randomized subspace iteration on a strided row sample.
  if (bound_rank < 0) bound_rank = std::clamp(dim_ / 8, 8, 128);
  const int rank = std::clamp(bound_rank, 0, std::min(dim_, std::max(total, 0)));
  basis_.resize(dim_, rank);
  if (rank > 0) {
    const int stride = std::max(1, total / 4096);
    const int sample_rows = (total + stride - 1) / stride;
    Eigen::MatrixXd sample(sample_rows, dim_);
    for (int r = 0; r < sample_rows; ++r) sample.row(r) = packed_.row(r * stride).cast<double>();
    std::mt19937_64 rng(0x5eedULL);
    std::normal_distribution<double> normal;
    Eigen::MatrixXd q(dim_, rank);
    for (int i = 0; i < q.size(); ++i) q.data()[i] = normal(rng);
    for (int it = 0; it < 3; ++it) {
      Eigen::MatrixXd y = sample.transpose() * (sample * q);
      Eigen::HouseholderQR<Eigen::MatrixXd> qr(y);
      q = qr.householderQ() * Eigen::MatrixXd::Identity(dim_, rank);
    }
    basis_ = q.cast<float>();
  }

  reduced_.resize(total, rank + 1);
  basis_d_ = basis_.cast<double>();
  for (int r0 = 0; r0 < total; r0 += 4096) {
    const int len = std::min(4096, total - r0);
    const Eigen::MatrixXd t = packed_.middleRows(r0, len).cast<double>();
    const Eigen::MatrixXd proj = t * basis_d_;
    for (int r = 0; r < len; ++r) {
      const double resid2 = std::max(0.0, t.row(r).squaredNorm() - proj.row(r).squaredNorm());
      reduced_.row(r0 + r).head(rank) = proj.row(r).cast<float>();
      reduced_(r0 + r, rank) = static_cast<float>(std::sqrt(resid2));
    }
  }
}

void TemplateBank::check_query(const FeatureGrid& query) const {
  if (size() <= 0) throw Error(ErrorCode::kNoCandidates, "template collection is empty");
  if (query.dim() != dim_) throw Error(ErrorCode::kInvalidArgument, "query descriptor dimension differs from templates");
  if (query.masked_count() == 0) throw Error(ErrorCode::kNoCandidates, "query mask is empty");
}

namespace {

struct QueryRows {
  DescriptorMatrix rows;
  std::vector<int> cells;
};

QueryRows gather_query(const FeatureGrid& query) {
  QueryRows q;
  q.cells = query.masked_cells();
  q.rows.resize(static_cast<int>(q.cells.size()), query.dim());
  for (std::size_t i = 0; i < q.cells.size(); ++i) q.rows.row(static_cast<int>(i)) = query.data().row(q.cells[i]);
  return q;
}

}  // namespace

TemplateBank::Scored TemplateBank::score_template(int id, const DescriptorMatrix& query_rows,
                                                  const std::vector<int>& query_cells, double threshold,
                                                  bool keep_correspondences) const {
  const int begin = offsets_[static_cast<std::size_t>(id)];
  const int rows = offsets_[static_cast<std::size_t>(id) + 1] - begin;
  Scored out;
  if (rows == 0) return out;
  const Eigen::MatrixXf sims = packed_.middleRows(begin, rows) * query_rows.transpose();
  double sum = 0;
  for (int i = 0; i < sims.cols(); ++i) {
    const float best = sims.col(i).maxCoeff();
    const double score = std::min(1.0, static_cast<double>(best));
    if (score < threshold) continue;
    sum += score;
    if (keep_correspondences) {
      int arg = 0;
      while (sims(arg, i) != best) ++arg;
      const int qc = query_cells[static_cast<std::size_t>(i)];
      const int tc = row_cells_[static_cast<std::size_t>(begin + arg)];
      out.correspondences.push_back({{qc / width_, qc % width_}, {tc / width_, tc % width_}, score});
    }
  }
  out.similarity = sum / static_cast<double>(query_cells.size());
  if (keep_correspondences) sort_by_score(out.correspondences, width_);
  return out;
}

std::vector<double> TemplateBank::similarities(const FeatureGrid& query, double threshold, int threads) const {
  check_query(query);
  const QueryRows q = gather_query(query);
  std::vector<double> out(static_cast<std::size_t>(size()));
  parallel_for(size(), threads, [&](int j) {
    out[static_cast<std::size_t>(j)] = score_template(j, q.rows, q.cells, threshold, false).similarity;
  });
  return out;
}

std::vector<double> TemplateBank::similarity_bounds(const FeatureGrid& query, double threshold, int threads) const {
  check_query(query);
  const QueryRows q = gather_query(query);
  const int rank = bound_rank();
  const Eigen::MatrixXd rows_d = q.rows.cast<double>();
  const Eigen::MatrixXd proj = rows_d * basis_d_;
  DescriptorMatrix qr(q.rows.rows(), rank + 1);
  for (int i = 0; i < q.rows.rows(); ++i) {
    qr.row(i).head(rank) = proj.row(i).cast<float>();
    qr(i, rank) = static_cast<float>(std::sqrt(std::max(0.0, rows_d.row(i).squaredNorm() - proj.row(i).squaredNorm())));
  }
  const double n = static_cast<double>(q.cells.size());
  // Templates grouped into blocks of about kBlockRows packed rows so each
  // block is one GEMM; per-template maxima are taken over row segments.
  constexpr int kBlockRows = 2048;
  std::vector<int> block_start{0};
  for (int j = 0; j < size(); ++j)
    if (offsets_[static_cast<std::size_t>(j) + 1] - offsets_[static_cast<std::size_t>(block_start.back())] > kBlockRows &&
        j > block_start.back())
      block_start.push_back(j);
  block_start.push_back(size());
  std::vector<double> out(static_cast<std::size_t>(size()));
  const DescriptorMatrix qt = qr.transpose();
  parallel_for(static_cast<int>(block_start.size()) - 1, threads, [&](int blk) {
    const int j0 = block_start[static_cast<std::size_t>(blk)], j1 = block_start[static_cast<std::size_t>(blk) + 1];
    const int row0 = offsets_[static_cast<std::size_t>(j0)];
    const int rows = offsets_[static_cast<std::size_t>(j1)] - row0;
    Eigen::MatrixXf ub(rows, qt.cols());
    ub.noalias() = reduced_.middleRows(row0, rows) * qt;
    for (int j = j0; j < j1; ++j) {
      const int begin = offsets_[static_cast<std::size_t>(j)] - row0;
      const int len = offsets_[static_cast<std::size_t>(j) + 1] - offsets_[static_cast<std::size_t>(j)];
      if (len == 0) {
        out[static_cast<std::size_t>(j)] = 0;
        continue;
      }
      const Eigen::RowVectorXf col_max = ub.middleRows(begin, len).colwise().maxCoeff();
      double sum = 0;
      for (int i = 0; i < col_max.size(); ++i) {
        const double b = std::min(1.0, static_cast<double>(col_max[i]) + kBoundSlack);
        if (b >= threshold) sum += b;
      }
      out[static_cast<std::size_t>(j)] = sum / n;
    }
  });
  return out;
}

RetrievalOutput TemplateBank::retrieve_topk(const FeatureGrid& query, int k, const RetrievalOptions& options) const {
  if (k < 1) throw Error(ErrorCode::kInvalidArgument, "k must be at least 1");
  check_query(query);
  RetrievalOutput out;
  if (k > size()) {
    k = size();
    out.k_clamped = true;
  }
  const QueryRows q = gather_query(query);
  const int threads = std::max(1, options.threads);

  std::vector<int> order(static_cast<std::size_t>(size()));
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> bounds;
  if (options.prune) {
    bounds = similarity_bounds(query, options.threshold, threads);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return bounds[static_cast<std::size_t>(a)] > bounds[static_cast<std::size_t>(b)];
    });
  }

  std::vector<std::pair<int, Scored>> scored;
  auto better = [](const std::pair<int, Scored>& a, const std::pair<int, Scored>& b) {
    if (a.second.similarity != b.second.similarity) return a.second.similarity > b.second.similarity;
    return a.first < b.first;
  };

  std::size_t pos = 0;
  const std::size_t wave = static_cast<std::size_t>(std::max(k, threads));
  while (pos < order.size()) {
    if (options.prune && static_cast<int>(scored.size()) >= k) {
      std::nth_element(scored.begin(), scored.begin() + (k - 1), scored.end(), better);
      const double kth = scored[static_cast<std::size_t>(k - 1)].second.similarity;
      if (bounds[static_cast<std::size_t>(order[pos])] < kth) break;
    }
    const std::size_t end = options.prune ? std::min(order.size(), pos + wave) : order.size();
    std::vector<std::pair<int, Scored>> batch(end - pos);
    parallel_for(static_cast<int>(batch.size()), threads, [&](int b) {
      const int id = order[pos + static_cast<std::size_t>(b)];
      batch[static_cast<std::size_t>(b)] = {id, score_template(id, q.rows, q.cells, options.threshold, true)};
    });
    for (auto& s : batch) scored.push_back(std::move(s));
    pos = end;
  }

  out.exact_evaluations = static_cast<int>(scored.size());
  std::sort(scored.begin(), scored.end(), better);
  for (int i = 0; i < k; ++i) {
    auto& s = scored[static_cast<std::size_t>(i)];
    out.ranked.push_back({s.first, s.second.similarity, std::move(s.second.correspondences)});
  }
  return out;
}

RetrievalOutput retrieve_topk(const FeatureGrid& query, const std::vector<FeatureGrid>& templates, int k,
                              const RetrievalOptions& options) {
  if (templates.empty()) throw Error(ErrorCode::kNoCandidates, "template collection is empty");
  return TemplateBank(templates).retrieve_topk(query, k, options);
}

}  // namespace gpose
