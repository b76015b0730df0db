#include "gpose/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace gpose {
namespace {

struct RowRef {
  int pair;
  int cell;
};

// Gradient of cos(a, b) with respect to a.
Eigen::VectorXd cosine_grad(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double na, double nb, double cos_ab) {
  return b / (na * nb) - cos_ab * a / (na * na);
}

}  // namespace

InfoNceResult infonce_loss(const InfoNceInput& input, InfoNceMode mode) {
  if (!(input.temperature > 0)) throw Error(ErrorCode::kInvalidArgument, "temperature must be positive");
  const std::size_t b = input.query.size();
  if (input.templ.size() != b || input.positives.size() != b)
    throw Error(ErrorCode::kInvalidArgument, "batch components have different lengths");

  std::vector<RowRef> queries, keys;
  for (std::size_t k = 0; k < b; ++k) {
    if (input.positives[k].empty()) throw Error(ErrorCode::kInvalidArgument, "every pair needs a positive");
    for (const auto& [i, j] : input.positives[k]) {
      if (i < 0 || i >= input.query[k].rows() || j < 0 || j >= input.templ[k].rows())
        throw Error(ErrorCode::kInvalidArgument, "positive index outside the grid");
      queries.push_back({static_cast<int>(k), i});
      keys.push_back({static_cast<int>(k), j});
    }
  }
  const int n = static_cast<int>(queries.size());
  if (n < 2) throw Error(ErrorCode::kDegenerateBatch, "batch has no negative pairs");

  auto qrow = [&](const RowRef& r) -> Eigen::VectorXd { return input.query[static_cast<std::size_t>(r.pair)].row(r.cell).transpose(); };
  auto krow = [&](const RowRef& r) -> Eigen::VectorXd { return input.templ[static_cast<std::size_t>(r.pair)].row(r.cell).transpose(); };

  std::vector<Eigen::VectorXd> qv(static_cast<std::size_t>(n)), kv(static_cast<std::size_t>(n));
  Eigen::VectorXd qn(n), kn(n);
  for (int j = 0; j < n; ++j) {
    qv[static_cast<std::size_t>(j)] = qrow(queries[static_cast<std::size_t>(j)]);
    kv[static_cast<std::size_t>(j)] = krow(keys[static_cast<std::size_t>(j)]);
    qn[j] = qv[static_cast<std::size_t>(j)].norm();
    kn[j] = kv[static_cast<std::size_t>(j)].norm();
    if (!(qn[j] > 0) || !(kn[j] > 0)) throw Error(ErrorCode::kInvalidArgument, "positive descriptor is zero");
  }
  Eigen::MatrixXd sim(n, n);
  for (int j = 0; j < n; ++j)
    for (int l = 0; l < n; ++l)
      sim(j, l) = qv[static_cast<std::size_t>(j)].dot(kv[static_cast<std::size_t>(l)]) / (qn[j] * kn[l]);

  InfoNceResult out;
  for (std::size_t k = 0; k < b; ++k) {
    out.grad_query.push_back(Eigen::MatrixXd::Zero(input.query[k].rows(), input.query[k].cols()));
    out.grad_templ.push_back(Eigen::MatrixXd::Zero(input.templ[k].rows(), input.templ[k].cols()));
  }

  const double inv_tau = 1.0 / input.temperature;
  Eigen::MatrixXd d_sim = Eigen::MatrixXd::Zero(n, n);
  for (int j = 0; j < n; ++j) {
    double max_logit = -std::numeric_limits<double>::infinity();
    for (int l = 0; l < n; ++l)
      if (mode == InfoNceMode::kStandard || l != j) max_logit = std::max(max_logit, sim(j, l) * inv_tau);
    double denom = 0;
    for (int l = 0; l < n; ++l)
      if (mode == InfoNceMode::kStandard || l != j) denom += std::exp(sim(j, l) * inv_tau - max_logit);
    const double lse = max_logit + std::log(denom);
    out.value += lse - sim(j, j) * inv_tau;
    for (int l = 0; l < n; ++l) {
      const double p = (mode == InfoNceMode::kStandard || l != j) ? std::exp(sim(j, l) * inv_tau - lse) : 0.0;
      d_sim(j, l) = (p - (l == j ? 1.0 : 0.0)) * inv_tau;
    }
  }

  for (int j = 0; j < n; ++j) {
    const auto& qr = queries[static_cast<std::size_t>(j)];
    for (int l = 0; l < n; ++l) {
      const double g = d_sim(j, l);
      if (g == 0) continue;
      const auto& kr = keys[static_cast<std::size_t>(l)];
      const auto& a = qv[static_cast<std::size_t>(j)];
      const auto& c = kv[static_cast<std::size_t>(l)];
      out.grad_query[static_cast<std::size_t>(qr.pair)].row(qr.cell) +=
          g * cosine_grad(a, c, qn[j], kn[l], sim(j, l)).transpose();
      out.grad_templ[static_cast<std::size_t>(kr.pair)].row(kr.cell) +=
          g * cosine_grad(c, a, kn[l], qn[j], sim(j, l)).transpose();
    }
  }
  return out;
}

InfoNceResult infonce_loss(const ContrastiveBatch& batch, InfoNceMode mode) {
  InfoNceInput input;
  input.temperature = batch.temperature;
  for (const auto& p : batch.pairs) {
    for (const auto& [i, j] : p.positives) {
      if (i < 0 || i >= p.query.cells() || !p.query.masked(i))
        throw Error(ErrorCode::kInvalidArgument, "positive query cell is not masked");
      if (j < 0 || j >= p.templ.cells() || !p.templ.masked(j))
        throw Error(ErrorCode::kInvalidArgument, "positive template cell is not masked");
    }
    input.query.push_back(p.query.data().cast<double>());
    input.templ.push_back(p.templ.data().cast<double>());
    input.positives.push_back(p.positives);
  }
  return infonce_loss(input, mode);
}

double geodesic(double alpha1, double alpha2) {
  const double x = std::cos(alpha1) * std::cos(alpha2) + std::sin(alpha1) * std::sin(alpha2);
  return std::acos(std::clamp(x, -1.0 + kGeodesicClamp, 1.0 - kGeodesicClamp));
}

ScaleInplaneLoss scale_inplane_loss_raw(std::span<const double> log_s, std::span<const double> cos_pred,
                                        std::span<const double> sin_pred, double s_star, double alpha_star) {
  if (!(s_star > 0)) throw Error(ErrorCode::kInvalidArgument, "ground-truth scale must be positive");
  if (cos_pred.size() != log_s.size() || sin_pred.size() != log_s.size())
    throw Error(ErrorCode::kInvalidArgument, "prediction lists differ in length");
  const double ls_star = std::log(s_star);
  const double cs = std::cos(alpha_star), sn = std::sin(alpha_star);
  ScaleInplaneLoss out;
  for (std::size_t i = 0; i < log_s.size(); ++i) {
    const double d = log_s[i] - ls_star;
    const double x = cos_pred[i] * cs + sin_pred[i] * sn;
    const double lo = -1.0 + kGeodesicClamp, hi = 1.0 - kGeodesicClamp;
    const double xc = std::clamp(x, lo, hi);
    out.value += d * d + std::acos(xc);
    out.d_log_scale.push_back(2.0 * d);
    const double dacos = (x > lo && x < hi) ? -1.0 / std::sqrt(1.0 - x * x) : 0.0;
    out.d_cos.push_back(dacos * cs);
    out.d_sin.push_back(dacos * sn);
  }
  return out;
}

ScaleInplaneLoss scale_inplane_loss(std::span<const double> s_pred, std::span<const double> alpha_pred, double s_star,
                                    double alpha_star) {
  if (alpha_pred.size() != s_pred.size()) throw Error(ErrorCode::kInvalidArgument, "prediction lists differ in length");
  std::vector<double> log_s, c, s;
  for (std::size_t i = 0; i < s_pred.size(); ++i) {
    if (!(s_pred[i] > 0)) throw Error(ErrorCode::kInvalidArgument, "predicted scale must be positive");
    log_s.push_back(std::log(s_pred[i]));
    c.push_back(std::cos(alpha_pred[i]));
    s.push_back(std::sin(alpha_pred[i]));
  }
  return scale_inplane_loss_raw(log_s, c, s, s_star, alpha_star);
}

}  // namespace gpose
