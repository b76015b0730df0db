#include "gpose/pipeline.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "gpose/parallel.hpp"

namespace gpose {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

EngineOptions EngineOptions::from_config(const Config& config) {
  EngineOptions o;
  o.top_k = config.top_k;
  o.mode = config.estimator_mode;
  o.similarity_threshold = config.similarity_threshold;
  o.delta_px = config.ransac_delta_px;
  return o;
}

Engine::Engine(const TemplateStore& store, std::optional<RegressorWeights> weights, EngineOptions options)
    : store_(store), weights_(std::move(weights)), options_(options), bank_(store.invariant_grids()) {
  if (options_.top_k < 1) throw Error(ErrorCode::kInvalidArgument, "top_k must be at least 1");
  if (options_.mode == EstimatorMode::kSingle) {
    if (!weights_) throw Error(ErrorCode::kInvalidWeights, "single-correspondence mode needs regressor weights");
    weights_->validate();
    const int expected = 2 * store_.templates.front().variant.dim();
    if (weights_->input_dim() != expected)
      throw Error(ErrorCode::kInvalidWeights, "weights expect input dimension " + std::to_string(weights_->input_dim()) +
                                                  ", store variant grids give " + std::to_string(expected));
  }
}

DetectionResult Engine::run(const QueryObservation& query) const {
  DetectionResult out;
  out.scene_id = query.scene_id;
  out.im_id = query.im_id;
  out.obj_id = query.obj_id;
  const auto start = Clock::now();
  try {
    const auto& geom = store_.geom;
    for (const FeatureGrid* g : {&query.invariant, &query.variant})
      if (g->height() != geom.grid_side || g->width() != geom.grid_side)
        throw Error(ErrorCode::kInvalidArgument, "query grid does not match the store patch geometry");
    if (query.variant.dim() != store_.templates.front().variant.dim())
      throw Error(ErrorCode::kInvalidArgument, "query variant dimension differs from the store");

    auto t0 = Clock::now();
    RetrievalOptions ropt;
    ropt.threshold = options_.similarity_threshold;
    ropt.prune = options_.prune;
    ropt.threads = options_.threads;
    RetrievalOutput retrieved = bank_.retrieve_topk(query.invariant, options_.top_k, ropt);
    out.stages.retrieval_ms = ms_since(t0);

    t0 = Clock::now();
    std::vector<Candidate> candidates;
    for (auto& r : retrieved.ranked) {
      const auto& tmpl = store_.templates[static_cast<std::size_t>(r.template_id)];
      Candidate c;
      c.template_id = r.template_id;
      c.similarity = r.similarity;
      c.meta = tmpl.meta;
      if (options_.mode == EstimatorMode::kSingle) {
        // Correspondences whose in-plane prediction is unreliable are dropped.
        for (const auto& corr : r.correspondences) {
          try {
            const Eigen::VectorXf fq = query.variant.descriptor(corr.query_index).transpose();
            const Eigen::VectorXf ft = tmpl.variant.descriptor(corr.template_index).transpose();
            c.predictions.push_back(predict_scale_inplane(*weights_, fq, ft));
            c.correspondences.push_back(corr);
          } catch (const Error& e) {
            if (e.code() != ErrorCode::kUnreliableAngle) throw;
          }
        }
      } else {
        c.correspondences = std::move(r.correspondences);
      }
      candidates.push_back(std::move(c));
    }
    RansacOptions ransac;
    ransac.delta_px = options_.delta_px;
    ransac.threads = options_.threads;
    PoseEstimate est = select_hypothesis(candidates, options_.mode, ransac, geom);
    out.stages.estimation_ms = ms_since(t0);

    t0 = Clock::now();
    const auto& meta = store_.templates[static_cast<std::size_t>(est.template_id)].meta;
    out.pose = recover_candidate_pose(query.meta, meta, est.hypothesis.transform);
    out.stages.recovery_ms = ms_since(t0);

    out.ok = true;
    out.template_id = est.template_id;
    out.score = static_cast<double>(est.hypothesis.inliers.size()) / query.invariant.masked_count();
  } catch (const std::exception& e) {
    out = DetectionResult{};
    out.scene_id = query.scene_id;
    out.im_id = query.im_id;
    out.obj_id = query.obj_id;
    out.diagnostic = e.what();
  }
  out.time_s = std::chrono::duration<double>(Clock::now() - start).count();
  return out;
}

std::vector<DetectionResult> infer(const Engine& engine, const std::vector<QueryObservation>& queries, int threads) {
  std::vector<DetectionResult> out(queries.size());
  parallel_for(static_cast<int>(queries.size()), threads,
               [&](int i) { out[static_cast<std::size_t>(i)] = engine.run(queries[static_cast<std::size_t>(i)]); });
  return out;
}

void write_bop_csv(const std::vector<DetectionResult>& results, std::ostream& out) {
  out << "scene_id,im_id,obj_id,score,R,t,time\n";
  for (const auto& r : results) {
    out << r.scene_id << ',' << r.im_id << ',' << r.obj_id << ',' << fmt(r.score) << ',';
    for (int i = 0; i < 9; ++i) out << (i ? " " : "") << fmt(r.pose.rotation(i / 3, i % 3));
    out << ',';
    for (int i = 0; i < 3; ++i) out << (i ? " " : "") << fmt(r.pose.translation[i]);
    out << ',' << fmt(r.time_s) << '\n';
  }
}

std::vector<BopRow> read_bop_csv(std::istream& in) {
  std::vector<BopRow> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (lineno == 1 && line.rfind("scene_id", 0) == 0)) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, ',')) cols.push_back(col);
    auto bad = [&](const std::string& why) {
      return Error(ErrorCode::kFormat, "CSV line " + std::to_string(lineno) + ": " + why);
    };
    if (cols.size() != 7) throw bad("expected 7 columns");
    BopRow r;
    try {
      r.scene_id = std::stoi(cols[0]);
      r.im_id = std::stoi(cols[1]);
      r.obj_id = std::stoi(cols[2]);
      r.score = std::stod(cols[3]);
      r.time_s = std::stod(cols[6]);
    } catch (const std::exception&) {
      throw bad("bad number");
    }
    std::istringstream rs(cols[4]), ts(cols[5]);
    for (int i = 0; i < 9; ++i)
      if (!(rs >> r.pose.rotation(i / 3, i % 3))) throw bad("R needs 9 values");
    for (int i = 0; i < 3; ++i)
      if (!(ts >> r.pose.translation[i])) throw bad("t needs 3 values");
    rows.push_back(r);
  }
  return rows;
}

std::vector<BopRow> read_bop_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path);
  return read_bop_csv(in);
}

std::vector<QueryObservation> bench_queries(const TemplateStore& store, const BenchOptions& options) {
  if (options.n_queries < 1) throw Error(ErrorCode::kInvalidArgument, "n_queries must be at least 1");
  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> normal(0.0, options.noise);
  auto perturb = [&](const FeatureGrid& g) {
    FeatureGrid out(g.height(), g.width(), g.dim(), g.variant());
    std::vector<double> v(static_cast<std::size_t>(g.dim()));
    for (int c = 0; c < g.cells(); ++c) {
      if (!g.masked(c)) continue;
      for (int d = 0; d < g.dim(); ++d) v[static_cast<std::size_t>(d)] = g.data()(c, d) + normal(rng) / std::sqrt(g.dim());
      out.set_descriptor(c, std::span<const double>(v));
    }
    return out;
  };
  std::vector<QueryObservation> out;
  const int n = static_cast<int>(store.templates.size());
  for (int q = 0; q < options.n_queries; ++q) {
    const auto& t = store.templates[static_cast<std::size_t>((q * 37 + 11) % n)];
    QueryObservation obs;
    obs.scene_id = 0;
    obs.im_id = q;
    obs.obj_id = store.object_id;
    obs.invariant = perturb(t.invariant);
    obs.variant = perturb(t.variant);
    obs.meta.crop = t.meta.crop;
    obs.meta.intrinsics = t.meta.intrinsics;
    out.push_back(std::move(obs));
  }
  return out;
}

BenchReport bench(const Engine& engine, const BenchOptions& options) {
  if (options.repeats < 1) throw Error(ErrorCode::kInvalidArgument, "repeats must be at least 1");
  const auto queries = bench_queries(engine.store(), options);
  std::vector<double> retrieval, estimation, recovery, total;
  BenchReport report;
  std::uint64_t digest = 1469598103934665603ull;
  for (int rep = 0; rep < options.repeats; ++rep) {
    for (const auto& q : queries) {
      const DetectionResult r = engine.run(q);
      retrieval.push_back(r.stages.retrieval_ms);
      estimation.push_back(r.stages.estimation_ms);
      recovery.push_back(r.stages.recovery_ms);
      total.push_back(r.time_s * 1e3);
      if (rep > 0) continue;
      if (!r.ok) ++report.failures;
      // FNV-1a over the pose bytes.
      auto mix = [&digest](double v) {
        unsigned char b[sizeof v];
        std::memcpy(b, &v, sizeof v);
        for (unsigned char c : b) digest = (digest ^ c) * 1099511628211ull;
      };
      for (int i = 0; i < 9; ++i) mix(r.pose.rotation(i / 3, i % 3));
      for (int i = 0; i < 3; ++i) mix(r.pose.translation[i]);
    }
  }
  auto summarize = [](const std::string& name, std::vector<double> v) {
    std::sort(v.begin(), v.end());
    auto pct = [&v](double p) {
      const auto idx = static_cast<std::size_t>(std::ceil(p * static_cast<double>(v.size())) - 1);
      return v[std::min(idx, v.size() - 1)];
    };
    StagePercentiles s;
    s.stage = name;
    s.samples = static_cast<int>(v.size());
    s.p50_ms = pct(0.5);
    s.p90_ms = pct(0.9);
    s.p99_ms = pct(0.99);
    double sum = 0;
    for (double x : v) sum += x;
    s.mean_ms = sum / static_cast<double>(v.size());
    return s;
  };
  report.stages = {summarize("retrieval", retrieval), summarize("estimation", estimation),
                   summarize("pose_recovery", recovery), summarize("total", total)};
  report.pose_digest = digest;
  return report;
}

void write_bench_jsonl(const BenchReport& report, std::ostream& out) {
  for (const auto& s : report.stages) {
    json j = {{"stage", s.stage}, {"samples", s.samples}, {"p50_ms", s.p50_ms},
              {"p90_ms", s.p90_ms}, {"p99_ms", s.p99_ms}, {"mean_ms", s.mean_ms}};
    out << j.dump() << '\n';
  }
  char digest[17];
  std::snprintf(digest, sizeof digest, "%016" PRIx64, report.pose_digest);
  out << json{{"stage", "summary"}, {"failures", report.failures}, {"pose_digest", digest}}.dump() << '\n';
}

namespace {

json affine_json(const Affine2d& a) { return json::array({a.s, a.alpha, a.t.x(), a.t.y()}); }
json intrinsics_json(const Intrinsicsd& k) { return json::array({k.fx, k.fy, k.cx, k.cy}); }

}  // namespace

SynthDatasetPaths write_synthetic_dataset(const std::string& out_dir, const SynthDatasetOptions& options,
                                          const PatchGeometry& geom) {
  const fs::path root(out_dir);
  const fs::path tdir = root / "templates", qdir = root / "queries";
  fs::create_directories(tdir);
  fs::create_directories(qdir);
  const synth::SyntheticObject object(options.seed, options.object);
  const synth::TemplateCamera camera;
  const ViewpointSet views = icosphere_viewpoints(options.subdivisions);

  json tjson;
  tjson["object_id"] = options.object_id;
  tjson["subdivisions"] = options.subdivisions;
  tjson["templates"] = json::array();
  for (std::size_t v = 0; v < views.size(); ++v) {
    const auto tv = synth::template_view(object, views[v].rotation, camera, options.query.pad_ratio, geom);
    const auto grids = synth::render(object, tv.view, geom);
    char name[32];
    std::snprintf(name, sizeof name, "t%03zu", v);
    write_grid_file(grids.invariant, (tdir / (std::string(name) + "_inv.gpfg")).string());
    write_grid_file(grids.variant, (tdir / (std::string(name) + "_var.gpfg")).string());
    const auto& d = views[v].direction;
    tjson["templates"].push_back({{"name", name},
                                  {"direction", {d.x(), d.y(), d.z()}},
                                  {"invariant", std::string(name) + "_inv.gpfg"},
                                  {"variant", std::string(name) + "_var.gpfg"},
                                  {"crop", affine_json(tv.crop.affine)},
                                  {"tz", camera.tz_mm},
                                  {"intrinsics", intrinsics_json(camera.intrinsics)},
                                  {"center", {tv.center_px.x(), tv.center_px.y()}}});
  }
  SynthDatasetPaths paths;
  paths.templates_dir = tdir.string();
  std::ofstream((tdir / "templates.json").string()) << tjson.dump(1) << '\n';

  std::mt19937_64 rng(options.seed ^ 0x9e3779b97f4a7c15ull);
  std::uniform_int_distribution<std::size_t> pick(0, views.size() - 1);
  std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi);
  json qjson;
  qjson["detections"] = json::array();
  std::vector<DetectionResult> gt;
  for (int q = 0; q < options.n_queries; ++q) {
    const std::size_t v = pick(rng);
    const auto query = synth::make_query(object, views[v].direction, angle(rng), rng, options.query, geom);
    const auto grids = synth::render(object, query.view, geom);
    char name[32];
    std::snprintf(name, sizeof name, "q%05d", q);
    write_grid_file(grids.invariant, (qdir / (std::string(name) + "_inv.gpfg")).string());
    write_grid_file(grids.variant, (qdir / (std::string(name) + "_var.gpfg")).string());
    qjson["detections"].push_back({{"scene_id", 1},
                                   {"im_id", q},
                                   {"obj_id", options.object_id},
                                   {"invariant", std::string(name) + "_inv.gpfg"},
                                   {"variant", std::string(name) + "_var.gpfg"},
                                   {"crop", affine_json(query.crop.affine)},
                                   {"intrinsics", intrinsics_json(query.intrinsics)}});
    DetectionResult r;
    r.scene_id = 1;
    r.im_id = q;
    r.obj_id = options.object_id;
    r.ok = true;
    r.score = 1;
    r.pose = query.gt_pose;
    gt.push_back(r);
  }
  paths.queries = (qdir / "queries.json").string();
  std::ofstream(paths.queries) << qjson.dump(1) << '\n';

  paths.ground_truth = (root / "gt.csv").string();
  {
    std::ofstream out(paths.ground_truth);
    write_bop_csv(gt, out);
  }
  paths.weights = (root / "weights.gpwt").string();
  write_weights_file(synth::oracle_regressor(options.object.variant_dim, options.knots), paths.weights);
  paths.model = (root / "model.json").string();
  write_object_model(ObjectModel(object.model_points(options.model_points)), paths.model);
  return paths;
}

ObjectModel load_object_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path);
  try {
    const json j = json::parse(in);
    std::vector<Eigen::Vector3d> pts;
    for (const auto& p : j.at("points")) pts.emplace_back(p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>());
    std::vector<Rotation3d> syms;
    if (j.contains("symmetries"))
      for (const auto& s : j["symmetries"]) {
        if (s.size() != 9) throw Error(ErrorCode::kInvalidModel, "symmetry needs 9 values");
        Rotation3d r;
        for (int i = 0; i < 9; ++i) r(i / 3, i % 3) = s.at(static_cast<std::size_t>(i)).get<double>();
        syms.push_back(r);
      }
    ObjectModel model(std::move(pts), std::move(syms));
    model.validate();
    return model;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormat, path + ": " + e.what());
  }
}

void write_object_model(const ObjectModel& model, const std::string& path) {
  json j;
  j["points"] = json::array();
  for (const auto& p : model.points) j["points"].push_back({p.x(), p.y(), p.z()});
  j["symmetries"] = json::array();
  for (const auto& s : model.symmetries) {
    json r = json::array();
    for (int i = 0; i < 9; ++i) r.push_back(s(i / 3, i % 3));
    j["symmetries"].push_back(r);
  }
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot open " + path + " for writing");
  out << j.dump() << '\n';
}

}  // namespace gpose
