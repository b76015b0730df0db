#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <tuple>

#include "gpose/eval.hpp"
#include "gpose/gt_corr.hpp"
#include "gpose/parallel.hpp"
#include "gpose/pipeline.hpp"
#include "gpose/store.hpp"

using namespace gpose;
using nlohmann::json;

namespace {

Config load_config(const std::string& path) { return path.empty() ? Config{} : Config::load(path); }

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot open " + path + " for writing");
  return out;
}

Intrinsicsd intrinsics_from(const std::vector<double>& v) {
  if (v.size() != 4) throw Error(ErrorCode::kInvalidArgument, "intrinsics need fx fy cx cy");
  Intrinsicsd k{v[0], v[1], v[2], v[3]};
  k.validate();
  return k;
}

DepthView load_depth_view(const json& j, const std::filesystem::path& root, const PatchGeometry& geom) {
  DepthView v;
  v.depth = read_depth_file((root / j.at("depth").get<std::string>()).string());
  v.intrinsics = intrinsics_from(j.at("intrinsics").get<std::vector<double>>());
  const auto r = j.at("rotation").get<std::vector<double>>();
  const auto t = j.at("translation").get<std::vector<double>>();
  if (r.size() != 9 || t.size() != 3) throw Error(ErrorCode::kInvalidArgument, "pose needs 9 rotation and 3 translation values");
  for (int i = 0; i < 9; ++i) v.pose.rotation(i / 3, i % 3) = r[static_cast<std::size_t>(i)];
  v.pose.translation = Eigen::Vector3d(t[0], t[1], t[2]);
  if (j.contains("mask")) {
    v.patch_mask = j["mask"].get<std::vector<std::uint8_t>>();
  } else {
    v.mask_from_depth(geom);
  }
  return v;
}

int run_onboard(const std::string& input, const std::string& output, const std::string& config) {
  const TemplateStore store = onboard_directory(input, load_config(config));
  write_store_file(store, output);
  std::cerr << "onboarded " << store.templates.size() << " templates into " << output << '\n';
  return 0;
}

int run_infer(const std::string& store_path, const std::string& queries_path, const std::string& weights_path,
              const std::string& output, const std::string& config, int k, const std::string& mode, int threads) {
  const Config cfg = load_config(config);
  EngineOptions opt = EngineOptions::from_config(cfg);
  if (k > 0) opt.top_k = k;
  if (!mode.empty()) opt.mode = parse_estimator_mode(mode);
  const TemplateStore store = read_store_file(store_path);
  std::optional<RegressorWeights> weights;
  if (!weights_path.empty()) weights = read_weights_file(weights_path);
  const Engine engine(store, std::move(weights), opt);
  const auto queries = load_query_manifest(queries_path);
  const auto results = infer(engine, queries, threads);
  for (const auto& r : results)
    if (!r.ok)
      std::cerr << "detection scene " << r.scene_id << " im " << r.im_id << " obj " << r.obj_id << ": " << r.diagnostic
                << '\n';
  auto out = open_out(output);
  write_bop_csv(results, out);
  return 0;
}

struct EvalArgs {
  std::string pred, gt, model, records, errors_out, robustness_out, queries;
  std::vector<double> intrinsics, iou_thresholds{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.01};
  std::vector<int> image_size{640, 480};
};

int run_eval(const EvalArgs& a) {
  const ObjectModel model = load_object_model(a.model);
  using Key = std::tuple<int, int, int>;
  // Per-detection cameras from a query manifest, else one camera for all.
  std::map<Key, std::vector<Intrinsicsd>> cameras;
  if (!a.queries.empty()) {
    std::ifstream in(a.queries);
    if (!in) throw Error(ErrorCode::kIo, "cannot open " + a.queries);
    const json manifest = json::parse(in);
    for (const auto& d : manifest.at("detections"))
      cameras[{d.at("scene_id").get<int>(), d.at("im_id").get<int>(), d.at("obj_id").get<int>()}].push_back(
          intrinsics_from(d.at("intrinsics").get<std::vector<double>>()));
  } else if (a.intrinsics.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "eval needs --intrinsics or --queries");
  }
  std::map<Key, std::size_t> camera_used;
  auto camera_for = [&](const Key& key) {
    if (a.queries.empty()) return intrinsics_from(a.intrinsics);
    const std::size_t idx = camera_used[key]++;
    const auto& list = cameras[key];
    if (idx >= list.size()) throw Error(ErrorCode::kInvalidArgument, "query manifest lacks a ground-truth detection");
    return list[idx];
  };
  if (a.image_size.size() != 2) throw Error(ErrorCode::kInvalidArgument, "image size needs width and height");
  const ArThresholds th = ArThresholds::standard(model.diameter(), a.image_size[0], a.image_size[1]);
  const auto preds = read_bop_csv_file(a.pred);
  const auto gts = read_bop_csv_file(a.gt);

  std::map<Key, std::vector<const BopRow*>> by_key;
  for (const auto& p : preds) by_key[{p.scene_id, p.im_id, p.obj_id}].push_back(&p);
  std::map<Key, std::size_t> used;

  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<DetectionRecord> records;
  std::vector<RecordErrors> errors;
  for (const auto& g : gts) {
    const Key key{g.scene_id, g.im_id, g.obj_id};
    DetectionRecord rec;
    rec.scene_id = g.scene_id;
    rec.im_id = g.im_id;
    rec.obj_id = g.obj_id;
    rec.gt = g.pose;
    rec.intrinsics = camera_for(key);
    const Intrinsicsd& k = rec.intrinsics;
    RecordErrors e{kInf, kInf, 0};
    auto& list = by_key[key];
    const std::size_t idx = used[key]++;
    if (idx < list.size() && list[idx]->score > 0) {
      rec.pred = list[idx]->pose;
      rec.score = list[idx]->score;
      e.mssd_mm = mssd(rec.pred, rec.gt, model);
      try {
        e.mspd_px = mspd(rec.pred, rec.gt, model, k);
      } catch (const Error& ex) {
        if (ex.code() != ErrorCode::kBehindCamera) throw;
      }
    }
    records.push_back(rec);
    errors.push_back(e);
  }

  std::vector<double> e_mssd, e_mspd;
  for (const auto& e : errors) {
    e_mssd.push_back(e.mssd_mm);
    e_mspd.push_back(e.mspd_px);
  }
  const double ar_mssd = recall_curve(e_mssd, th.mssd_mm), ar_mspd = recall_curve(e_mspd, th.mspd_px);
  std::cout << json{{"metric", "AR(MSSD,MSPD)"},  {"n_records", records.size()}, {"ar_mssd", ar_mssd},
                    {"ar_mspd", ar_mspd},         {"ar_mean", 0.5 * (ar_mssd + ar_mspd)}}
                   .dump()
            << '\n';

  if (!a.records.empty()) {
    std::ifstream in(a.records);
    if (!in) throw Error(ErrorCode::kIo, "cannot open " + a.records);
    const json j = json::parse(in);
    std::map<Key, std::size_t> mask_used;
    std::map<Key, std::vector<json>> masks;
    for (const auto& m : j.at("records")) masks[{m.at("scene_id").get<int>(), m.at("im_id").get<int>(), m.at("obj_id").get<int>()}].push_back(m);
    for (auto& r : records) {
      const Key key{r.scene_id, r.im_id, r.obj_id};
      const std::size_t idx = mask_used[key]++;
      if (idx >= masks[key].size())
        throw Error(ErrorCode::kInvalidArgument, "no mask record for scene " + std::to_string(r.scene_id) + " im " +
                                                     std::to_string(r.im_id));
      const json& m = masks[key][idx];
      const int w = m.at("width"), h = m.at("height");
      r.pred_mask = Mask::from_rle(w, h, m.at("pred_rle").get<std::vector<std::uint32_t>>());
      r.gt_mask = Mask::from_rle(w, h, m.at("gt_rle").get<std::vector<std::uint32_t>>());
    }
    for (std::size_t i = 0; i < records.size(); ++i) errors[i].iou = mask_iou(records[i].pred_mask, records[i].gt_mask);

    // Same filter and AR as robustness_curve, reusing the errors above so
    // failed detections count as misses.
    std::vector<RobustnessRow> rows;
    for (double tau : a.iou_thresholds) {
      RobustnessRow row;
      row.iou_threshold = tau;
      std::vector<double> fm, fp;
      for (const auto& e : errors)
        if (e.iou < tau) {
          fm.push_back(e.mssd_mm);
          fp.push_back(e.mspd_px);
        }
      row.n_records = static_cast<int>(fm.size());
      if (!fm.empty()) {
        row.ar_mssd = recall_curve(fm, th.mssd_mm);
        row.ar_mspd = recall_curve(fp, th.mspd_px);
        row.ar_mean = 0.5 * (*row.ar_mssd + *row.ar_mspd);
      }
      rows.push_back(row);
    }
    if (!a.robustness_out.empty()) {
      auto out = open_out(a.robustness_out);
      write_robustness_csv(rows, out);
    } else {
      write_robustness_csv(rows, std::cout);
    }
  }
  if (!a.errors_out.empty()) {
    auto out = open_out(a.errors_out);
    write_error_csv(records, errors, out);
  }
  return 0;
}

int run_bench(const std::string& store_path, const std::string& weights_path, const std::string& config,
              const BenchOptions& opts, int k, const std::string& mode, int threads, bool no_prune) {
  EngineOptions eopt = EngineOptions::from_config(load_config(config));
  if (k > 0) eopt.top_k = k;
  if (!mode.empty()) eopt.mode = parse_estimator_mode(mode);
  eopt.threads = threads;
  eopt.prune = !no_prune;
  if (opts.repeats < 1) throw Error(ErrorCode::kInvalidArgument, "repeats must be at least 1");
  const TemplateStore store = read_store_file(store_path);
  std::optional<RegressorWeights> weights;
  if (!weights_path.empty()) weights = read_weights_file(weights_path);
  const Engine engine(store, std::move(weights), eopt);
  write_bench_jsonl(bench(engine, opts), std::cout);
  return 0;
}

int run_gtcorr(const std::string& job_path, const std::string& output) {
  std::ifstream in(job_path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + job_path);
  const json job = json::parse(in);
  const auto root = std::filesystem::path(job_path).parent_path();
  const PatchGeometry geom;
  const DepthView src = load_depth_view(job.at("source"), root, geom);
  const DepthView tgt = load_depth_view(job.at("target"), root, geom);
  auto corrs = reproject_correspondences(src, tgt, geom);
  if (job.value("symmetric", false)) corrs = symmetrize(corrs, reproject_correspondences(tgt, src, geom));
  std::ofstream file;
  if (!output.empty()) file = open_out(output);
  std::ostream& out = output.empty() ? std::cout : file;
  out << "src_row,src_col,tgt_row,tgt_col\n";
  for (const auto& c : corrs)
    out << c.query_index.row << ',' << c.query_index.col << ',' << c.template_index.row << ','
        << c.template_index.col << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Template-based coarse 6D pose engine"};
  app.require_subcommand(1);

  std::string config;
  auto* onboard = app.add_subcommand("onboard", "Build a template store from an onboarding directory");
  std::string ob_input, ob_output;
  onboard->add_option("--input", ob_input, "Directory with templates.json and grid files")->required();
  onboard->add_option("--output", ob_output, "Store file to write")->required();
  onboard->add_option("--config", config, "key = value configuration file");

  auto* inf = app.add_subcommand("infer", "Estimate poses for a query manifest");
  std::string in_store, in_queries, in_weights, in_output, in_mode;
  int in_k = 0, in_threads = default_thread_count();
  inf->add_option("--store", in_store)->required();
  inf->add_option("--queries", in_queries, "queries.json manifest")->required();
  inf->add_option("--weights", in_weights, "GPWT regressor weights (single mode)");
  inf->add_option("--output", in_output, "BOP-style CSV")->required();
  inf->add_option("--config", config);
  inf->add_option("--k", in_k, "Top-K templates (overrides config)");
  inf->add_option("--mode", in_mode, "single or kabsch (overrides config)");
  inf->add_option("--threads", in_threads, "Detections processed in parallel");

  auto* ev = app.add_subcommand("eval", "Score predictions against ground truth");
  EvalArgs ea;
  ev->add_option("--pred", ea.pred)->required();
  ev->add_option("--gt", ea.gt)->required();
  ev->add_option("--model", ea.model, "Object model JSON")->required();
  ev->add_option("--intrinsics", ea.intrinsics, "fx fy cx cy shared by every detection")->expected(4);
  ev->add_option("--queries", ea.queries, "Query manifest supplying per-detection intrinsics");
  ev->add_option("--image-size", ea.image_size, "Width and height for the MSPD thresholds")->expected(2);
  ev->add_option("--records", ea.records, "Mask records JSON for the robustness table");
  ev->add_option("--iou-thresholds", ea.iou_thresholds);
  ev->add_option("--errors-out", ea.errors_out, "Per-record error CSV");
  ev->add_option("--robustness-out", ea.robustness_out, "Robustness CSV");

  auto* be = app.add_subcommand("bench", "Per-stage latency percentiles as JSON lines");
  std::string be_store, be_weights, be_mode;
  BenchOptions bopt;
  int be_k = 0, be_threads = 1;
  bool be_no_prune = false;
  be->add_option("--store", be_store)->required();
  be->add_option("--weights", be_weights);
  be->add_option("--config", config);
  be->add_option("--queries", bopt.n_queries, "Number of synthetic queries");
  be->add_option("--repeats", bopt.repeats);
  be->add_option("--seed", bopt.seed);
  be->add_option("--k", be_k);
  be->add_option("--mode", be_mode);
  be->add_option("--threads", be_threads, "Workers inside each detection");
  be->add_flag("--no-prune", be_no_prune, "Score every template exactly");

  auto* gc = app.add_subcommand("gtcorr", "Ground-truth patch correspondences from a depth pair");
  std::string gc_job, gc_output;
  gc->add_option("--job", gc_job, "JSON job describing the source and target views")->required();
  gc->add_option("--output", gc_output, "CSV output (stdout when omitted)");

  auto* sy = app.add_subcommand("synth", "Write a synthetic onboarding directory, queries and ground truth");
  std::string sy_out;
  SynthDatasetOptions sopt;
  sy->add_option("--out", sy_out)->required();
  sy->add_option("--seed", sopt.seed);
  sy->add_option("--subdivisions", sopt.subdivisions);
  sy->add_option("--queries", sopt.n_queries);
  sy->add_option("--inv-dim", sopt.object.invariant_dim);
  sy->add_option("--var-dim", sopt.object.variant_dim);
  sy->add_option("--crop-scale-min", sopt.query.crop_scale_min);
  sy->add_option("--crop-scale-max", sopt.query.crop_scale_max);
  sy->add_option("--pad", sopt.query.pad_ratio);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*onboard) return run_onboard(ob_input, ob_output, config);
    if (*inf) return run_infer(in_store, in_queries, in_weights, in_output, config, in_k, in_mode, in_threads);
    if (*ev) return run_eval(ea);
    if (*be) return run_bench(be_store, be_weights, config, bopt, be_k, be_mode, be_threads, be_no_prune);
    if (*gc) return run_gtcorr(gc_job, gc_output);
    if (*sy) {
      const auto p = write_synthetic_dataset(sy_out, sopt);
      std::cout << json{{"templates", p.templates_dir}, {"queries", p.queries}, {"ground_truth", p.ground_truth},
                        {"weights", p.weights},         {"model", p.model}}
                       .dump()
                << '\n';
      return 0;
    }
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
