#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "gpose/estimator.hpp"
#include "gpose/featuregrid.hpp"
#include "gpose/geometry.hpp"

namespace gpose {

/// Flat `key = value` configuration. Blank lines and lines starting with '#'
/// are ignored; unknown keys are rejected.
struct Config {
  int subdivisions = 2;
  double similarity_threshold = 0.5;
  double ransac_delta_px = 14.0;
  int top_k = 5;
  double pad_ratio = 0.0;
  EstimatorMode estimator_mode = EstimatorMode::kSingle;

  static Config parse(std::istream& in);
  static Config load(const std::string& path);
};

EstimatorMode parse_estimator_mode(const std::string& s);
const char* to_string(EstimatorMode mode);

struct TemplateRecord {
  int viewpoint = 0;  // index into icosphere_viewpoints(subdivisions)
  Eigen::Vector3d direction = Eigen::Vector3d::UnitZ();
  TemplateMeta meta;
  FeatureGrid invariant;
  FeatureGrid variant;
};

struct TemplateStore {
  int object_id = 0;
  int subdivisions = 2;
  PatchGeometry geom;
  std::vector<TemplateRecord> templates;  // ordered by viewpoint

  void validate() const;
  std::vector<FeatureGrid> invariant_grids() const;
};

// GPST container, little-endian:
//   "GPST" | version u16 | reserved u16 | manifest length u64 | manifest JSON |
//   block count u32 | (offset u64, length u64) per block | GPFG blocks
// Offsets are absolute. Template i owns blocks 2i (invariant) and 2i+1
// (variant).
inline constexpr std::uint16_t kStoreFormatVersion = 1;
void write_store(const TemplateStore& store, std::ostream& out);
TemplateStore read_store(std::istream& in);
void write_store_file(const TemplateStore& store, const std::string& path);
TemplateStore read_store_file(const std::string& path);

/// Builds a store from `dir/templates.json` and the grid files it lists.
/// Throws kOnboarding naming the offending template or missing viewpoint.
TemplateStore onboard_directory(const std::string& dir, const Config& config);

struct QueryObservation {
  int scene_id = 0;
  int im_id = 0;
  int obj_id = 0;
  FeatureGrid invariant;
  FeatureGrid variant;
  QueryMeta meta;
};

/// Reads a query manifest ({"detections": [...]}); grid paths are relative
/// to the manifest's directory.
std::vector<QueryObservation> load_query_manifest(const std::string& path);

}  // namespace gpose
