#include "gpose/store.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include "gpose/binary_io.hpp"

namespace gpose {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  std::istringstream is(value);
  T v;
  is >> v;
  if (!is || !is.eof()) throw Error(ErrorCode::kInvalidArgument, "config key '" + key + "': bad value '" + value + "'");
  return v;
}

json affine_json(const Affine2d& a) { return json::array({a.s, a.alpha, a.t.x(), a.t.y()}); }
json intrinsics_json(const Intrinsicsd& k) { return json::array({k.fx, k.fy, k.cx, k.cy}); }

std::vector<double> numbers(const json& j, std::size_t n, const std::string& what) {
  if (!j.is_array() || j.size() != n)
    throw Error(ErrorCode::kInvalidArgument, what + " must be an array of " + std::to_string(n) + " numbers");
  std::vector<double> v;
  for (const auto& x : j) {
    if (!x.is_number()) throw Error(ErrorCode::kInvalidArgument, what + " must contain numbers");
    v.push_back(x.get<double>());
  }
  return v;
}

Affine2d affine_from(const json& j, const std::string& what) {
  const auto v = numbers(j, 4, what);
  if (!(v[0] > 0)) throw Error(ErrorCode::kInvalidArgument, what + " scale must be positive");
  return Affine2d(v[0], v[1], Eigen::Vector2d(v[2], v[3]));
}

Intrinsicsd intrinsics_from(const json& j, const std::string& what) {
  const auto v = numbers(j, 4, what);
  Intrinsicsd k{v[0], v[1], v[2], v[3]};
  k.validate();
  return k;
}

Rotation3d rotation_from(const json& j, const std::string& what) {
  const auto v = numbers(j, 9, what);
  Rotation3d r;
  for (int i = 0; i < 9; ++i) r(i / 3, i % 3) = v[static_cast<std::size_t>(i)];
  if (!is_rotation(r, 1e-6)) throw Error(ErrorCode::kInvalidArgument, what + " is not a rotation matrix");
  return r;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormat, path + ": " + e.what());
  }
}

void check_shapes(const FeatureGrid& g, const PatchGeometry& geom, const std::string& what) {
  if (g.height() != geom.grid_side || g.width() != geom.grid_side)
    throw Error(ErrorCode::kOnboarding, what + ": grid is " + std::to_string(g.height()) + "x" +
                                            std::to_string(g.width()) + ", expected " +
                                            std::to_string(geom.grid_side) + "x" + std::to_string(geom.grid_side));
}

}  // namespace

EstimatorMode parse_estimator_mode(const std::string& s) {
  if (s == "single") return EstimatorMode::kSingle;
  if (s == "kabsch") return EstimatorMode::kKabsch;
  throw Error(ErrorCode::kInvalidArgument, "estimator mode must be 'single' or 'kabsch', got '" + s + "'");
}

const char* to_string(EstimatorMode mode) { return mode == EstimatorMode::kSingle ? "single" : "kabsch"; }

Config Config::parse(std::istream& in) {
  Config c;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorCode::kInvalidArgument, "config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key == "subdivisions") c.subdivisions = parse_number<int>(key, value);
    else if (key == "similarity_threshold") c.similarity_threshold = parse_number<double>(key, value);
    else if (key == "ransac_delta_px") c.ransac_delta_px = parse_number<double>(key, value);
    else if (key == "top_k") c.top_k = parse_number<int>(key, value);
    else if (key == "pad_ratio") c.pad_ratio = parse_number<double>(key, value);
    else if (key == "estimator_mode") c.estimator_mode = parse_estimator_mode(value);
    else throw Error(ErrorCode::kInvalidArgument, "unknown config key '" + key + "'");
  }
  if (c.subdivisions < 0 || c.subdivisions > 4) throw Error(ErrorCode::kInvalidArgument, "subdivisions must be in 0..4");
  if (c.top_k < 1) throw Error(ErrorCode::kInvalidArgument, "top_k must be at least 1");
  if (!(c.similarity_threshold >= -1 && c.similarity_threshold <= 1))
    throw Error(ErrorCode::kInvalidArgument, "similarity_threshold must be a cosine in [-1, 1]");
  if (!(c.ransac_delta_px > 0)) throw Error(ErrorCode::kInvalidArgument, "ransac_delta_px must be positive");
  if (!(c.pad_ratio >= 0)) throw Error(ErrorCode::kInvalidArgument, "pad_ratio must be non-negative");
  return c;
}

Config Config::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path);
  return parse(in);
}

void TemplateStore::validate() const {
  geom.validate();
  if (static_cast<int>(templates.size()) != icosphere_vertex_count(subdivisions))
    throw Error(ErrorCode::kOnboarding, "template count does not match the viewpoint set");
  for (std::size_t i = 0; i < templates.size(); ++i) {
    const auto& t = templates[i];
    if (t.viewpoint != static_cast<int>(i)) throw Error(ErrorCode::kOnboarding, "templates are not in viewpoint order");
    const std::string name = "template " + std::to_string(i);
    check_shapes(t.invariant, geom, name + " invariant");
    check_shapes(t.variant, geom, name + " variant");
    if (t.invariant.dim() != templates.front().invariant.dim() || t.variant.dim() != templates.front().variant.dim())
      throw Error(ErrorCode::kOnboarding, name + ": descriptor dimension differs from template 0");
  }
}

std::vector<FeatureGrid> TemplateStore::invariant_grids() const {
  std::vector<FeatureGrid> out;
  out.reserve(templates.size());
  for (const auto& t : templates) out.push_back(t.invariant);
  return out;
}

void write_store(const TemplateStore& store, std::ostream& out) {
  json manifest;
  manifest["object_id"] = store.object_id;
  manifest["subdivisions"] = store.subdivisions;
  manifest["geometry"] = {{"patch_size", store.geom.patch_size},
                          {"grid_side", store.geom.grid_side},
                          {"image_side", store.geom.image_side}};
  json templates = json::array();
  std::vector<std::string> blocks;
  for (const auto& t : store.templates) {
    json r = json::array();
    for (int i = 0; i < 9; ++i) r.push_back(t.meta.r_ae(i / 3, i % 3));
    templates.push_back({{"viewpoint", t.viewpoint},
                         {"direction", {t.direction.x(), t.direction.y(), t.direction.z()}},
                         {"rotation", r},
                         {"crop", affine_json(t.meta.crop)},
                         {"tz", t.meta.tz_mm},
                         {"intrinsics", intrinsics_json(t.meta.intrinsics)},
                         {"center", {t.meta.center_px.x(), t.meta.center_px.y()}}});
    for (const FeatureGrid* g : {&t.invariant, &t.variant}) {
      std::ostringstream os;
      write_grid(*g, os);
      blocks.push_back(os.str());
    }
  }
  manifest["templates"] = templates;
  const std::string text = manifest.dump();

  io::Writer w(out);
  w.put_magic("GPST");
  w.put<std::uint16_t>(kStoreFormatVersion);
  w.put<std::uint16_t>(0);
  w.put<std::uint64_t>(text.size());
  w.put_bytes(text.data(), text.size());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(blocks.size()));
  std::uint64_t offset = w.written() + blocks.size() * 16;
  for (const auto& b : blocks) {
    w.put<std::uint64_t>(offset);
    w.put<std::uint64_t>(b.size());
    offset += b.size();
  }
  for (const auto& b : blocks) w.put_bytes(b.data(), b.size());
  w.check();
}

TemplateStore read_store(std::istream& in) {
  io::Reader r(in);
  r.expect_magic("GPST");
  const auto version_at = r.offset();
  if (const auto v = r.get<std::uint16_t>("version"); v != kStoreFormatVersion)
    throw FormatError(ErrorCode::kFormat, version_at, "unsupported GPST version " + std::to_string(v));
  r.get<std::uint16_t>("reserved");
  const auto len_at = r.offset();
  const auto len = r.get<std::uint64_t>("manifest length");
  if (len > (1ull << 30)) throw FormatError(ErrorCode::kFormat, len_at, "manifest length is implausible");
  const auto manifest_at = r.offset();
  std::string text(static_cast<std::size_t>(len), '\0');
  r.read_raw(text.data(), text.size(), "manifest");

  TemplateStore store;
  std::size_t template_count = 0;
  json manifest;
  try {
    manifest = json::parse(text);
    store.object_id = manifest.at("object_id").get<int>();
    store.subdivisions = manifest.at("subdivisions").get<int>();
    const auto& g = manifest.at("geometry");
    store.geom = {g.at("patch_size").get<int>(), g.at("grid_side").get<int>(), g.at("image_side").get<int>()};
    template_count = manifest.at("templates").size();
  } catch (const json::exception& e) {
    throw FormatError(ErrorCode::kFormat, manifest_at, std::string("bad store manifest: ") + e.what());
  }

  const auto count_at = r.offset();
  const auto count = r.get<std::uint32_t>("block count");
  if (count != 2 * template_count)
    throw FormatError(ErrorCode::kFormat, count_at, "block count does not match the manifest");
  std::vector<std::pair<std::uint64_t, std::uint64_t>> index(count);
  for (auto& [off, n] : index) {
    off = r.get<std::uint64_t>("block offset");
    n = r.get<std::uint64_t>("block length");
  }
  std::vector<FeatureGrid> grids;
  for (std::uint32_t b = 0; b < count; ++b) {
    if (index[b].first != r.offset())
      throw FormatError(ErrorCode::kFormat, r.offset(), "block " + std::to_string(b) + " offset mismatch");
    const auto block_at = r.offset();
    std::string bytes(static_cast<std::size_t>(index[b].second), '\0');
    r.read_raw(bytes.data(), bytes.size(), "grid block");
    std::istringstream is(bytes);
    try {
      grids.push_back(read_grid(is));
    } catch (const FormatError& e) {
      throw FormatError(e.code(), block_at + e.offset(), "grid block " + std::to_string(b) + ": " + e.what());
    }
  }

  try {
    for (std::size_t i = 0; i < template_count; ++i) {
      const auto& t = manifest["templates"][i];
      TemplateRecord rec;
      rec.viewpoint = t.at("viewpoint").get<int>();
      const auto d = numbers(t.at("direction"), 3, "direction");
      rec.direction = Eigen::Vector3d(d[0], d[1], d[2]);
      rec.meta.r_ae = rotation_from(t.at("rotation"), "rotation");
      rec.meta.crop = affine_from(t.at("crop"), "crop");
      rec.meta.tz_mm = t.at("tz").get<double>();
      rec.meta.intrinsics = intrinsics_from(t.at("intrinsics"), "intrinsics");
      const auto c = numbers(t.at("center"), 2, "center");
      rec.meta.center_px = Eigen::Vector2d(c[0], c[1]);
      rec.invariant = std::move(grids[2 * i]);
      rec.variant = std::move(grids[2 * i + 1]);
      store.templates.push_back(std::move(rec));
    }
  } catch (const json::exception& e) {
    throw FormatError(ErrorCode::kFormat, manifest_at, std::string("bad template entry: ") + e.what());
  } catch (const Error& e) {
    throw FormatError(ErrorCode::kFormat, manifest_at, e.what());
  }
  store.validate();
  return store;
}

void write_store_file(const TemplateStore& store, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot open " + path + " for writing");
  write_store(store, out);
}

TemplateStore read_store_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path);
  return read_store(in);
}

TemplateStore onboard_directory(const std::string& dir, const Config& config) {
  const fs::path root(dir);
  const json manifest = read_json_file((root / "templates.json").string());
  TemplateStore store;
  store.subdivisions = config.subdivisions;
  const ViewpointSet views = icosphere_viewpoints(store.subdivisions);
  std::vector<std::optional<TemplateRecord>> slots(views.size());
  std::vector<std::string> slot_names(views.size());

  try {
    store.object_id = manifest.value("object_id", 0);
    if (manifest.contains("subdivisions") && manifest["subdivisions"].get<int>() != config.subdivisions)
      throw Error(ErrorCode::kOnboarding, "manifest subdivisions differ from the configured value");
    const auto& entries = manifest.at("templates");
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const auto& e = entries[i];
      const std::string name = "template '" + e.value("name", "#" + std::to_string(i)) + "'";
      try {
        const auto d = numbers(e.at("direction"), 3, "direction");
        const Eigen::Vector3d dir_in = Eigen::Vector3d(d[0], d[1], d[2]).normalized();
        int vp = -1;
        for (std::size_t v = 0; v < views.size(); ++v)
          if ((views[v].direction - dir_in).norm() < 1e-6) vp = static_cast<int>(v);
        if (vp < 0) throw Error(ErrorCode::kOnboarding, "direction is not a viewpoint of the icosphere");
        if (slots[static_cast<std::size_t>(vp)])
          throw Error(ErrorCode::kOnboarding, "duplicate viewpoint " + std::to_string(vp) + " (also used by " +
                                                  slot_names[static_cast<std::size_t>(vp)] + ")");
        TemplateRecord rec;
        rec.viewpoint = vp;
        rec.direction = views[static_cast<std::size_t>(vp)].direction;
        rec.meta.r_ae = e.contains("rotation") ? rotation_from(e["rotation"], "rotation")
                                               : views[static_cast<std::size_t>(vp)].rotation;
        rec.meta.crop = affine_from(e.at("crop"), "crop");
        rec.meta.tz_mm = e.at("tz").get<double>();
        if (!(rec.meta.tz_mm > 0)) throw Error(ErrorCode::kOnboarding, "tz must be positive");
        rec.meta.intrinsics = intrinsics_from(e.at("intrinsics"), "intrinsics");
        const auto c = numbers(e.at("center"), 2, "center");
        rec.meta.center_px = Eigen::Vector2d(c[0], c[1]);
        for (auto [key, grid] : {std::pair{"invariant", &rec.invariant}, std::pair{"variant", &rec.variant}}) {
          const fs::path p = root / e.at(key).get<std::string>();
          if (!fs::exists(p)) throw Error(ErrorCode::kOnboarding, std::string(key) + " grid file missing: " + p.string());
          *grid = read_grid_file(p.string());
          check_shapes(*grid, store.geom, key);
        }
        if (!rec.variant.variant()) throw Error(ErrorCode::kOnboarding, "variant grid lacks the variant flag");
        slot_names[static_cast<std::size_t>(vp)] = name;
        slots[static_cast<std::size_t>(vp)] = std::move(rec);
      } catch (const json::exception& ex) {
        throw Error(ErrorCode::kOnboarding, name + ": " + ex.what());
      } catch (const Error& ex) {
        throw Error(ErrorCode::kOnboarding, name + ": " + ex.what());
      }
    }
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::kOnboarding, std::string("templates.json: ") + ex.what());
  }

  for (std::size_t v = 0; v < slots.size(); ++v) {
    if (slots[v]) continue;
    const auto& d = views[v].direction;
    std::ostringstream os;
    os << "missing template for viewpoint " << v << " (direction " << d.x() << ", " << d.y() << ", " << d.z() << ")";
    throw Error(ErrorCode::kOnboarding, os.str());
  }
  for (auto& s : slots) {
    const auto& first = store.templates.empty() ? *s : store.templates.front();
    if (s->invariant.dim() != first.invariant.dim() || s->variant.dim() != first.variant.dim())
      throw Error(ErrorCode::kOnboarding, slot_names[static_cast<std::size_t>(s->viewpoint)] +
                                              ": descriptor dimension differs from the other templates");
    store.templates.push_back(std::move(*s));
  }
  store.validate();
  return store;
}

std::vector<QueryObservation> load_query_manifest(const std::string& path) {
  const json manifest = read_json_file(path);
  const fs::path root = fs::path(path).parent_path();
  std::vector<QueryObservation> out;
  try {
    for (const auto& d : manifest.at("detections")) {
      QueryObservation q;
      q.scene_id = d.at("scene_id").get<int>();
      q.im_id = d.at("im_id").get<int>();
      q.obj_id = d.at("obj_id").get<int>();
      q.invariant = read_grid_file((root / d.at("invariant").get<std::string>()).string());
      q.variant = read_grid_file((root / d.at("variant").get<std::string>()).string());
      q.meta.crop = affine_from(d.at("crop"), "crop");
      q.meta.intrinsics = intrinsics_from(d.at("intrinsics"), "intrinsics");
      out.push_back(std::move(q));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormat, path + ": " + e.what());
  }
  return out;
}

}  // namespace gpose
