#include "lane3d/io.h"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

#include "lane3d/error.h"

namespace lane3d {

using nlohmann::json;

namespace {

// Object reader that tracks visited keys so leftovers can be rejected.
// E is the exception type raised on schema violations.
template <typename E>
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_, "expected an object");
  }

  const std::string& path() const { return path_; }
  std::string at(std::string_view key) const { return path_ + "." + std::string(key); }

  [[noreturn]] static void fail(const std::string& path, const std::string& what) {
    throw E(path + ": " + what);
  }

  const json* find(std::string_view key) {
    seen_.insert(std::string(key));
    auto it = j_.find(std::string(key));
    return it == j_.end() ? nullptr : &*it;
  }
  const json& require(std::string_view key) {
    const json* v = find(key);
    if (!v) fail(at(key), "missing required field");
    return *v;
  }

  template <typename T>
  void opt(std::string_view key, T& out) {
    if (const json* v = find(key)) out = convert<T>(*v, at(key));
  }
  template <typename T>
  T req(std::string_view key) {
    return convert<T>(require(key), at(key));
  }

  std::optional<ObjectReader> child(std::string_view key) {
    const json* v = find(key);
    if (!v) return std::nullopt;
    return ObjectReader(*v, at(key));
  }
  ObjectReader require_child(std::string_view key) { return ObjectReader(require(key), at(key)); }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) fail(at(it.key()), "unknown field");
    }
  }

  template <typename T>
  static T convert(const json& v, const std::string& path) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) fail(path, "expected a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) fail(path, "expected a string");
      return v.get<std::string>();
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      if (v.is_number_unsigned()) return v.get<std::uint64_t>();
      if (v.is_number_integer() && v.get<std::int64_t>() >= 0) {
        return static_cast<std::uint64_t>(v.get<std::int64_t>());
      }
      fail(path, "expected a non-negative integer");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) fail(path, "expected an integer");
      const auto x = v.get<std::int64_t>();
      if (v.is_number_unsigned() && v.get<std::uint64_t>() > static_cast<std::uint64_t>(
                                        std::numeric_limits<T>::max())) {
        fail(path, "integer out of range");
      }
      if (x < std::numeric_limits<T>::min() || x > std::numeric_limits<T>::max()) {
        fail(path, "integer out of range");
      }
      return static_cast<T>(x);
    } else {
      static_assert(std::is_floating_point_v<T>);
      if (!v.is_number()) fail(path, "expected a number");
      return v.get<double>();
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename E>
const json& expect_array(const json& v, const std::string& path, std::size_t size = SIZE_MAX) {
  if (!v.is_array()) ObjectReader<E>::fail(path, "expected an array");
  if (size != SIZE_MAX && v.size() != size) {
    ObjectReader<E>::fail(path, "expected " + std::to_string(size) + " elements, got " +
                                    std::to_string(v.size()));
  }
  return v;
}

json parse_json(std::string_view text, bool config) {
  try {
    return json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    if (config) throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    throw DataError(std::string("invalid JSON: ") + e.what());
  }
}

void check_header(ObjectReader<DataError>& r, std::string_view format) {
  const auto f = r.req<std::string>("format");
  if (f != format) {
    ObjectReader<DataError>::fail(r.at("format"), "expected \"" + std::string(format) +
                                                      "\", got \"" + f + "\"");
  }
  if (r.req<int>("version") != 1) ObjectReader<DataError>::fail(r.at("version"), "unsupported version");
}

json header(std::string_view format) {
  json j = json::object();
  j["format"] = format;
  j["version"] = 1;
  return j;
}

std::string dump(const json& j, int indent) { return j.dump(indent) + "\n"; }

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw DataError(std::string("cannot serialize non-finite ") + what);
}

json point3(const PlanePoint3& p) {
  require_finite(p.x, "coordinate");
  require_finite(p.y, "coordinate");
  require_finite(p.z, "coordinate");
  return json::array({p.x, p.y, p.z});
}

PlanePoint3 read_point3(const json& v, const std::string& path) {
  expect_array<DataError>(v, path, 3);
  using R = ObjectReader<DataError>;
  return {R::convert<double>(v[0], path + "[0]"), R::convert<double>(v[1], path + "[1]"),
          R::convert<double>(v[2], path + "[2]")};
}

json polyline(const std::vector<PlanePoint3>& pts) {
  json a = json::array();
  for (const auto& p : pts) a.push_back(point3(p));
  return a;
}

std::vector<PlanePoint3> read_polyline(const json& v, const std::string& path) {
  expect_array<DataError>(v, path);
  std::vector<PlanePoint3> out;
  out.reserve(v.size());
  for (std::size_t k = 0; k < v.size(); ++k) {
    out.push_back(read_point3(v[k], path + "[" + std::to_string(k) + "]"));
  }
  return out;
}

// ----- configuration -----

template <typename E>
GridSpec read_grid(ObjectReader<E> r, GridSpec g) {
  r.opt("n_cols", g.n_cols);
  r.opt("n_rows", g.n_rows);
  r.opt("tile_width", g.tile_width);
  r.opt("tile_length", g.tile_length);
  r.opt("y_min", g.y_min);
  r.finish();
  return g;
}

json grid_json(const GridSpec& g) {
  return {{"n_cols", g.n_cols}, {"n_rows", g.n_rows}, {"tile_width", g.tile_width},
          {"tile_length", g.tile_length}, {"y_min", g.y_min}};
}

template <typename E>
CameraRig read_rig(ObjectReader<E> r, CameraRig c) {
  r.opt("phi_cam", c.phi_cam);
  r.opt("h_cam", c.h_cam);
  r.opt("fx", c.fx);
  r.opt("fy", c.fy);
  r.opt("cx", c.cx);
  r.opt("cy", c.cy);
  r.opt("width", c.width);
  r.opt("height", c.height);
  r.finish();
  return c;
}

json rig_json(const CameraRig& c) {
  return {{"phi_cam", c.phi_cam}, {"h_cam", c.h_cam}, {"fx", c.fx},     {"fy", c.fy},
          {"cx", c.cx},           {"cy", c.cy},       {"width", c.width}, {"height", c.height}};
}

template <typename T>
void with_child(ObjectReader<ConfigError>& r, std::string_view key, T&& fn) {
  if (auto c = r.child(key)) {
    fn(*c);
    c->finish();
  }
}

std::string csv_double(double v) {
  require_finite(v, "report value");
  return format_double(v);
}

std::string csv_optional(const std::optional<double>& v) { return v ? csv_double(*v) : ""; }

json optional_json(const std::optional<double>& v) {
  if (v) require_finite(*v, "report value");
  return v ? json(*v) : json(nullptr);
}

std::string bucket_name(const RangeBucket& b) {
  return format_double(b.y_lo) + "_" + format_double(b.y_hi);
}

json lateral_json(const LateralErrors& e) {
  json mean = json::array();
  for (const auto& m : e.mean_abs) mean.push_back(optional_json(m));
  return {{"mean_abs", mean}, {"samples", e.samples}, {"mean_abs_dz", optional_json(e.mean_abs_dz)}};
}

std::optional<double> read_optional_double(const json& v, const std::string& path) {
  if (v.is_null()) return std::nullopt;
  return ObjectReader<DataError>::convert<double>(v, path);
}

LateralErrors read_lateral(ObjectReader<DataError> r) {
  LateralErrors e;
  const json& mean = expect_array<DataError>(r.require("mean_abs"), r.at("mean_abs"));
  for (std::size_t k = 0; k < mean.size(); ++k) {
    e.mean_abs.push_back(read_optional_double(mean[k], r.at("mean_abs") + "[" + std::to_string(k) + "]"));
  }
  const json& samples = expect_array<DataError>(r.require("samples"), r.at("samples"), mean.size());
  for (std::size_t k = 0; k < samples.size(); ++k) {
    e.samples.push_back(ObjectReader<DataError>::convert<std::size_t>(
        samples[k], r.at("samples") + "[" + std::to_string(k) + "]"));
  }
  e.mean_abs_dz = read_optional_double(r.require("mean_abs_dz"), r.at("mean_abs_dz"));
  r.finish();
  return e;
}

// ----- tile grids -----

struct FieldSpec {
  std::string name;
  std::string dtype;
  int width;
};

json fields_json(const std::vector<FieldSpec>& fields) {
  json a = json::array();
  for (const auto& f : fields) a.push_back({{"name", f.name}, {"dtype", f.dtype}, {"width", f.width}});
  return a;
}

void check_fields(ObjectReader<DataError>& r, const std::vector<FieldSpec>& expected) {
  const json& got = expect_array<DataError>(r.require("fields"), r.at("fields"), expected.size());
  if (got != fields_json(expected)) {
    ObjectReader<DataError>::fail(r.at("fields"), "field list does not match the grid kind (expected " +
                                                      fields_json(expected).dump() + ")");
  }
}

std::vector<FieldSpec> target_fields(int n_bins) {
  return {{"c", "int32", 1},           {"r", "float64", 1},         {"phi", "float64", 1},
          {"dz", "float64", 1},        {"lane_id", "int32", 1},     {"p_bins", "float64", n_bins},
          {"d_bins", "float64", n_bins}, {"bin_mask", "int32", n_bins}};
}

std::vector<FieldSpec> prediction_fields(int n_bins, int d_emb) {
  return {{"score_logit", "float64", 1},  {"r", "float64", 1},
          {"dz", "float64", 1},           {"bin_logits", "float64", n_bins},
          {"d_bins", "float64", n_bins},  {"embedding", "float64", d_emb}};
}

// Reads one flat field array of tile_count * width values.
template <typename T>
std::vector<T> read_field(ObjectReader<DataError>& data, const FieldSpec& f, std::size_t tiles) {
  const std::string path = data.at(f.name);
  const json& arr = expect_array<DataError>(data.require(f.name), path, tiles * f.width);
  std::vector<T> out;
  out.reserve(arr.size());
  for (std::size_t k = 0; k < arr.size(); ++k) {
    out.push_back(ObjectReader<DataError>::convert<T>(arr[k], path + "[" + std::to_string(k) + "]"));
  }
  return out;
}

void read_grid_header(ObjectReader<DataError>& r, std::string_view kind, GridSpec& grid,
                      AngleBinSpec& bins) {
  check_header(r, "lane3d.grid");
  const auto k = r.req<std::string>("kind");
  if (k != kind) {
    ObjectReader<DataError>::fail(r.at("kind"), "expected \"" + std::string(kind) + "\", got \"" + k + "\"");
  }
  grid = read_grid(r.require_child("grid"), GridSpec{});
  bins.n_bins = r.req<int>("n_bins");
  try {
    grid.validate();
    bins.validate();
  } catch (const ConfigError& e) {
    throw DataError(r.path() + ": " + e.what());
  }
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path.string() + ": cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(path.string() + ": cannot open file for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw DataError(path.string() + ": write failed");
}

// ----- configuration -----

std::string to_string(ClusterMethod m) {
  return m == ClusterMethod::kGreedy ? "greedy" : "embedding";
}

ClusterMethod parse_cluster_method(const std::string& name) {
  if (name == "embedding") return ClusterMethod::kEmbedding;
  if (name == "greedy") return ClusterMethod::kGreedy;
  throw ConfigError("unknown cluster method \"" + name + "\" (expected embedding or greedy)");
}

void PipelineConfig::validate() const {
  grid.validate();
  bins.validate();
  rig.validate();
  embedding.validate();
  cluster.validate();
  scene.validate(grid);
  noise.validate();
  eval.validate();
  if (!(decode.score_threshold > 0.0 && decode.score_threshold < 1.0)) {
    throw ConfigError("decode: score_threshold must lie in (0, 1)");
  }
  if (!(decode.min_seg_len >= 0.0)) throw ConfigError("decode: min_seg_len must be non-negative");
  if (!(decode.saturation > 0.0)) throw ConfigError("decode: saturation must be positive");
  if (!(greedy.angle_tol > 0.0) || !(greedy.gap_tol > 0.0)) {
    throw ConfigError("greedy: tolerances must be positive");
  }
  if (n_scenes < 1) throw ConfigError("n_scenes must be at least 1");
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

PipelineConfig parse_config(std::string_view json_text) {
  const json root = parse_json(json_text, true);
  PipelineConfig cfg;
  using R = ObjectReader<ConfigError>;
  R r(root, "config");

  if (auto c = r.child("grid")) cfg.grid = read_grid(*c, cfg.grid);
  with_child(r, "bins", [&](R& c) { c.opt("n_bins", cfg.bins.n_bins); });
  if (auto c = r.child("rig")) cfg.rig = read_rig(*c, cfg.rig);
  with_child(r, "embedding", [&](R& c) {
    c.opt("delta_pull", cfg.embedding.delta_pull);
    c.opt("delta_push", cfg.embedding.delta_push);
    c.opt("d_emb", cfg.embedding.d_emb);
  });
  with_child(r, "cluster", [&](R& c) {
    c.opt("bandwidth", cfg.cluster.bandwidth);
    c.opt("max_iters", cfg.cluster.max_iters);
    c.opt("shift_tol", cfg.cluster.shift_tol);
    c.opt("assign_radius", cfg.cluster.assign_radius);
    c.opt("min_cluster_size", cfg.cluster.min_cluster_size);
  });
  with_child(r, "scene", [&](R& c) {
    SceneConfig& s = cfg.scene;
    c.opt("n_lanes", s.n_lanes);
    c.opt("lane_spacing", s.lane_spacing);
    c.opt("curvature_max", s.curvature_max);
    c.opt("surface_amplitude", s.surface_amplitude);
    c.opt("surface_wavelength", s.surface_wavelength);
    c.opt("y_range", s.y_range);
    c.opt("short_start_min", s.short_start_min);
    c.opt("short_start_max", s.short_start_max);
    c.opt("min_lane_length", s.min_lane_length);
    if (auto t = c.child("topology")) {
      t->opt("parallel", s.topology.parallel);
      t->opt("split", s.topology.split);
      t->opt("merge", s.topology.merge);
      t->opt("short", s.topology.short_lane);
      t->opt("perpendicular", s.topology.perpendicular);
      t->finish();
    }
  });
  with_child(r, "noise", [&](R& c) {
    NoiseConfig& n = cfg.noise;
    c.opt("sigma_r", n.sigma_r);
    c.opt("sigma_phi", n.sigma_phi);
    c.opt("sigma_z", n.sigma_z);
    c.opt("drop_rate", n.drop_rate);
    c.opt("fp_rate", n.fp_rate);
    c.opt("sigma_f", n.sigma_f);
  });
  with_child(r, "eval", [&](R& c) {
    EvalConfig& e = cfg.eval;
    if (const json* t = c.find("iou_thresholds")) {
      const std::string path = c.at("iou_thresholds");
      expect_array<ConfigError>(*t, path);
      e.iou_thresholds.clear();
      for (std::size_t k = 0; k < t->size(); ++k) {
        e.iou_thresholds.push_back(R::convert<double>((*t)[k], path + "[" + std::to_string(k) + "]"));
      }
    }
    c.opt("lane_width", e.lane_width);
    c.opt("raster_resolution", e.raster_resolution);
    if (const json* b = c.find("range_buckets")) {
      const std::string path = c.at("range_buckets");
      expect_array<ConfigError>(*b, path);
      e.range_buckets.clear();
      for (std::size_t k = 0; k < b->size(); ++k) {
        const std::string p = path + "[" + std::to_string(k) + "]";
        const json& pair = expect_array<ConfigError>((*b)[k], p, 2);
        e.range_buckets.push_back(
            {R::convert<double>(pair[0], p + "[0]"), R::convert<double>(pair[1], p + "[1]")});
      }
    }
    c.opt("lateral_sample_step", e.lateral_sample_step);
    c.opt("operating_iou", e.operating_iou);
    c.opt("reference_recall", e.reference_recall);
  });
  with_child(r, "decode", [&](R& c) {
    c.opt("score_threshold", cfg.decode.score_threshold);
    c.opt("min_seg_len", cfg.decode.min_seg_len);
    c.opt("saturation", cfg.decode.saturation);
  });
  with_child(r, "greedy", [&](R& c) {
    c.opt("angle_tol", cfg.greedy.angle_tol);
    c.opt("gap_tol", cfg.greedy.gap_tol);
  });
  if (const json* m = r.find("method")) {
    cfg.method = parse_cluster_method(R::convert<std::string>(*m, r.at("method")));
  }
  r.opt("output_dir", cfg.output_dir);
  r.opt("n_scenes", cfg.n_scenes);
  r.opt("master_seed", cfg.master_seed);
  r.opt("plots", cfg.plots);
  r.finish();

  // The evaluation extent always follows the grid.
  cfg.eval.extent = grid_rect(cfg.grid);
  cfg.validate();
  return cfg;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path.string() + ": cannot open config file");
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string config_to_json(const PipelineConfig& cfg) {
  json buckets = json::array();
  for (const auto& b : cfg.eval.range_buckets) buckets.push_back(json::array({b.y_lo, b.y_hi}));
  const SceneConfig& s = cfg.scene;
  json j = {
      {"grid", grid_json(cfg.grid)},
      {"bins", {{"n_bins", cfg.bins.n_bins}}},
      {"rig", rig_json(cfg.rig)},
      {"embedding",
       {{"delta_pull", cfg.embedding.delta_pull},
        {"delta_push", cfg.embedding.delta_push},
        {"d_emb", cfg.embedding.d_emb}}},
      {"cluster",
       {{"bandwidth", cfg.cluster.bandwidth},
        {"max_iters", cfg.cluster.max_iters},
        {"shift_tol", cfg.cluster.shift_tol},
        {"assign_radius", cfg.cluster.assign_radius},
        {"min_cluster_size", cfg.cluster.min_cluster_size}}},
      {"scene",
       {{"n_lanes", s.n_lanes},
        {"lane_spacing", s.lane_spacing},
        {"curvature_max", s.curvature_max},
        {"surface_amplitude", s.surface_amplitude},
        {"surface_wavelength", s.surface_wavelength},
        {"y_range", s.y_range},
        {"short_start_min", s.short_start_min},
        {"short_start_max", s.short_start_max},
        {"min_lane_length", s.min_lane_length},
        {"topology",
         {{"parallel", s.topology.parallel},
          {"split", s.topology.split},
          {"merge", s.topology.merge},
          {"short", s.topology.short_lane},
          {"perpendicular", s.topology.perpendicular}}}}},
      {"noise",
       {{"sigma_r", cfg.noise.sigma_r},
        {"sigma_phi", cfg.noise.sigma_phi},
        {"sigma_z", cfg.noise.sigma_z},
        {"drop_rate", cfg.noise.drop_rate},
        {"fp_rate", cfg.noise.fp_rate},
        {"sigma_f", cfg.noise.sigma_f}}},
      {"eval",
       {{"iou_thresholds", cfg.eval.iou_thresholds},
        {"lane_width", cfg.eval.lane_width},
        {"raster_resolution", cfg.eval.raster_resolution},
        {"range_buckets", buckets},
        {"lateral_sample_step", cfg.eval.lateral_sample_step},
        {"operating_iou", cfg.eval.operating_iou},
        {"reference_recall", cfg.eval.reference_recall}}},
      {"decode",
       {{"score_threshold", cfg.decode.score_threshold},
        {"min_seg_len", cfg.decode.min_seg_len},
        {"saturation", cfg.decode.saturation}}},
      {"greedy", {{"angle_tol", cfg.greedy.angle_tol}, {"gap_tol", cfg.greedy.gap_tol}}},
      {"method", to_string(cfg.method)},
      {"output_dir", cfg.output_dir},
      {"n_scenes", cfg.n_scenes},
      {"master_seed", cfg.master_seed},
      {"plots", cfg.plots},
  };
  return dump(j, 2);
}

// ----- scenes -----

std::string scene_to_json(const Scene& scene) {
  json j = header("lane3d.scene");
  j["topology"] = to_string(scene.topology);
  j["feature_y"] = scene.feature_y;
  j["rig"] = rig_json(scene.rig);
  j["surface"] = {{"amplitude", scene.surface.amplitude},
                  {"wavelength_x", scene.surface.wavelength_x},
                  {"wavelength_y", scene.surface.wavelength_y},
                  {"phase_x", scene.surface.phase_x},
                  {"phase_y", scene.surface.phase_y}};
  json pairs = json::array();
  for (const auto& p : scene.branch_pairs) pairs.push_back(json::array({p.stem, p.branch}));
  j["branch_pairs"] = pairs;
  json lanes = json::array();
  for (const auto& lane : scene.lanes) lanes.push_back({{"id", lane.id}, {"points", polyline(lane.points)}});
  j["lanes"] = lanes;
  return dump(j, -1);
}

Scene scene_from_json(std::string_view text) {
  const json root = parse_json(text, false);
  using R = ObjectReader<DataError>;
  R r(root, "scene");
  check_header(r, "lane3d.scene");
  Scene scene;
  const auto topo = r.req<std::string>("topology");
  bool known = false;
  for (Topology t : {Topology::kParallel, Topology::kSplit, Topology::kMerge, Topology::kShort,
                     Topology::kPerpendicular}) {
    if (to_string(t) == topo) {
      scene.topology = t;
      known = true;
    }
  }
  if (!known) R::fail(r.at("topology"), "unknown topology \"" + topo + "\"");
  scene.feature_y = r.req<double>("feature_y");
  scene.rig = read_rig(r.require_child("rig"), CameraRig{});
  {
    R s = r.require_child("surface");
    scene.surface.amplitude = s.req<double>("amplitude");
    scene.surface.wavelength_x = s.req<double>("wavelength_x");
    scene.surface.wavelength_y = s.req<double>("wavelength_y");
    scene.surface.phase_x = s.req<double>("phase_x");
    scene.surface.phase_y = s.req<double>("phase_y");
    s.finish();
  }
  const json& pairs = expect_array<DataError>(r.require("branch_pairs"), r.at("branch_pairs"));
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const std::string p = r.at("branch_pairs") + "[" + std::to_string(k) + "]";
    expect_array<DataError>(pairs[k], p, 2);
    scene.branch_pairs.push_back({R::convert<int>(pairs[k][0], p + "[0]"),
                                  R::convert<int>(pairs[k][1], p + "[1]")});
  }
  const json& lanes = expect_array<DataError>(r.require("lanes"), r.at("lanes"));
  for (std::size_t k = 0; k < lanes.size(); ++k) {
    R l(lanes[k], r.at("lanes") + "[" + std::to_string(k) + "]");
    Lane3D lane;
    lane.id = l.req<int>("id");
    lane.points = read_polyline(l.require("points"), l.at("points"));
    if (lane.points.size() < 2) R::fail(l.at("points"), "a lane needs at least two vertices");
    l.finish();
    scene.lanes.push_back(std::move(lane));
  }
  r.finish();
  return scene;
}

// ----- grids -----

std::string targets_to_json(const TileTargetGrid& targets) {
  validate_shape(targets);
  const int nb = targets.bins.n_bins;
  json j = header("lane3d.grid");
  j["kind"] = "targets";
  j["grid"] = grid_json(targets.grid);
  j["n_bins"] = nb;
  j["dtype"] = "float64";
  j["fields"] = fields_json(target_fields(nb));
  json c = json::array(), r = json::array(), phi = json::array(), dz = json::array(),
       id = json::array(), p = json::array(), d = json::array(), m = json::array();
  for (const auto& t : targets.tiles) {
    require_finite(t.r, "target offset");
    require_finite(t.phi, "target angle");
    require_finite(t.dz, "target height");
    c.push_back(t.c);
    r.push_back(t.r);
    phi.push_back(t.phi);
    dz.push_back(t.dz);
    id.push_back(t.lane_id);
    for (int b = 0; b < nb; ++b) {
      p.push_back(t.p_bins[b]);
      d.push_back(t.d_bins[b]);
      m.push_back(t.bin_mask[b]);
    }
  }
  j["data"] = {{"c", c},       {"r", r},           {"phi", phi},    {"dz", dz},
               {"lane_id", id}, {"p_bins", p},      {"d_bins", d},   {"bin_mask", m}};
  return dump(j, -1);
}

TileTargetGrid targets_from_json(std::string_view text) {
  const json root = parse_json(text, false);
  using R = ObjectReader<DataError>;
  R r(root, "grid");
  GridSpec grid;
  AngleBinSpec bins;
  read_grid_header(r, "targets", grid, bins);
  if (r.req<std::string>("dtype") != "float64") R::fail(r.at("dtype"), "expected \"float64\"");
  const auto fields = target_fields(bins.n_bins);
  check_fields(r, fields);
  R data = r.require_child("data");
  const std::size_t n = grid.tile_count();
  const auto c = read_field<int>(data, fields[0], n);
  const auto rr = read_field<double>(data, fields[1], n);
  const auto phi = read_field<double>(data, fields[2], n);
  const auto dz = read_field<double>(data, fields[3], n);
  const auto id = read_field<int>(data, fields[4], n);
  const auto p = read_field<double>(data, fields[5], n);
  const auto d = read_field<double>(data, fields[6], n);
  const auto m = read_field<int>(data, fields[7], n);
  data.finish();
  r.finish();

  TileTargetGrid out = make_empty_targets(grid, bins);
  const std::size_t nb = bins.n_bins;
  for (std::size_t k = 0; k < n; ++k) {
    TileTarget& t = out.tiles[k];
    if (c[k] != 0 && c[k] != 1) R::fail(data.at("c") + "[" + std::to_string(k) + "]", "must be 0 or 1");
    t.c = c[k];
    t.r = rr[k];
    t.phi = phi[k];
    t.dz = dz[k];
    t.lane_id = id[k];
    t.p_bins.assign(p.begin() + k * nb, p.begin() + (k + 1) * nb);
    t.d_bins.assign(d.begin() + k * nb, d.begin() + (k + 1) * nb);
    t.bin_mask.assign(m.begin() + k * nb, m.begin() + (k + 1) * nb);
  }
  return out;
}

std::string predictions_to_json(const TilePredictionGrid& preds) {
  validate_shape(preds);
  const int nb = preds.bins.n_bins;
  const int de = preds.embedding_dim;
  json j = header("lane3d.grid");
  j["kind"] = "predictions";
  j["grid"] = grid_json(preds.grid);
  j["n_bins"] = nb;
  j["embedding_dim"] = de;
  j["dtype"] = "float64";
  j["fields"] = fields_json(prediction_fields(nb, de));
  json s = json::array(), r = json::array(), dz = json::array(), l = json::array(),
       d = json::array(), e = json::array();
  for (const auto& t : preds.tiles) {
    require_finite(t.score_logit, "score logit");
    require_finite(t.r, "offset");
    require_finite(t.dz, "height");
    s.push_back(t.score_logit);
    r.push_back(t.r);
    dz.push_back(t.dz);
    for (int b = 0; b < nb; ++b) {
      require_finite(t.bin_logits[b], "bin logit");
      require_finite(t.d_bins[b], "bin residual");
      l.push_back(t.bin_logits[b]);
      d.push_back(t.d_bins[b]);
    }
    for (int k = 0; k < de; ++k) {
      require_finite(t.embedding[k], "embedding");
      e.push_back(t.embedding[k]);
    }
  }
  j["data"] = {{"score_logit", s}, {"r", r},      {"dz", dz},
               {"bin_logits", l},  {"d_bins", d}, {"embedding", e}};
  return dump(j, -1);
}

TilePredictionGrid predictions_from_json(std::string_view text) {
  const json root = parse_json(text, false);
  using R = ObjectReader<DataError>;
  R r(root, "grid");
  GridSpec grid;
  AngleBinSpec bins;
  read_grid_header(r, "predictions", grid, bins);
  const int de = r.req<int>("embedding_dim");
  if (de < 1) R::fail(r.at("embedding_dim"), "must be at least 1");
  if (r.req<std::string>("dtype") != "float64") R::fail(r.at("dtype"), "expected \"float64\"");
  const auto fields = prediction_fields(bins.n_bins, de);
  check_fields(r, fields);
  R data = r.require_child("data");
  const std::size_t n = grid.tile_count();
  const auto s = read_field<double>(data, fields[0], n);
  const auto rr = read_field<double>(data, fields[1], n);
  const auto dz = read_field<double>(data, fields[2], n);
  const auto l = read_field<double>(data, fields[3], n);
  const auto d = read_field<double>(data, fields[4], n);
  const auto e = read_field<double>(data, fields[5], n);
  data.finish();
  r.finish();

  TilePredictionGrid out = make_empty_predictions(grid, bins, de);
  const std::size_t nb = bins.n_bins;
  for (std::size_t k = 0; k < n; ++k) {
    TilePrediction& t = out.tiles[k];
    t.score_logit = s[k];
    t.r = rr[k];
    t.dz = dz[k];
    t.bin_logits.assign(l.begin() + k * nb, l.begin() + (k + 1) * nb);
    t.d_bins.assign(d.begin() + k * nb, d.begin() + (k + 1) * nb);
    t.embedding = Eigen::Map<const Eigen::VectorXd>(e.data() + k * de, de);
  }
  return out;
}

// ----- segments and lanes -----

std::string segments_to_json(const std::vector<LaneSegment>& segments, int embedding_dim) {
  json j = header("lane3d.segments");
  j["embedding_dim"] = embedding_dim;
  json arr = json::array();
  for (const auto& s : segments) {
    if (s.embedding.size() != embedding_dim) {
      throw DataError("segment embedding size does not match embedding_dim");
    }
    json emb = json::array();
    for (int k = 0; k < embedding_dim; ++k) emb.push_back(s.embedding[k]);
    arr.push_back({{"tile", json::array({s.tile.row, s.tile.col})},
                   {"score", s.score},
                   {"phi", s.phi},
                   {"midpoint", point3(s.midpoint)},
                   {"direction", json::array({s.direction.x, s.direction.y})},
                   {"endpoints", json::array({point3(s.endpoints[0]), point3(s.endpoints[1])})},
                   {"embedding", emb},
                   {"degenerate", s.degenerate}});
  }
  j["segments"] = arr;
  return dump(j, -1);
}

std::vector<LaneSegment> segments_from_json(std::string_view text) {
  const json root = parse_json(text, false);
  using R = ObjectReader<DataError>;
  R r(root, "segments");
  check_header(r, "lane3d.segments");
  const int de = r.req<int>("embedding_dim");
  if (de < 1) R::fail(r.at("embedding_dim"), "must be at least 1");
  const json& arr = expect_array<DataError>(r.require("segments"), r.at("segments"));
  std::vector<LaneSegment> out;
  for (std::size_t k = 0; k < arr.size(); ++k) {
    R s(arr[k], r.at("segments") + "[" + std::to_string(k) + "]");
    LaneSegment seg;
    const json& tile = expect_array<DataError>(s.require("tile"), s.at("tile"), 2);
    seg.tile = {R::convert<int>(tile[0], s.at("tile") + "[0]"), R::convert<int>(tile[1], s.at("tile") + "[1]")};
    seg.score = s.req<double>("score");
    if (!(seg.score >= 0.0 && seg.score <= 1.0)) R::fail(s.at("score"), "must lie in [0, 1]");
    seg.phi = s.req<double>("phi");
    seg.midpoint = read_point3(s.require("midpoint"), s.at("midpoint"));
    const json& dir = expect_array<DataError>(s.require("direction"), s.at("direction"), 2);
    seg.direction = {R::convert<double>(dir[0], s.at("direction") + "[0]"),
                     R::convert<double>(dir[1], s.at("direction") + "[1]")};
    const json& ends = expect_array<DataError>(s.require("endpoints"), s.at("endpoints"), 2);
    seg.endpoints = {read_point3(ends[0], s.at("endpoints") + "[0]"),
                     read_point3(ends[1], s.at("endpoints") + "[1]")};
    const json& emb = expect_array<DataError>(s.require("embedding"), s.at("embedding"), de);
    seg.embedding.resize(de);
    for (int i = 0; i < de; ++i) {
      seg.embedding[i] = R::convert<double>(emb[i], s.at("embedding") + "[" + std::to_string(i) + "]");
    }
    seg.degenerate = s.req<bool>("degenerate");
    s.finish();
    out.push_back(std::move(seg));
  }
  r.finish();
  return out;
}

std::string lanes_to_json(const std::vector<Detection>& lanes, ClusterMethod method) {
  json j = header("lane3d.lanes");
  j["method"] = to_string(method);
  json arr = json::array();
  for (std::size_t k = 0; k < lanes.size(); ++k) {
    arr.push_back({{"id", static_cast<int>(k)},
                   {"confidence", lanes[k].confidence},
                   {"points", polyline(lanes[k].curve.points)}});
  }
  j["lanes"] = arr;
  return dump(j, -1);
}

std::vector<Detection> lanes_from_json(std::string_view text) {
  const json root = parse_json(text, false);
  using R = ObjectReader<DataError>;
  R r(root, "lanes");
  check_header(r, "lane3d.lanes");
  parse_cluster_method(r.req<std::string>("method"));
  const json& arr = expect_array<DataError>(r.require("lanes"), r.at("lanes"));
  std::vector<Detection> out;
  for (std::size_t k = 0; k < arr.size(); ++k) {
    R l(arr[k], r.at("lanes") + "[" + std::to_string(k) + "]");
    Detection d;
    d.curve.lane_id = l.req<int>("id");
    d.confidence = l.req<double>("confidence");
    if (!(d.confidence >= 0.0 && d.confidence <= 1.0)) R::fail(l.at("confidence"), "must lie in [0, 1]");
    d.curve.points = read_polyline(l.require("points"), l.at("points"));
    try {
      d.curve.validate();
    } catch (const DataError& e) {
      R::fail(l.at("points"), e.what());
    }
    l.finish();
    out.push_back(std::move(d));
  }
  r.finish();
  return out;
}

// ----- reports -----

std::string report_to_csv(const EvalReport& report, const EvalConfig& cfg) {
  std::ostringstream out;
  out << "row,iou_threshold,ap,recall,map,recall_at_reference,n_gt,n_pred,n_matched";
  for (const auto& b : cfg.range_buckets) out << ",lateral_" << bucket_name(b);
  for (const auto& b : cfg.range_buckets) out << ",lateral_ref_recall_" << bucket_name(b);
  out << ",mean_abs_dz\n";
  const std::size_t nb = cfg.range_buckets.size();
  const std::string empty_tail = std::string(2 * nb + 1, ',');
  for (std::size_t k = 0; k < report.thresholds.size(); ++k) {
    out << "threshold," << csv_double(report.thresholds[k]) << "," << csv_double(report.ap[k]) << ","
        << csv_double(report.recall[k]) << ",,,,," << empty_tail << "\n";
  }
  out << "summary,,,," << csv_double(report.map_score) << ","
      << csv_double(report.recall_at_reference) << "," << report.n_gt << "," << report.n_pred << ","
      << report.n_matched;
  for (std::size_t b = 0; b < nb; ++b) {
    out << "," << (b < report.lateral.mean_abs.size() ? csv_optional(report.lateral.mean_abs[b]) : "");
  }
  for (std::size_t b = 0; b < nb; ++b) {
    const auto& ref = report.lateral_at_reference_recall;
    out << "," << (ref && b < ref->mean_abs.size() ? csv_optional(ref->mean_abs[b]) : "");
  }
  out << "," << csv_optional(report.lateral.mean_abs_dz) << "\n";
  return out.str();
}

std::string report_to_json(const EvalReport& report, const EvalConfig& cfg) {
  for (const auto* values : {&report.thresholds, &report.ap, &report.recall}) {
    for (double v : *values) require_finite(v, "report value");
  }
  require_finite(report.map_score, "map");
  require_finite(report.recall_at_reference, "recall");
  json j = header("lane3d.report");
  json buckets = json::array();
  for (const auto& b : cfg.range_buckets) buckets.push_back(json::array({b.y_lo, b.y_hi}));
  j["range_buckets"] = buckets;
  j["thresholds"] = report.thresholds;
  j["ap"] = report.ap;
  j["recall"] = report.recall;
  j["map"] = report.map_score;
  j["recall_at_reference"] = report.recall_at_reference;
  j["n_gt"] = report.n_gt;
  j["n_pred"] = report.n_pred;
  j["n_matched"] = report.n_matched;
  j["lateral"] = lateral_json(report.lateral);
  j["lateral_at_reference_recall"] = report.lateral_at_reference_recall
                                         ? lateral_json(*report.lateral_at_reference_recall)
                                         : json(nullptr);
  return dump(j, 2);
}

EvalReport report_from_json(std::string_view text) {
  const json root = parse_json(text, false);
  using R = ObjectReader<DataError>;
  R r(root, "report");
  check_header(r, "lane3d.report");
  r.require("range_buckets");
  EvalReport rep;
  auto read_list = [&](std::string_view key, std::size_t size) {
    const json& a = expect_array<DataError>(r.require(key), r.at(key), size);
    std::vector<double> v;
    for (std::size_t k = 0; k < a.size(); ++k) {
      v.push_back(R::convert<double>(a[k], r.at(key) + "[" + std::to_string(k) + "]"));
    }
    return v;
  };
  rep.thresholds = read_list("thresholds", SIZE_MAX);
  rep.ap = read_list("ap", rep.thresholds.size());
  rep.recall = read_list("recall", rep.thresholds.size());
  rep.map_score = r.req<double>("map");
  rep.recall_at_reference = r.req<double>("recall_at_reference");
  rep.n_gt = r.req<std::size_t>("n_gt");
  rep.n_pred = r.req<std::size_t>("n_pred");
  rep.n_matched = r.req<std::size_t>("n_matched");
  rep.lateral = read_lateral(r.require_child("lateral"));
  const json& ref = r.require("lateral_at_reference_recall");
  if (!ref.is_null()) rep.lateral_at_reference_recall = read_lateral(R(ref, r.at("lateral_at_reference_recall")));
  r.finish();
  return rep;
}

}  // namespace lane3d
