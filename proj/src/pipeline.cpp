#include "wmodl/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "wmodl/errors.hpp"
#include "wmodl/io.hpp"
#include "wmodl/solvers.hpp"

namespace wmodl {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

// ---- strict JSON reading -------------------------------------------------

std::string join(std::string const &path, std::string const &key) { return path.empty() ? key : path + "." + key; }

[[noreturn]] void bad(std::string const &path, std::string const &what) { throw ConfigError("config key '" + path + "': " + what); }

void read(json const &j, double &out, std::string const &path)
{
  if (!j.is_number()) {
    bad(path, "expected a number");
  }
  out = j.get<double>();
  if (!std::isfinite(out)) {
    bad(path, "must be finite");
  }
}

void read(json const &j, int &out, std::string const &path)
{
  if (!j.is_number_integer()) {
    bad(path, "expected an integer");
  }
  out = j.get<int>();
}

void read(json const &j, Index &out, std::string const &path)
{
  if (!j.is_number_integer()) {
    bad(path, "expected an integer");
  }
  out = j.get<Index>();
}

void read(json const &j, std::uint64_t &out, std::string const &path)
{
  if (!j.is_number_unsigned()) {
    bad(path, "expected a non-negative integer");
  }
  out = j.get<std::uint64_t>();
}

void read(json const &j, bool &out, std::string const &path)
{
  if (!j.is_boolean()) {
    bad(path, "expected true or false");
  }
  out = j.get<bool>();
}

void read(json const &j, std::string &out, std::string const &path)
{
  if (!j.is_string()) {
    bad(path, "expected a string");
  }
  out = j.get<std::string>();
}

void read(json const &j, std::pair<int, int> &out, std::string const &path)
{
  if (!j.is_array() || j.size() != 2) {
    bad(path, "expected an array of 2 values");
  }
  read(j[0], out.first, path + "[0]");
  read(j[1], out.second, path + "[1]");
}

template <typename T, std::size_t N>
void read(json const &j, std::array<T, N> &out, std::string const &path)
{
  if (!j.is_array() || j.size() != N) {
    bad(path, "expected an array of " + std::to_string(N) + " values");
  }
  for (std::size_t i = 0; i < N; i++) {
    read(j[i], out[i], path + "[" + std::to_string(i) + "]");
  }
}

template <typename T>
void read(json const &j, std::vector<T> &out, std::string const &path)
{
  if (!j.is_array()) {
    bad(path, "expected an array");
  }
  out.clear();
  for (std::size_t i = 0; i < j.size(); i++) {
    T v{};
    read(j[i], v, path + "[" + std::to_string(i) + "]");
    out.push_back(v);
  }
}

template <typename T>
void read(json const &j, std::optional<T> &out, std::string const &path)
{
  if (j.is_null()) {
    out.reset();
    return;
  }
  T v{};
  read(j, v, path);
  out = v;
}

/// Enum read through a name table.
template <typename E>
void read_enum(json const &j, E &out, std::string const &path, std::vector<std::pair<char const *, E>> const &names)
{
  std::string s;
  read(j, s, path);
  std::string allowed;
  for (auto const &[n, v] : names) {
    if (s == n) {
      out = v;
      return;
    }
    allowed += (allowed.empty() ? "" : ", ") + std::string(n);
  }
  bad(path, "unknown value '" + s + "', expected one of " + allowed);
}

/// One JSON object being consumed; done() rejects whatever was not read.
class Section
{
public:
  Section(json const &j, std::string path)
    : j_(j)
    , path_(std::move(path))
  {
    if (!j_.is_object()) {
      bad(path_.empty() ? "<root>" : path_, "expected an object");
    }
  }

  json const *find(char const *key)
  {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  template <typename T>
  void get(char const *key, T &out)
  {
    if (auto const *v = find(key)) {
      read(*v, out, join(path_, key));
    }
  }

  template <typename E>
  void get_enum(char const *key, E &out, std::vector<std::pair<char const *, E>> const &names)
  {
    if (auto const *v = find(key)) {
      read_enum(*v, out, join(path_, key), names);
    }
  }

  /// Nested section; a missing key reads as an empty object.
  Section sub(char const *key)
  {
    static json const empty = json::object();
    auto const *v = find(key);
    return Section(v ? *v : empty, join(path_, key));
  }

  std::string path(char const *key) const { return join(path_, key); }

  void done() const
  {
    for (auto const &[k, v] : j_.items()) {
      if (!seen_.count(k)) {
        throw ConfigError("unknown config key '" + join(path_, k) + "'");
      }
    }
  }

private:
  json const &j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::vector<std::pair<char const *, ContrastGenerator>> const kGenerators{{"direct", ContrastGenerator::Direct},
                                                                         {"qalas", ContrastGenerator::Qalas}};
std::vector<std::pair<char const *, WaveAssignment>> const kAssignments{{"cos_y", WaveAssignment::CosineY},
                                                                       {"sin_y", WaveAssignment::SineY}};
std::vector<std::pair<char const *, StaggerMode>> const kModes{{"fixed", StaggerMode::Fixed},
                                                              {"staggered", StaggerMode::Staggered}};
std::vector<std::pair<char const *, ExperimentConfig::Method>> const kMethods{
  {"sense", ExperimentConfig::Method::Sense},
  {"wave", ExperimentConfig::Method::Wave},
  {"modl", ExperimentConfig::Method::Modl},
  {"wave-modl", ExperimentConfig::Method::WaveModl}};
std::vector<std::pair<char const *, ConvInit>> const kInits{{"uniform", ConvInit::Uniform},
                                                           {"he_uniform", ConvInit::HeUniform}};

template <typename E>
std::string name_of(E v, std::vector<std::pair<char const *, E>> const &names)
{
  for (auto const &[n, e] : names) {
    if (e == v) {
      return n;
    }
  }
  return "?";
}

ExperimentConfig from_json(json const &root)
{
  ExperimentConfig c;
  Section top(root, "");
  top.get("name", c.name);
  top.get("seed", c.seed);
  top.get("output_dir", c.output_dir);
  top.get("noise_sigma", c.noise_sigma);
  {
    auto s = top.sub("phantom");
    s.get("dims", c.phantom.dims);
    s.get_enum("generator", c.phantom.generator, kGenerators);
    s.get("jitter", c.phantom.jitter);
    s.get("intensity_scale", c.phantom.intensity_scale);
    if (auto const *t = s.find("tissues")) {
      if (!t->is_object() || t->empty()) {
        bad(s.path("tissues"), "expected a non-empty object keyed by label");
      }
      c.phantom.tissues.clear();
      for (auto const &[label, row] : t->items()) {
        std::string const path = s.path("tissues") + "." + label;
        std::int32_t l = 0;
        try {
          std::size_t used = 0;
          l = std::stoi(label, &used);
          if (used != label.size()) {
            throw std::invalid_argument(label);
          }
        } catch (std::exception const &) {
          bad(path, "tissue keys must be integer labels");
        }
        Section r(row, path);
        TissueProps p;
        r.get("t1_ms", p.t1_ms);
        r.get("t2_ms", p.t2_ms);
        r.get("pd", p.pd);
        r.done();
        c.phantom.tissues[l] = p;
      }
    }
    s.done();
  }
  {
    auto s = top.sub("geometry");
    s.get("fov_mm", c.geometry.fov_mm);
    s.get("voxel_mm", c.geometry.voxel_mm);
    s.done();
  }
  {
    auto s = top.sub("coils");
    s.get("count", c.coils.count);
    s.get("width", c.coils.width);
    s.get("x_stagger", c.coils.x_stagger);
    s.get("phase_cycles", c.coils.phase_cycles);
    s.get("restrict_to_object", c.coils.restrict_to_object);
    s.done();
  }
  {
    auto s = top.sub("wave");
    s.get("gmax_mT_per_m", c.wave.gmax_mT_per_m);
    s.get("cycles", c.wave.cycles);
    s.get("bw_per_pixel_hz", c.wave.bw_per_pixel_hz);
    s.get("osx", c.wave.osx);
    s.get_enum("assignment", c.wave.assignment, kAssignments);
    s.get("scale_bandwidth_to_grid", c.wave.scale_bandwidth_to_grid);
    s.done();
  }
  {
    auto s = top.sub("sampling");
    s.get("ry", c.sampling.accel.ry);
    s.get("rz", c.sampling.accel.rz);
    s.get("caipi_shift", c.sampling.accel.caipi_shift);
    s.get_enum("mode", c.sampling.mode, kModes);
    s.get("stagger", c.sampling.stagger);
    s.done();
  }
  {
    auto s = top.sub("recon");
    s.get_enum("method", c.recon.method, kMethods);
    s.get("cg_iters", c.recon.cg_iters);
    s.get("cg_tolerance", c.recon.cg_tolerance);
    s.get("lambda", c.recon.lambda);
    s.get("checkpoint", c.recon.checkpoint);
    s.done();
  }
  {
    auto s = top.sub("training");
    auto &t = c.training;
    s.get("steps", t.steps);
    s.get("learning_rate", t.learning_rate);
    s.get("lambda_learning_rate", t.lambda_learning_rate);
    s.get("n_outer", t.n_outer);
    s.get("cg_iters", t.cg_iters);
    s.get("width", t.width);
    s.get("hidden_layers", t.hidden_layers);
    s.get("kernel", t.kernel);
    s.get("leaky_slope", t.leaky_slope);
    s.get_enum("init", t.init, kInits);
    s.get("init_scale", t.init_scale);
    s.get("lambda_init", t.lambda_init);
    s.get("loss_weights", t.loss_weights);
    s.get("samples", t.samples);
    s.get("jitter", t.jitter);
    s.get("batch", t.batch);
    s.get("checkpoint_every", t.checkpoint_every);
    s.done();
  }
  {
    auto s = top.sub("qalas");
    auto &q = c.qalas;
    {
      auto t = s.sub("timing");
      t.get("t2prep_te_ms", q.timing.t2prep_te_ms);
      t.get("gap_ms", q.timing.gap_ms);
      t.get("flip_deg", q.timing.flip_deg);
      t.get("echo_spacing_ms", q.timing.echo_spacing_ms);
      t.get("shots_per_train", q.timing.shots_per_train);
      t.get("recovery_ms", q.timing.recovery_ms);
      t.done();
    }
    s.get("t1_min_ms", q.t1_min_ms);
    s.get("t1_max_ms", q.t1_max_ms);
    s.get("t1_steps", q.t1_steps);
    s.get("t2_min_ms", q.t2_min_ms);
    s.get("t2_max_ms", q.t2_max_ms);
    s.get("t2_steps", q.t2_steps);
    if (auto const *v = s.find("synth")) {
      std::vector<std::string> kinds;
      read(*v, kinds, s.path("synth"));
      q.synth.clear();
      for (auto const &k : kinds) {
        try {
          q.synth.push_back(parse_synth_kind(k));
        } catch (InvalidInput const &e) {
          bad(s.path("synth"), e.what());
        }
      }
    }
    s.done();
  }
  {
    auto s = top.sub("gfactor");
    s.get("replicas", c.gfactor.replicas);
    s.get("sigma", c.gfactor.sigma);
    s.done();
  }
  {
    auto s = top.sub("roi");
    s.get("n_boxes", c.roi.n_boxes);
    s.get("box", c.roi.box);
    s.get("tissues", c.roi.tissues);
    s.done();
  }
  top.done();
  c.validate();
  return c;
}

json to_json(ExperimentConfig const &c)
{
  json j;
  j["name"] = c.name;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["noise_sigma"] = c.noise_sigma;
  json tissues = json::object();
  for (auto const &[l, p] : c.phantom.tissues) {
    tissues[std::to_string(l)] = {{"t1_ms", p.t1_ms}, {"t2_ms", p.t2_ms}, {"pd", p.pd}};
  }
  j["phantom"] = {{"dims", c.phantom.dims},
                  {"generator", name_of(c.phantom.generator, kGenerators)},
                  {"jitter", c.phantom.jitter},
                  {"intensity_scale", c.phantom.intensity_scale},
                  {"tissues", tissues}};
  j["geometry"] = {{"fov_mm", c.geometry.fov_mm}, {"voxel_mm", c.geometry.voxel_mm}};
  j["coils"] = {{"count", c.coils.count},
                {"width", c.coils.width},
                {"x_stagger", c.coils.x_stagger},
                {"phase_cycles", c.coils.phase_cycles},
                {"restrict_to_object", c.coils.restrict_to_object}};
  j["wave"] = {{"gmax_mT_per_m", c.wave.gmax_mT_per_m},
               {"cycles", c.wave.cycles},
               {"bw_per_pixel_hz", c.wave.bw_per_pixel_hz},
               {"osx", c.wave.osx},
               {"assignment", name_of(c.wave.assignment, kAssignments)},
               {"scale_bandwidth_to_grid", c.wave.scale_bandwidth_to_grid}};
  json stagger = json::array();
  for (auto const &[dy, dz] : c.sampling.stagger) {
    stagger.push_back({dy, dz});
  }
  j["sampling"] = {{"ry", c.sampling.accel.ry},
                   {"rz", c.sampling.accel.rz},
                   {"caipi_shift", c.sampling.accel.caipi_shift},
                   {"mode", name_of(c.sampling.mode, kModes)},
                   {"stagger", stagger}};
  j["recon"] = {{"method", name_of(c.recon.method, kMethods)},
                {"cg_iters", c.recon.cg_iters},
                {"cg_tolerance", c.recon.cg_tolerance},
                {"lambda", c.recon.lambda},
                {"checkpoint", c.recon.checkpoint}};
  auto const &t = c.training;
  j["training"] = {{"steps", t.steps},
                   {"learning_rate", t.learning_rate},
                   {"lambda_learning_rate", t.lambda_learning_rate ? json(*t.lambda_learning_rate) : json(nullptr)},
                   {"n_outer", t.n_outer},
                   {"cg_iters", t.cg_iters},
                   {"width", t.width},
                   {"hidden_layers", t.hidden_layers},
                   {"kernel", t.kernel},
                   {"leaky_slope", t.leaky_slope},
                   {"init", name_of(t.init, kInits)},
                   {"init_scale", t.init_scale},
                   {"lambda_init", t.lambda_init},
                   {"loss_weights", t.loss_weights},
                   {"samples", t.samples},
                   {"jitter", t.jitter},
                   {"batch", t.batch},
                   {"checkpoint_every", t.checkpoint_every}};
  auto const &q = c.qalas;
  json synth = json::array();
  for (auto k : q.synth) {
    synth.push_back(to_string(k));
  }
  j["qalas"] = {{"timing",
                 {{"t2prep_te_ms", q.timing.t2prep_te_ms},
                  {"gap_ms", q.timing.gap_ms},
                  {"flip_deg", q.timing.flip_deg},
                  {"echo_spacing_ms", q.timing.echo_spacing_ms},
                  {"shots_per_train", q.timing.shots_per_train},
                  {"recovery_ms", q.timing.recovery_ms}}},
                {"t1_min_ms", q.t1_min_ms},
                {"t1_max_ms", q.t1_max_ms},
                {"t1_steps", q.t1_steps},
                {"t2_min_ms", q.t2_min_ms},
                {"t2_max_ms", q.t2_max_ms},
                {"t2_steps", q.t2_steps},
                {"synth", synth}};
  j["gfactor"] = {{"replicas", c.gfactor.replicas}, {"sigma", c.gfactor.sigma}};
  j["roi"] = {{"n_boxes", c.roi.n_boxes}, {"box", c.roi.box}, {"tissues", c.roi.tissues}};
  return j;
}

std::uint64_t splitmix(std::uint64_t z)
{
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// ---- stage bookkeeping ---------------------------------------------------

/// Run f, re-raising module errors as StageError tagged with `name`.
template <typename F>
decltype(auto) stage(std::string const &name, F &&f)
{
  try {
    return f();
  } catch (StageError const &) {
    throw;
  } catch (ConfigError const &e) {
    throw StageError(name, ErrorKind::Config, e.what());
  } catch (InvalidInput const &e) {
    throw StageError(name, ErrorKind::Config, e.what());
  } catch (NumericalFailure const &e) {
    throw StageError(name, ErrorKind::Numerical, e.what());
  } catch (CorruptFile const &e) {
    throw StageError(name, ErrorKind::Io, e.what());
  } catch (IoError const &e) {
    throw StageError(name, ErrorKind::Io, e.what());
  } catch (fs::filesystem_error const &e) {
    throw StageError(name, ErrorKind::Io, e.what());
  }
}

/// Collects outputs of one command under its run directory.
class RunWriter
{
public:
  RunWriter(ExperimentConfig const &cfg, std::string command)
    : cfg_(cfg)
    , command_(std::move(command))
  {
    report_.directory = output_directory(cfg);
    stage("write", [&] { fs::create_directories(report_.directory); });
  }

  fs::path path(std::string const &rel)
  {
    report_.files.push_back(rel);
    fs::path const p = report_.directory / rel;
    if (p.has_parent_path()) {
      fs::create_directories(p.parent_path());
    }
    return p;
  }

  template <typename V>
  void volume(std::string const &rel, V const &v)
  {
    stage("write", [&] { write_volume(path(rel), v); });
  }

  void multicoil(std::string const &rel, MultiCoilData const &b)
  {
    stage("write", [&] { write_multicoil(path(rel), b); });
  }

  /// One PGM per z slice under previews/.
  void previews(std::string const &stem, ComplexVolume const &v)
  {
    stage("write", [&] {
      for (Index z = 0; z < v.dims().nz; z++) {
        write_pgm(path(preview_name(stem, z)), slice_magnitude(v, z));
      }
    });
  }

  void previews(std::string const &stem, RealVolume const &v)
  {
    stage("write", [&] {
      for (Index z = 0; z < v.dims().nz; z++) {
        write_pgm(path(preview_name(stem, z)), slice_values(v, z));
      }
    });
  }

  void text(std::string const &rel, std::string const &body)
  {
    stage("write", [&] {
      auto const p = path(rel);
      std::ofstream f(p, std::ios::binary);
      f << body;
      if (!f) {
        throw IoError("write failed for " + p.string());
      }
    });
  }

  void metric(std::string name, std::string roi, double value) { report_.metrics.push_back({std::move(name), std::move(roi), value}); }

  RunReport finish()
  {
    text("metrics_" + command_ + ".txt", format_metrics(report_.metrics));
    json m;
    m["command"] = command_;
    m["config_hash"] = config_hash(cfg_);
    m["seed"] = cfg_.seed;
    m["versions"] = {{"wmodl", kLibraryVersion},
                     {"volume_format", kVolumeFormatVersion},
                     {"checkpoint_format", kCheckpointVersion}};
    m["config"] = to_json(cfg_);
    auto files = report_.files;
    files.push_back("manifest_" + command_ + ".json");
    m["files"] = files;
    text("manifest_" + command_ + ".json", m.dump(2) + "\n");
    return report_;
  }

private:
  static std::string preview_name(std::string const &stem, Index z)
  {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%03d", static_cast<int>(z));
    return "previews/" + stem + "_z" + buf + ".pgm";
  }

  ExperimentConfig const &cfg_;
  std::string command_;
  RunReport report_;
};

std::string indexed(std::string const &stem, std::size_t m) { return stem + "_" + std::to_string(m) + ".wmdl"; }

char const *const kQuantityNames[3] = {"t1", "t2", "pd"};

} // namespace

// ---- config --------------------------------------------------------------

void ExperimentConfig::validate() const
{
  auto require = [](bool ok, std::string const &key, std::string const &what) {
    if (!ok) {
      bad(key, what);
    }
  };
  for (int a = 0; a < 3; a++) {
    require(phantom.dims[a] >= 8, "phantom.dims", "every axis needs at least 8 voxels");
    require(geometry.fov_mm[a] > 0.0, "geometry.fov_mm", "must be positive");
    require(geometry.voxel_mm[a] > 0.0, "geometry.voxel_mm", "must be positive");
  }
  require(phantom.jitter >= 0.0, "phantom.jitter", "must be >= 0");
  require(phantom.intensity_scale > 0.0, "phantom.intensity_scale", "must be positive");
  for (auto const &[l, p] : phantom.tissues) {
    require(l != 0 && p.t1_ms > p.t2_ms && p.t2_ms > 0.0 && p.pd >= 0.0, "phantom.tissues." + std::to_string(l),
            "needs a nonzero label, T1 > T2 > 0 and PD >= 0");
  }
  require(coils.count >= 1, "coils.count", "must be >= 1");
  require(coils.width > 0.0, "coils.width", "must be positive");
  require(wave.gmax_mT_per_m >= 0.0, "wave.gmax_mT_per_m", "must be >= 0");
  require(wave.cycles >= 0, "wave.cycles", "must be >= 0");
  require(wave.bw_per_pixel_hz > 0.0, "wave.bw_per_pixel_hz", "must be positive");
  require(wave.osx >= 1, "wave.osx", "must be >= 1");
  try {
    sampling.accel.validate();
  } catch (InvalidInput const &e) {
    bad("sampling", e.what());
  }
  require(noise_sigma >= 0.0, "noise_sigma", "must be >= 0");
  require(recon.cg_iters >= 1, "recon.cg_iters", "must be >= 1");
  require(recon.cg_tolerance >= 0.0, "recon.cg_tolerance", "must be >= 0");
  require(recon.lambda >= 0.0, "recon.lambda", "must be >= 0");
  auto const &t = training;
  require(t.steps >= 0, "training.steps", "must be >= 0");
  require(t.learning_rate >= 0.0, "training.learning_rate", "must be >= 0");
  require(!t.lambda_learning_rate || *t.lambda_learning_rate >= 0.0, "training.lambda_learning_rate", "must be >= 0");
  require(t.n_outer >= 0, "training.n_outer", "must be >= 0");
  require(t.cg_iters >= 1, "training.cg_iters", "must be >= 1");
  require(t.width >= 1 && t.hidden_layers >= 0, "training.width", "needs width >= 1 and hidden_layers >= 0");
  require(t.kernel >= 1 && t.kernel % 2 == 1, "training.kernel", "must be odd and positive");
  require(t.lambda_init > 0.0, "training.lambda_init", "must be positive");
  require(t.samples >= 1, "training.samples", "must be >= 1");
  require(t.batch >= 1, "training.batch", "must be >= 1");
  require(t.checkpoint_every >= 0, "training.checkpoint_every", "must be >= 0");
  for (double w : t.loss_weights) {
    require(w > 0.0, "training.loss_weights", "weights must be positive");
  }
  try {
    qalas.timing.validate();
  } catch (InvalidInput const &e) {
    bad("qalas.timing", e.what());
  }
  require(qalas.t1_min_ms > 0.0 && qalas.t1_max_ms > qalas.t1_min_ms && qalas.t1_steps >= 1, "qalas.t1_*",
          "needs 0 < min < max and steps >= 1");
  require(qalas.t2_min_ms > 0.0 && qalas.t2_max_ms > qalas.t2_min_ms && qalas.t2_steps >= 1, "qalas.t2_*",
          "needs 0 < min < max and steps >= 1");
  require(gfactor.replicas >= 2, "gfactor.replicas", "must be >= 2");
  require(gfactor.sigma > 0.0, "gfactor.sigma", "must be positive");
  require(roi.n_boxes >= 1 && roi.box >= 1, "roi", "needs n_boxes >= 1 and box >= 1");
}

ExperimentConfig parse_config(std::string const &json_text)
{
  json j;
  try {
    j = json::parse(json_text);
  } catch (json::parse_error const &e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return from_json(j);
}

ExperimentConfig load_config(fs::path const &path)
{
  std::ifstream f(path, std::ios::binary);
  if (!f) {
    throw IoError("cannot open config " + path.string());
  }
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

std::string dump_config(ExperimentConfig const &cfg) { return to_json(cfg).dump(2) + "\n"; }

ExperimentConfig apply_overrides(ExperimentConfig const &cfg, std::vector<std::string> const &assignments)
{
  json j = to_json(cfg);
  for (auto const &a : assignments) {
    auto const eq = a.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("override '" + a + "' is not of the form key=value");
    }
    std::string const key = a.substr(0, eq);
    std::string const text = a.substr(eq + 1);
    json value;
    try {
      value = json::parse(text);
    } catch (json::parse_error const &) {
      value = text;
    }
    json *node = &j;
    std::stringstream ks(key);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ks, part, '.')) {
      parts.push_back(part);
    }
    for (std::size_t i = 0; i + 1 < parts.size(); i++) {
      if (!node->contains(parts[i]) || !(*node)[parts[i]].is_object()) {
        throw ConfigError("unknown config key '" + key + "'");
      }
      node = &(*node)[parts[i]];
    }
    // unknown leaves are caught by the strict parse below
    (*node)[parts.back()] = value;
  }
  return from_json(j);
}

std::uint64_t fnv1a64(std::string const &bytes)
{
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string config_hash(ExperimentConfig const &cfg)
{
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(to_json(cfg).dump())));
  return std::string("fnv1a64:") + buf;
}

std::string to_string(ExperimentConfig::Method m) { return name_of(m, kMethods); }

ExperimentConfig::Method parse_method(std::string const &name)
{
  ExperimentConfig::Method m{};
  read_enum(json(name), m, "recon.method", kMethods);
  return m;
}

std::uint64_t derive_seed(std::uint64_t seed, std::string const &stream) { return splitmix(splitmix(seed) ^ fnv1a64(stream)); }

double effective_bandwidth_hz(ExperimentConfig const &cfg)
{
  double bw = cfg.wave.bw_per_pixel_hz;
  if (cfg.wave.scale_bandwidth_to_grid) {
    bw *= cfg.geometry.fov_mm[0] / cfg.geometry.voxel_mm[0] / static_cast<double>(cfg.phantom.dims[0]);
  }
  return bw;
}

WaveGradientSpec wave_spec(ExperimentConfig const &cfg, bool wave_on)
{
  WaveGradientSpec s;
  s.fov_m = {cfg.geometry.fov_mm[0] * 1e-3, cfg.geometry.fov_mm[1] * 1e-3, cfg.geometry.fov_mm[2] * 1e-3};
  s.bw_per_pixel_hz = effective_bandwidth_hz(cfg);
  s.assignment = cfg.wave.assignment;
  if (wave_on) {
    s.gmax_mT_per_m = cfg.wave.gmax_mT_per_m;
    s.cycles = cfg.wave.cycles;
    s.osx = cfg.wave.osx;
  } else {
    s.gmax_mT_per_m = 0.0;
    s.cycles = 0;
    s.osx = 1;
  }
  return s;
}

int exit_code(ErrorKind kind)
{
  switch (kind) {
  case ErrorKind::Config:
    return 2;
  case ErrorKind::Numerical:
    return 3;
  case ErrorKind::Io:
    return 4;
  }
  return 1;
}

std::string format_metrics(std::vector<MetricRecord> const &records)
{
  std::string out;
  char buf[64];
  for (auto const &r : records) {
    std::snprintf(buf, sizeof buf, "%.10g", r.value);
    out += r.name + " " + (r.roi.empty() ? "all" : r.roi) + " " + buf + "\n";
  }
  return out;
}

fs::path output_directory(ExperimentConfig const &cfg)
{
  if (char const *env = std::getenv("WMODL_OUTPUT_DIR"); env && *env) {
    return fs::path(env);
  }
  return fs::path(cfg.output_dir);
}

// ---- experiment ----------------------------------------------------------

Experiment::Experiment(ExperimentConfig cfg)
  : cfg_(std::move(cfg))
{
  stage("config", [&] { cfg_.validate(); });
}

Dims Experiment::dims() const { return {cfg_.phantom.dims[0], cfg_.phantom.dims[1], cfg_.phantom.dims[2]}; }

bool Experiment::uses_wave(ExperimentConfig::Method m)
{
  return m == ExperimentConfig::Method::Wave || m == ExperimentConfig::Method::WaveModl;
}

bool Experiment::uses_modl(ExperimentConfig::Method m)
{
  return m == ExperimentConfig::Method::Modl || m == ExperimentConfig::Method::WaveModl;
}

namespace {

PhantomSpec phantom_spec(ExperimentConfig const &cfg, Dims d, double jitter, std::uint64_t seed)
{
  PhantomSpec spec = brain_phantom_spec(d, jitter, seed);
  spec.table = cfg.phantom.tissues;
  spec.generator = cfg.phantom.generator;
  spec.timing = cfg.qalas.timing;
  return spec;
}

wmodl::Phantom build_phantom(ExperimentConfig const &cfg, Dims d, double jitter, std::uint64_t seed)
{
  auto ph = make_phantom(phantom_spec(cfg, d, jitter, seed));
  for (auto &c : ph.contrasts) {
    c.array() *= cfg.phantom.intensity_scale;
  }
  return ph;
}

LabelVolume nonzero(LabelVolume const &labels)
{
  LabelVolume out(labels.dims());
  out.array() = (labels.array() != 0).cast<std::int32_t>();
  return out;
}

} // namespace

wmodl::Phantom const &Experiment::phantom()
{
  if (!phantom_) {
    phantom_ = stage("phantom", [&] { return build_phantom(cfg_, dims(), cfg_.phantom.jitter, derive_seed(cfg_.seed, "phantom")); });
  }
  return *phantom_;
}

LabelVolume Experiment::foreground() { return nonzero(phantom().tissue.labels); }

WaveOperator Experiment::make_operator(bool wave_on, LabelVolume const *support) const
{
  Dims const d = dims();
  auto const spec = wave_spec(cfg_, wave_on);
  CoilProfile prof;
  prof.width = cfg_.coils.width;
  prof.x_stagger = cfg_.coils.x_stagger;
  prof.phase_cycles = cfg_.coils.phase_cycles;
  prof.fov_m = spec.fov_m;
  auto sens = stage("sensitivities", [&] { return make_coil_sensitivities(cfg_.coils.count, d.nx, d.ny, d.nz, prof); });
  if (support) {
    sens = restrict_to_support(std::move(sens), *support);
  }
  auto psf = stage("psf", [&] { return make_wave_psf(spec, d.nx, d.ny, d.nz); });
  return WaveOperator(std::move(sens), std::move(psf));
}

WaveOperator const &Experiment::encoding(bool wave_on)
{
  auto it = ops_.find(wave_on);
  if (it == ops_.end()) {
    LabelVolume support;
    if (cfg_.coils.restrict_to_object) {
      support = foreground();
    }
    it = ops_.emplace(wave_on, make_operator(wave_on, cfg_.coils.restrict_to_object ? &support : nullptr)).first;
  }
  return it->second;
}

SamplingPattern const &Experiment::pattern()
{
  if (!pattern_) {
    pattern_ = stage("sampling", [&] {
      Dims const d = dims();
      int const M = static_cast<int>(phantom().contrasts.size());
      return make_multicontrast_pattern(d.ny, d.nz, cfg_.sampling.accel, M, cfg_.sampling.mode, cfg_.sampling.stagger);
    });
  }
  return *pattern_;
}

std::vector<MultiCoilData> const &Experiment::kspace(bool wave_on)
{
  auto it = kspace_.find(wave_on);
  if (it == kspace_.end()) {
    auto const &op = encoding(wave_on);
    auto const &pat = pattern();
    auto b = stage("acquisition", [&] {
      return simulate_acquisition(phantom().contrasts, op, pat, cfg_.noise_sigma, derive_seed(cfg_.seed, "noise"));
    });
    it = kspace_.emplace(wave_on, std::move(b)).first;
  }
  return it->second;
}

CgConfig Experiment::recon_cg() const
{
  CgConfig cg;
  cg.max_iters = cfg_.recon.cg_iters;
  cg.tolerance = cfg_.recon.cg_tolerance;
  cg.lambda_total = cfg_.recon.lambda;
  return cg;
}

CgConfig Experiment::modl_cg() const
{
  CgConfig cg;
  cg.max_iters = cfg_.training.cg_iters;
  cg.tolerance = cfg_.recon.cg_tolerance;
  return cg;
}

ModlParams Experiment::modl_params()
{
  return stage("model", [&] {
    int const M = static_cast<int>(phantom().contrasts.size());
    if (!cfg_.recon.checkpoint.empty()) {
      auto p = read_checkpoint(cfg_.recon.checkpoint);
      if (p.ncontrasts() != M) {
        throw InvalidInput("checkpoint has " + std::to_string(p.ncontrasts()) + " contrasts, experiment has " +
                           std::to_string(M));
      }
      return p;
    }
    ConvArch arch;
    arch.width = cfg_.training.width;
    arch.hidden_layers = cfg_.training.hidden_layers;
    arch.kernel = cfg_.training.kernel;
    arch.leaky_slope = cfg_.training.leaky_slope;
    arch.init = cfg_.training.init;
    arch.init_scale = cfg_.training.init_scale;
    return make_modl_params(M, arch, derive_seed(cfg_.seed, "init"), cfg_.training.n_outer, cfg_.training.lambda_init);
  });
}

ContrastStack const &Experiment::reconstruction()
{
  if (!recon_) {
    auto const method = cfg_.recon.method;
    bool const wave_on = uses_wave(method);
    auto const &b = kspace(wave_on);
    auto const &op = encoding(wave_on);
    auto const &pat = pattern();
    if (uses_modl(method)) {
      auto const p = modl_params();
      recon_ = stage("reconstruction", [&] { return modl_reconstruct(p, b, op, pat, modl_cg()); });
    } else {
      recon_ = stage("reconstruction", [&] {
        ContrastStack x;
        for (std::size_t m = 0; m < b.size(); m++) {
          x.push_back(wave_caipi_recon(b[m], op, pat.masks[m], recon_cg()));
        }
        return x;
      });
    }
  }
  return *recon_;
}

TrainConfig Experiment::train_config() const
{
  TrainConfig tc;
  tc.learning_rate = cfg_.training.learning_rate;
  tc.lambda_learning_rate = cfg_.training.lambda_learning_rate;
  tc.steps = cfg_.training.steps;
  tc.batch = cfg_.training.batch;
  tc.seed = derive_seed(cfg_.seed, "train-order");
  tc.loss_weights = cfg_.training.loss_weights;
  tc.cg.max_iters = cfg_.training.cg_iters;
  return tc;
}

Experiment::TrainingSet Experiment::training_set(bool wave_on) const
{
  Dims const d = dims();
  std::vector<wmodl::Phantom> phantoms;
  for (int i = 0; i < cfg_.training.samples; i++) {
    phantoms.push_back(stage("phantom", [&] {
      return build_phantom(cfg_, d, cfg_.training.jitter, derive_seed(cfg_.seed, "train-phantom-" + std::to_string(i)));
    }));
  }
  LabelVolume support(d);
  for (auto const &ph : phantoms) {
    support.array() = support.array().max(nonzero(ph.tissue.labels).array());
  }
  auto op = make_operator(wave_on, cfg_.coils.restrict_to_object ? &support : nullptr);
  auto const pat = stage("sampling", [&] {
    return make_multicontrast_pattern(d.ny, d.nz, cfg_.sampling.accel, static_cast<int>(phantoms.front().contrasts.size()),
                                      cfg_.sampling.mode, cfg_.sampling.stagger);
  });
  std::vector<TrainingSample> samples;
  for (int i = 0; i < cfg_.training.samples; i++) {
    auto &ph = phantoms[static_cast<std::size_t>(i)];
    samples.push_back(stage("acquisition", [&] {
      auto b = simulate_acquisition(ph.contrasts, op, pat, cfg_.noise_sigma,
                                    derive_seed(cfg_.seed, "train-noise-" + std::to_string(i)));
      return make_training_sample(b, std::move(ph.contrasts), op, pat);
    }));
  }
  return {std::move(samples), std::move(op)};
}

Dictionary Experiment::dictionary() const
{
  auto const &q = cfg_.qalas;
  return stage("dictionary", [&] {
    return build_dictionary(log_spaced(q.t1_min_ms, q.t1_max_ms, q.t1_steps), log_spaced(q.t2_min_ms, q.t2_max_ms, q.t2_steps),
                            q.timing);
  });
}

ParameterMaps const &Experiment::fitted_maps()
{
  if (!maps_) {
    auto const &x = reconstruction();
    auto const dict = dictionary();
    auto const fg = foreground();
    maps_ = stage("fit", [&] {
      if (static_cast<int>(x.size()) != kQalasContrasts) {
        throw InvalidInput("fit-qalas needs the qalas phantom generator (5 contrasts), have " + std::to_string(x.size()));
      }
      ContrastStack mags;
      for (auto const &v : x) {
        ComplexVolume m(v.dims());
        m.array() = v.array().abs() / cfg_.phantom.intensity_scale;
        mags.push_back(std::move(m));
      }
      return fit_parameter_maps(mags, dict, fg);
    });
  }
  return *maps_;
}

// ---- commands ------------------------------------------------------------

namespace {

void write_truth(RunWriter &w, Experiment &ex)
{
  auto const &ph = ex.phantom();
  for (std::size_t m = 0; m < ph.contrasts.size(); m++) {
    w.volume(indexed("truth", m), ph.contrasts[m]);
    w.previews("truth_" + std::to_string(m), ph.contrasts[m]);
  }
  w.volume("labels.wmdl", ph.tissue.labels);
  auto const maps = ph.tissue.truth_maps();
  w.volume("truth_t1.wmdl", maps.t1);
  w.volume("truth_t2.wmdl", maps.t2);
  w.volume("truth_pd.wmdl", maps.pd);
}

void nrmse_metrics(RunWriter &w, ContrastStack const &x, ContrastStack const &ref, LabelVolume const &fg)
{
  for (std::size_t m = 0; m < x.size(); m++) {
    w.metric("nrmse_contrast_" + std::to_string(m), "all", nrmse(x[m], ref[m]));
    w.metric("nrmse_contrast_" + std::to_string(m), "foreground", nrmse(x[m], ref[m], &fg));
  }
  w.metric("nrmse", "all", nrmse(x, ref));
  w.metric("nrmse", "foreground", nrmse(x, ref, &fg));
}

} // namespace

RunReport run_phantom(ExperimentConfig const &cfg)
{
  Experiment ex(cfg);
  RunWriter w(ex.config(), "phantom");
  write_truth(w, ex);
  auto const &labels = ex.phantom().tissue.labels;
  for (auto const &[l, p] : ex.config().phantom.tissues) {
    w.metric("voxels", "label_" + std::to_string(l), static_cast<double>((labels.array() == l).count()));
  }
  return w.finish();
}

RunReport run_acquire(ExperimentConfig const &cfg)
{
  Experiment ex(cfg);
  RunWriter w(ex.config(), "acquire");
  bool const wave_on = Experiment::uses_wave(cfg.recon.method);
  auto const &b = ex.kspace(wave_on);
  auto const &pat = ex.pattern();
  for (std::size_t m = 0; m < b.size(); m++) {
    w.multicoil(indexed("kspace", m), b[m]);
    Eigen::ArrayXXd img = pat.masks[m].cast<double>();
    stage("write", [&] { write_pgm(w.path("mask_" + std::to_string(m) + ".pgm"), img); });
    double const n = static_cast<double>(sample_count(pat.masks[m]));
    w.metric("sampled_lines_contrast_" + std::to_string(m), "all", n);
    w.metric("effective_R_contrast_" + std::to_string(m), "all", static_cast<double>(pat.masks[m].size()) / n);
  }
  MultiCoilData sens;
  sens.volumes = ex.encoding(wave_on).sensitivities().maps;
  w.multicoil("sensitivities.wmdl", sens);
  w.volume("psf.wmdl", ex.encoding(wave_on).psf().table);
  w.metric("bandwidth_hz_per_pixel", "all", effective_bandwidth_hz(cfg));
  return w.finish();
}

RunReport run_recon(ExperimentConfig const &cfg)
{
  Experiment ex(cfg);
  RunWriter w(ex.config(), "recon");
  auto const &x = ex.reconstruction();
  std::string const stem = "recon_" + to_string(cfg.recon.method);
  for (std::size_t m = 0; m < x.size(); m++) {
    w.volume(indexed(stem, m), x[m]);
    w.previews(stem + "_" + std::to_string(m), x[m]);
  }
  nrmse_metrics(w, x, ex.phantom().contrasts, ex.foreground());
  return w.finish();
}

RunReport run_train(ExperimentConfig const &cfg)
{
  Experiment ex(cfg);
  RunWriter w(ex.config(), "train");
  if (!Experiment::uses_modl(cfg.recon.method)) {
    throw StageError("training", ErrorKind::Config, "recon.method must be modl or wave-modl to train");
  }
  auto p = ex.modl_params();
  auto const set = ex.training_set(Experiment::uses_wave(cfg.recon.method));
  SamplingPattern const &pat = ex.pattern();
  auto const tc = ex.train_config();
  std::string log;
  auto meta = [&](int steps_done) {
    return CheckpointMeta{{"config_hash", config_hash(cfg)},
                          {"method", to_string(cfg.recon.method)},
                          {"seed", std::to_string(cfg.seed)},
                          {"steps", std::to_string(steps_done)}};
  };
  auto on_step = [&](int step, double loss, ModlParams const &params) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%d %.17g %.17g %.17g\n", step, loss, params.lambda1(), params.lambda2());
    log += buf;
    int const every = cfg.training.checkpoint_every;
    if (every > 0 && (step + 1) % every == 0 && step + 1 < cfg.training.steps) {
      stage("write", [&] { write_checkpoint(w.path("model_step" + std::to_string(step + 1) + ".wmck"), params, meta(step + 1)); });
    }
  };
  auto const losses = stage("training", [&] { return train(p, set.samples, set.op, pat, tc, on_step); });
  stage("write", [&] { write_checkpoint(w.path("model.wmck"), p, meta(cfg.training.steps)); });
  w.text("loss.txt", "# step loss lambda1 lambda2\n" + log);
  w.metric("parameters", "all", static_cast<double>(p.parameter_count()));
  if (!losses.empty()) {
    w.metric("loss_initial", "train", losses.front());
    w.metric("loss_final", "train", losses.back());
    w.metric("loss_ratio", "train", losses.back() / losses.front());
  }
  w.metric("lambda1", "all", p.lambda1());
  w.metric("lambda2", "all", p.lambda2());
  return w.finish();
}

namespace {

void fit_outputs(RunWriter &w, Experiment &ex)
{
  auto const &maps = ex.fitted_maps();
  w.volume("fit_t1.wmdl", maps.t1);
  w.volume("fit_t2.wmdl", maps.t2);
  w.volume("fit_pd.wmdl", maps.pd);
  w.volume("fit_residual.wmdl", maps.residual);
  w.volume("fit_flags.wmdl", maps.flags);
}

} // namespace

RunReport run_fit_qalas(ExperimentConfig const &cfg)
{
  Experiment ex(cfg);
  RunWriter w(ex.config(), "fit-qalas");
  fit_outputs(w, ex);
  auto const &maps = ex.fitted_maps();
  auto const truth = ex.phantom().tissue.truth_maps();
  auto const &r = cfg.roi;
  auto const reg = stage("roi", [&] {
    return roi_box_regression(truth, maps, ex.phantom().tissue.labels, r.tissues, r.n_boxes, r.box, derive_seed(cfg.seed, "roi"));
  });
  for (int q = 0; q < 3; q++) {
    std::string const n = kQuantityNames[q];
    w.metric(n + "_slope", "pooled", reg.pooled[q].slope);
    w.metric(n + "_intercept", "pooled", reg.pooled[q].intercept);
    w.metric(n + "_r", "pooled", reg.pooled[q].r);
    for (auto const &[t, st] : reg.per_tissue) {
      std::string const roi = "label_" + std::to_string(t);
      w.metric(n + "_mean_truth", roi, st[q].mean_a);
      w.metric(n + "_mean_fit", roi, st[q].mean_b);
      w.metric(n + "_std_fit", roi, st[q].std_b);
    }
  }
  nrmse_metrics(w, ex.reconstruction(), ex.phantom().contrasts, ex.foreground());
  return w.finish();
}

RunReport run_synth(ExperimentConfig const &cfg)
{
  Experiment ex(cfg);
  RunWriter w(ex.config(), "synth");
  fit_outputs(w, ex);
  auto const &maps = ex.fitted_maps();
  auto const truth = ex.phantom().tissue.truth_maps();
  auto const fg = ex.foreground();
  for (auto kind : cfg.qalas.synth) {
    auto const params = default_synth_params(kind);
    auto const img = stage("synthesis", [&] { return synthesize_contrast(maps, kind, params); });
    auto const ref = stage("synthesis", [&] { return synthesize_contrast(truth, kind, params); });
    std::string const name = "synth_" + to_string(kind);
    w.volume(name + ".wmdl", img);
    w.previews(name, img);
    if (ref.array().abs().maxCoeff() > 0.0) {
      w.metric("nrmse_" + name, "foreground", nrmse(to_complex(img), to_complex(ref), &fg));
    }
  }
  return w.finish();
}

RunReport run_gfactor(ExperimentConfig const &cfg)
{
  Experiment ex(cfg);
  RunWriter w(ex.config(), "gfactor");
  if (Experiment::uses_modl(cfg.recon.method)) {
    throw StageError("gfactor", ErrorKind::Config, "g-factor maps are computed for the linear methods sense and wave");
  }
  bool const wave_on = Experiment::uses_wave(cfg.recon.method);
  auto const &op = ex.encoding(wave_on);
  auto const &pat = ex.pattern();
  CgConfig const cg = ex.recon_cg();
  ReconFn const recon = [&op, cg](MultiCoilData const &b, Mask const &m) { return wave_caipi_recon(b, op, m, cg); };
  GFactorConfig gc;
  gc.n_replicas = cfg.gfactor.replicas;
  gc.sigma = cfg.gfactor.sigma;
  gc.seed = derive_seed(cfg.seed, "gfactor");
  double const R = static_cast<double>(cfg.sampling.accel.ry * cfg.sampling.accel.rz);
  auto const g = stage("gfactor", [&] { return gfactor_map(recon, op, pat.masks.front(), R, gc); });
  std::string const stem = "gfactor_" + to_string(cfg.recon.method);
  w.volume(stem + ".wmdl", g.g);
  w.volume(stem + "_flags.wmdl", g.flags);
  w.previews(stem, g.g);
  auto const fg = ex.foreground();
  w.metric("mean_g", "foreground", mean_over(g.g, fg));
  double gmax = 0.0;
  for (Index i = 0; i < fg.size(); i++) {
    if (fg[i] != 0) {
      gmax = std::max(gmax, g.g[i]);
    }
  }
  w.metric("max_g", "foreground", gmax);
  w.metric("undefined_voxels", "all", static_cast<double>(g.flags.array().count()));
  return w.finish();
}

std::vector<MetricRecord> compare_volumes(fs::path const &recon, fs::path const &reference, fs::path const &roi)
{
  auto const x = stage("read", [&] { return read_complex_volume(recon); });
  auto const ref = stage("read", [&] { return read_complex_volume(reference); });
  std::vector<MetricRecord> out;
  if (roi.empty()) {
    out.push_back({"nrmse", "all", stage("metrics", [&] { return nrmse(x, ref); })});
  } else {
    auto const labels = stage("read", [&] { return read_label_volume(roi); });
    auto const fg = nonzero(labels);
    out.push_back({"nrmse", "all", stage("metrics", [&] { return nrmse(x, ref); })});
    out.push_back({"nrmse", "roi", stage("metrics", [&] { return nrmse(x, ref, &fg); })});
  }
  return out;
}

} // namespace wmodl
