#include "alltimeot/config.hpp"

#include <algorithm>
#include <fstream>

namespace alltimeot {

namespace {

Json vec_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vector json_vec(const Json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Json qn_json(const QuasiNewtonConfig& q) {
  return {{"memory", q.memory},     {"gtol", q.gtol},         {"ftol", q.ftol},
          {"max_iter", q.max_iter}, {"restarts", q.restarts}, {"max_linesearch", q.max_linesearch}};
}

QuasiNewtonConfig json_qn(const Json& j) {
  QuasiNewtonConfig q;
  q.memory = j.at("memory");
  q.gtol = j.at("gtol");
  q.ftol = j.at("ftol");
  q.max_iter = j.at("max_iter");
  q.restarts = j.at("restarts");
  q.max_linesearch = j.at("max_linesearch");
  return q;
}

Json model_json(const NamedModel& m) {
  return {{"name", m.name},
          {"family", m.spec.family},
          {"features", m.spec.features},
          {"d", m.spec.d},
          {"hidden", m.spec.hidden}};
}

NamedModel json_model(const Json& j) {
  NamedModel m;
  m.name = j.at("name");
  m.spec.family = j.at("family");
  m.spec.features = j.at("features");
  m.spec.d = j.at("d");
  m.spec.hidden = j.at("hidden").get<std::vector<int>>();
  return m;
}

NamedModel dictionary(const std::string& name, const std::string& features, int d = 1) {
  NamedModel m;
  m.name = name;
  m.spec.features = features;
  m.spec.d = d;
  return m;
}

/// Reject keys of `user` that the reference layout does not have.
void check_keys(const Json& user, const Json& ref, const std::string& path) {
  if (user.is_object() && ref.is_object()) {
    for (auto it = user.begin(); it != user.end(); ++it) {
      const std::string p = path.empty() ? it.key() : path + "." + it.key();
      if (!ref.contains(it.key())) throw ConfigError("unknown config key: " + p);
      check_keys(it.value(), ref.at(it.key()), p);
    }
  } else if (user.is_array() && ref.is_array() && !ref.empty() && ref.front().is_object()) {
    for (std::size_t i = 0; i < user.size(); ++i) check_keys(user[i], ref.front(), path + "." + std::to_string(i));
  }
}

/// Defaults of the named experiment patched with `j`.
Json complete(const Json& j) {
  if (!j.is_object() || !j.contains("experiment")) throw ConfigError("config needs an \"experiment\" field");
  Json full = to_json(default_config(j.at("experiment").get<std::string>()));
  check_keys(j, full, "");
  // models are replaced as a whole; fill each entry from the default layout
  Json patched = j;
  if (patched.contains("models")) {
    for (auto& m : patched["models"]) {
      Json base = model_json(NamedModel{});
      base.merge_patch(m);
      m = base;
    }
  }
  full.merge_patch(patched);
  return full;
}

}  // namespace

const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names = {"exp1", "exp2", "exp3", "exp4", "exp5", "stochastic",
                                                 "sensitivity", "dimscan", "baselines"};
  return names;
}

std::vector<std::uint64_t> ExperimentConfig::seeds() const {
  std::vector<std::uint64_t> s;
  for (int r = 0; r < repeats; ++r) s.push_back(seed + static_cast<std::uint64_t>(r));
  return s;
}

void ExperimentConfig::validate() const {
  if (std::find(experiment_names().begin(), experiment_names().end(), experiment) == experiment_names().end())
    throw ConfigError("unknown experiment: " + experiment);
  flow.dim();
  loss.validate();
  if (sampling.M < 1 || sampling.N < 1 || sampling.N0 < 1) throw ConfigError("M, N, N0 must be >= 1");
  if (sampling.ensemble < 1) throw ConfigError("ensemble size must be >= 1");
  if (repeats < 1) throw ConfigError("repeats must be >= 1");
  if (threads < 1) throw ConfigError("threads must be >= 1");
  if (optimizer.method != "auto" && optimizer.method != "qn" && optimizer.method != "adaptive")
    throw ConfigError("optimizer.method must be auto, qn or adaptive");
  optimizer.qn.validate();
  optimizer.adaptive.validate();
  for (const auto& m : models) make_model(m.spec);
  if (eval.times.empty()) throw ConfigError("eval.times is empty");
  for (double t : eval.times)
    if (t < 0.0 || t > flow.T) throw ConfigError("eval time outside [0, T]");
  if (!std::is_sorted(eval.times.begin(), eval.times.end())) throw ConfigError("eval.times must be sorted");
  if (eval.particles < 2 || eval.steps < 1 || eval.projections < 1 || eval.mmd_max_points < 2)
    throw ConfigError("evaluation counts out of range");
  if (!eval.monte_carlo) eval.grid.validate();
  if (baselines.mmot_select != "drift_mse" && baselines.mmot_select != "objective")
    throw ConfigError("baselines.mmot_select must be drift_mse or objective");
  for (const auto& name : baselines.methods)
    if (name != "wot" && name != "mmot" && name != "flow_matching") throw ConfigError("unknown baseline: " + name);
}

ExperimentConfig default_config(const std::string& experiment) {
  ExperimentConfig c;
  c.experiment = experiment;
  c.optimizer.qn.restarts = 4;
  c.eval.grid.x_lo = Vector::Constant(1, -4.0);
  c.eval.grid.x_hi = Vector::Constant(1, 4.0);
  c.models = {dictionary("affine", "affine_1d")};

  if (experiment == "exp1") {
    c.flow = make_flow(FlowKind::gauss_translate_1d);
    c.repeats = 3;
  } else if (experiment == "exp2") {
    c.flow = make_flow(FlowKind::roundtrip_1d);
    c.models = {dictionary("quad_t", "quad_t_1d")};
  } else if (experiment == "exp3") {
    c.flow = make_flow(FlowKind::bimodal_merge_1d);
    NamedModel mlp;
    mlp.name = "mlp";
    mlp.spec.family = "mlp";
    c.models = {dictionary("bilinear", "bilinear_1d"), dictionary("tanh", "tanh_1d"), mlp};
    c.loss.lambda = 5000.0;
    c.sampling = {50, 30, 60, TimeMode::grid, 20};
  } else if (experiment == "exp4") {
    c.flow = make_flow(FlowKind::gauss_translate_2d);
    c.models = {dictionary("affine", "affine_d", 2)};
    c.sampling = {25, 20, 50, TimeMode::grid, 15};
    c.eval.grid.x_lo = Vector::Constant(2, -4.0);
    c.eval.grid.x_hi = Vector::Constant(2, 4.0);
  } else if (experiment == "exp5") {
    c.flow = make_flow(FlowKind::bifurcation_2d);
    c.models = {dictionary("affine", "affine_d", 2), dictionary("tanh", "tanh_2d", 2)};
    c.loss.lambda = 3000.0;
    c.sampling = {25, 25, 60, TimeMode::grid, 10};
    c.eval.grid.x_lo = Vector(2);
    c.eval.grid.x_lo << -4.0, -3.0;
    c.eval.grid.x_hi = Vector(2);
    c.eval.grid.x_hi << 4.0, 3.0;
  } else if (experiment == "stochastic") {
    c.flow = make_flow(FlowKind::stochastic_gauss_1d);
    c.loss.sigma = 1.0;
    c.sampling = {30, 30, 60, TimeMode::grid, 30};
    c.optimizer.method = "adaptive";
    c.optimizer.adaptive.iterations = 15000;
    c.optimizer.adaptive.lr_initial = 5e-4;
    c.optimizer.adaptive.lr_final = 5e-5;
    c.eval.particles = 20000;
    c.eval.steps = 2000;
    c.eval.grid.x_lo = Vector::Constant(1, -3.0);
    c.eval.grid.x_hi = Vector::Constant(1, 3.0);
  } else if (experiment == "sensitivity") {
    c.flow = make_flow(FlowKind::gauss_translate_1d);
    c.sampling = {30, 20, 50, TimeMode::grid, 5};
    c.optimizer.qn.restarts = 1;
    c.repeats = 4;
    c.eval.grid.x_lo = Vector::Constant(1, -3.0);
    c.eval.grid.x_hi = Vector::Constant(1, 3.0);
    c.eval.references = false;
    c.eval.plot_data = false;
  } else if (experiment == "dimscan") {
    c.flow = make_flow(FlowKind::gauss_translate_nd, 1);
    c.models = {dictionary("affine", "affine_d", 1)};
    c.sampling = {25, 20, 50, TimeMode::grid, 5};
    c.optimizer.qn.restarts = 1;
    c.repeats = 3;
    c.quadratic_cache = false;
    c.eval.monte_carlo = true;
    c.eval.references = false;
    c.eval.plot_data = false;
  } else if (experiment == "baselines") {
    c.flow = make_flow(FlowKind::roundtrip_1d);
    c.models = {};
    c.repeats = 3;
    c.eval.references = false;
  } else {
    throw ConfigError("unknown experiment: " + experiment);
  }
  c.loss.T = c.flow.T;
  return c;
}

Json to_json(const ExperimentConfig& c) {
  Json models = Json::array();
  for (const auto& m : c.models) models.push_back(model_json(m));
  const auto& a = c.optimizer.adaptive;
  const auto& g = c.eval.grid;
  const auto& b = c.baselines;
  return {
      {"experiment", c.experiment},
      {"flow",
       {{"kind", to_string(c.flow.kind)},
        {"T", c.flow.T},
        {"d", c.flow.d},
        {"separation", c.flow.separation},
        {"sigma", c.flow.sigma}}},
      {"models", models},
      {"loss",
       {{"lambda", c.loss.lambda},
        {"sigma", c.loss.sigma},
        {"h", c.loss.kernel.h},
        {"same_slice_mask", c.loss.same_slice_mask}}},
      {"sampling",
       {{"M", c.sampling.M},
        {"N", c.sampling.N},
        {"N0", c.sampling.N0},
        {"time_mode", to_string(c.sampling.time_mode)},
        {"ensemble", c.sampling.ensemble}}},
      {"optimizer",
       {{"method", c.optimizer.method},
        {"qn", qn_json(c.optimizer.qn)},
        {"adaptive",
         {{"iterations", a.iterations},
          {"lr_initial", a.lr_initial},
          {"lr_final", a.lr_final},
          {"batches_per_step", a.batches_per_step},
          {"beta1", a.beta1},
          {"beta2", a.beta2},
          {"eps", a.eps},
          {"max_skip_fraction", a.max_skip_fraction}}}}},
      {"quadratic_cache", c.quadratic_cache},
      {"seed", c.seed},
      {"repeats", c.repeats},
      {"threads", c.threads},
      {"eval",
       {{"times", c.eval.times},
        {"grid",
         {{"t_lo", g.t_lo}, {"t_hi", g.t_hi}, {"nt", g.nt}, {"x_lo", vec_json(g.x_lo)}, {"x_hi", vec_json(g.x_hi)},
          {"nx", g.nx}}},
        {"monte_carlo", c.eval.monte_carlo},
        {"mc_points", c.eval.mc_points},
        {"mc_slices", c.eval.mc_slices},
        {"mc_lo", c.eval.mc_lo},
        {"mc_hi", c.eval.mc_hi},
        {"particles", c.eval.particles},
        {"steps", c.eval.steps},
        {"projections", c.eval.projections},
        {"mmd_max_points", c.eval.mmd_max_points},
        {"mmd_h", c.eval.mmd_h},
        {"references", c.eval.references},
        {"plot_data", c.eval.plot_data}}},
      {"baselines",
       {{"methods", b.methods},
        {"wot_snapshots", b.wot_snapshots},
        {"mmot_snapshots", b.mmot_snapshots},
        {"per_snapshot", b.per_snapshot},
        {"sim_particles", b.sim_particles},
        {"sim_steps", b.sim_steps},
        {"wot",
         {{"epsilon", b.wot.epsilon}, {"eps_scale", b.wot.eps_scale}, {"max_iter", b.wot.max_iter}, {"tol", b.wot.tol}}},
        {"mmot",
         {{"lambdas", b.mmot.lambdas},
          {"alphas", b.mmot.alphas},
          {"inits", b.mmot.inits},
          {"init_scale", b.mmot.init_scale},
          {"qn", qn_json(b.mmot.optimizer)},
          {"select", b.mmot_select}}},
        {"flow_matching",
         {{"pairs", b.flow_matching.pairs},
          {"features", b.flow_matching_features},
          {"qn", qn_json(b.flow_matching.optimizer)}}}}},
      {"sweep", {{"M", c.sweep.M}, {"N", c.sweep.N}, {"lambda", c.sweep.lambda}}},
      {"dims", c.dims},
  };
}

ExperimentConfig config_from_json(const Json& in) {
  const Json j = complete(in);
  ExperimentConfig c;
  try {
    c.experiment = j.at("experiment");
    const Json& f = j.at("flow");
    c.flow.kind = parse_flow_kind(f.at("kind").get<std::string>());
    c.flow.T = f.at("T");
    c.flow.d = f.at("d");
    c.flow.separation = f.at("separation");
    c.flow.sigma = f.at("sigma");

    for (const auto& m : j.at("models")) c.models.push_back(json_model(m));

    const Json& l = j.at("loss");
    c.loss.lambda = l.at("lambda");
    c.loss.sigma = l.at("sigma");
    c.loss.kernel.h = l.at("h");
    c.loss.same_slice_mask = l.at("same_slice_mask");
    c.loss.T = c.flow.T;

    const Json& s = j.at("sampling");
    c.sampling.M = s.at("M");
    c.sampling.N = s.at("N");
    c.sampling.N0 = s.at("N0");
    c.sampling.time_mode = parse_time_mode(s.at("time_mode").get<std::string>());
    c.sampling.ensemble = s.at("ensemble");

    const Json& o = j.at("optimizer");
    c.optimizer.method = o.at("method");
    c.optimizer.qn = json_qn(o.at("qn"));
    const Json& a = o.at("adaptive");
    c.optimizer.adaptive.iterations = a.at("iterations");
    c.optimizer.adaptive.lr_initial = a.at("lr_initial");
    c.optimizer.adaptive.lr_final = a.at("lr_final");
    c.optimizer.adaptive.batches_per_step = a.at("batches_per_step");
    c.optimizer.adaptive.beta1 = a.at("beta1");
    c.optimizer.adaptive.beta2 = a.at("beta2");
    c.optimizer.adaptive.eps = a.at("eps");
    c.optimizer.adaptive.max_skip_fraction = a.at("max_skip_fraction");

    c.quadratic_cache = j.at("quadratic_cache");
    c.seed = j.at("seed");
    c.repeats = j.at("repeats");
    c.threads = j.at("threads");
    c.loss.threads = c.threads;

    const Json& e = j.at("eval");
    c.eval.times = e.at("times").get<std::vector<double>>();
    const Json& g = e.at("grid");
    c.eval.grid.t_lo = g.at("t_lo");
    c.eval.grid.t_hi = g.at("t_hi");
    c.eval.grid.nt = g.at("nt");
    c.eval.grid.x_lo = json_vec(g.at("x_lo"));
    c.eval.grid.x_hi = json_vec(g.at("x_hi"));
    c.eval.grid.nx = g.at("nx");
    c.eval.monte_carlo = e.at("monte_carlo");
    c.eval.mc_points = e.at("mc_points");
    c.eval.mc_slices = e.at("mc_slices");
    c.eval.mc_lo = e.at("mc_lo");
    c.eval.mc_hi = e.at("mc_hi");
    c.eval.particles = e.at("particles");
    c.eval.steps = e.at("steps");
    c.eval.projections = e.at("projections");
    c.eval.mmd_max_points = e.at("mmd_max_points");
    c.eval.mmd_h = e.at("mmd_h");
    c.eval.references = e.at("references");
    c.eval.plot_data = e.at("plot_data");

    const Json& b = j.at("baselines");
    c.baselines.methods = b.at("methods").get<std::vector<std::string>>();
    c.baselines.wot_snapshots = b.at("wot_snapshots").get<std::vector<int>>();
    c.baselines.mmot_snapshots = b.at("mmot_snapshots").get<std::vector<int>>();
    c.baselines.per_snapshot = b.at("per_snapshot");
    c.baselines.sim_particles = b.at("sim_particles");
    c.baselines.sim_steps = b.at("sim_steps");
    const Json& w = b.at("wot");
    c.baselines.wot.epsilon = w.at("epsilon");
    c.baselines.wot.eps_scale = w.at("eps_scale");
    c.baselines.wot.max_iter = w.at("max_iter");
    c.baselines.wot.tol = w.at("tol");
    const Json& mm = b.at("mmot");
    c.baselines.mmot.lambdas = mm.at("lambdas").get<std::vector<double>>();
    c.baselines.mmot.alphas = mm.at("alphas").get<std::vector<double>>();
    c.baselines.mmot.inits = mm.at("inits");
    c.baselines.mmot.init_scale = mm.at("init_scale");
    c.baselines.mmot.optimizer = json_qn(mm.at("qn"));
    c.baselines.mmot_select = mm.at("select");
    const Json& fm = b.at("flow_matching");
    c.baselines.flow_matching.pairs = fm.at("pairs");
    c.baselines.flow_matching_features = fm.at("features");
    c.baselines.flow_matching.optimizer = json_qn(fm.at("qn"));

    const Json& sw = j.at("sweep");
    c.sweep.M = sw.at("M").get<std::vector<int>>();
    c.sweep.N = sw.at("N").get<std::vector<int>>();
    c.sweep.lambda = sw.at("lambda").get<std::vector<double>>();
    c.dims = j.at("dims").get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  c.validate();
  return c;
}

void apply_override(Json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value: " + assignment);
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  Json value = Json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  Json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("empty key in override: " + path);
    if (node->is_array()) {
      std::size_t idx = 0;
      try {
        idx = std::stoul(key);
      } catch (const std::exception&) {
        throw ConfigError("expected an index in override: " + path);
      }
      if (idx >= node->size()) throw ConfigError("index out of range in override: " + path);
      node = &(*node)[idx];
    } else if (node->is_object()) {
      if (!node->contains(key)) throw ConfigError("unknown config key: " + path);
      node = &(*node)[key];
    } else {
      throw ConfigError("cannot descend into a scalar: " + path);
    }
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = value;
}

ExperimentConfig load_config(const std::string& experiment, const std::optional<std::string>& path,
                             const std::vector<std::string>& overrides, std::optional<std::uint64_t> seed) {
  Json j = to_json(default_config(experiment));
  if (path) {
    std::ifstream in(*path);
    if (!in) throw ConfigError("cannot open config file: " + *path);
    Json file = Json::parse(in, nullptr, false);
    if (file.is_discarded() || !file.is_object()) throw ConfigError("config file is not a JSON object: " + *path);
    if (file.contains("experiment") && file.at("experiment") != experiment)
      throw ConfigError("config file is for experiment " + file.at("experiment").dump());
    file["experiment"] = experiment;
    j = complete(file);
  }
  for (const auto& o : overrides) apply_override(j, o);
  if (seed) j["seed"] = *seed;
  return config_from_json(j);
}

std::uint64_t config_hash(const ExperimentConfig& config) {
  const std::string s = to_json(config).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace alltimeot
