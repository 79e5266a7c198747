#include "alltimeot/drift_models.hpp"

#include <cmath>

namespace alltimeot {

namespace {

struct FsName {
  FeatureSet fs;
  const char* name;
};

constexpr FsName fs_names[] = {
    {FeatureSet::affine_1d, "affine_1d"},     {FeatureSet::quad_t_1d, "quad_t_1d"},
    {FeatureSet::bilinear_1d, "bilinear_1d"}, {FeatureSet::tanh_1d, "tanh_1d"},
    {FeatureSet::affine_d, "affine_d"},       {FeatureSet::bilinear_2d, "bilinear_2d"},
    {FeatureSet::tanh_2d, "tanh_2d"},
};

void fill_features(FeatureSet fs, int d, double t, const double* x, double* out) {
  switch (fs) {
    case FeatureSet::affine_1d:
      out[0] = 1; out[1] = t; out[2] = x[0];
      return;
    case FeatureSet::quad_t_1d:
      out[0] = 1; out[1] = t; out[2] = t * t; out[3] = x[0];
      return;
    case FeatureSet::bilinear_1d:
      out[0] = 1; out[1] = t; out[2] = x[0]; out[3] = t * x[0];
      return;
    case FeatureSet::tanh_1d: {
      const double th = std::tanh(x[0]), th2 = std::tanh(2 * x[0]);
      out[0] = 1; out[1] = t; out[2] = x[0]; out[3] = t * x[0];
      out[4] = th; out[5] = t * th; out[6] = th2; out[7] = t * th2;
      return;
    }
    case FeatureSet::affine_d:
      out[0] = 1; out[1] = t;
      for (int j = 0; j < d; ++j) out[2 + j] = x[j];
      return;
    case FeatureSet::bilinear_2d:
    case FeatureSet::tanh_2d:
      out[0] = 1; out[1] = t; out[2] = x[0]; out[3] = x[1]; out[4] = t * x[0]; out[5] = t * x[1];
      if (fs == FeatureSet::tanh_2d) {
        const double th = std::tanh(x[0]), th2 = std::tanh(2 * x[0]);
        out[6] = th; out[7] = t * th; out[8] = th2; out[9] = t * th2;
      }
      return;
  }
}

}  // namespace

FeatureSet parse_feature_set(const std::string& name) {
  for (const auto& fn : fs_names)
    if (name == fn.name) return fn.fs;
  throw ConfigError("unknown feature set: " + name);
}

std::string to_string(FeatureSet fs) {
  for (const auto& fn : fs_names)
    if (fn.fs == fs) return fn.name;
  return "unknown";
}

int feature_count(FeatureSet fs, int d) {
  switch (fs) {
    case FeatureSet::affine_1d: return 3;
    case FeatureSet::quad_t_1d:
    case FeatureSet::bilinear_1d: return 4;
    case FeatureSet::tanh_1d: return 8;
    case FeatureSet::affine_d: return d + 2;
    case FeatureSet::bilinear_2d: return 6;
    case FeatureSet::tanh_2d: return 10;
  }
  return 0;
}

int feature_set_dim(FeatureSet fs, int d) {
  switch (fs) {
    case FeatureSet::affine_d: return d;
    case FeatureSet::bilinear_2d:
    case FeatureSet::tanh_2d: return 2;
    default: return 1;
  }
}

// ---------------------------------------------------------------------------

void DriftModel::set_params(const Vector& w) {
  if (w.size() != num_params()) throw ContractViolation("parameter vector has wrong length");
  w_ = w;
}

void DriftModel::check_inputs(const Vector& t, const Points& x) const {
  if (x.cols() != dim()) throw ContractViolation("drift model: point dimension mismatch");
  if (t.size() != x.rows()) throw ContractViolation("drift model: time/point count mismatch");
}

DriftField DriftModel::as_field() const {
  std::shared_ptr<const DriftModel> self = clone();
  return [self](double t, const Points& x) { return self->evaluate(Vector::Constant(x.rows(), t), x); };
}

// ---------------------------------------------------------------------------

FeatureDictionary::FeatureDictionary(FeatureSet fs, int d) : fs_(fs), d_(feature_set_dim(fs, d)) {
  if (d_ < 1) throw ConfigError("dictionary dimension must be >= 1");
  F_ = feature_count(fs, d_);
  w_ = Vector::Zero(d_ * F_);
}

ModelSpec FeatureDictionary::spec() const {
  ModelSpec s;
  s.family = "dictionary";
  s.features = to_string(fs_);
  s.d = d_;
  s.hidden.clear();
  return s;
}

Eigen::MatrixXd FeatureDictionary::features(const Vector& t, const Points& x) const {
  check_inputs(t, x);
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> phi(x.rows(), F_);
  for (Eigen::Index i = 0; i < x.rows(); ++i) fill_features(fs_, d_, t(i), x.row(i).data(), phi.row(i).data());
  return phi;
}

Eigen::MatrixXd FeatureDictionary::weights() const {
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(w_.data(), d_, F_);
}

Points FeatureDictionary::evaluate(const Vector& t, const Points& x) const {
  return features(t, x) * weights().transpose();
}

Vector FeatureDictionary::backprop(const Vector& t, const Points& x, const Points& cot) const {
  if (cot.rows() != x.rows() || cot.cols() != d_) throw ContractViolation("cotangent shape mismatch");
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> g = cot.transpose() * features(t, x);
  return Eigen::Map<const Vector>(g.data(), g.size());
}

// ---------------------------------------------------------------------------

MlpDrift::MlpDrift(int d, std::vector<int> hidden) : d_(d) {
  if (d < 1) throw ConfigError("MLP output dimension must be >= 1");
  sizes_.push_back(d + 1);
  for (int h : hidden) {
    if (h < 1) throw ConfigError("hidden layer width must be >= 1");
    sizes_.push_back(h);
  }
  sizes_.push_back(d);
  Eigen::Index n = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    offsets_.push_back(n);
    n += static_cast<Eigen::Index>(sizes_[l + 1]) * (sizes_[l] + 1);
  }
  w_ = Vector::Zero(n);
}

ModelSpec MlpDrift::spec() const {
  ModelSpec s;
  s.family = "mlp";
  s.features.clear();
  s.d = d_;
  s.hidden.assign(sizes_.begin() + 1, sizes_.end() - 1);
  return s;
}

Eigen::Map<const MlpDrift::Mat> MlpDrift::weight(std::size_t l) const {
  return Eigen::Map<const Mat>(w_.data() + offsets_[l], sizes_[l + 1], sizes_[l]);
}

Eigen::Map<const Eigen::VectorXd> MlpDrift::bias(std::size_t l) const {
  return Eigen::Map<const Eigen::VectorXd>(w_.data() + offsets_[l] + sizes_[l + 1] * sizes_[l], sizes_[l + 1]);
}

Points MlpDrift::evaluate(const Vector& t, const Points& x) const {
  check_inputs(t, x);
  Eigen::MatrixXd a(x.rows(), d_ + 1);
  a.col(0) = t;
  a.rightCols(d_) = x;
  const std::size_t L = sizes_.size() - 1;
  for (std::size_t l = 0; l < L; ++l) {
    Eigen::MatrixXd z = a * weight(l).transpose();
    z.rowwise() += bias(l).transpose();
    a = (l + 1 < L) ? Eigen::MatrixXd(z.array().tanh()) : z;
  }
  return a;
}

Vector MlpDrift::backprop(const Vector& t, const Points& x, const Points& cot) const {
  check_inputs(t, x);
  if (cot.rows() != x.rows() || cot.cols() != d_) throw ContractViolation("cotangent shape mismatch");
  const std::size_t L = sizes_.size() - 1;
  std::vector<Eigen::MatrixXd> acts(L);
  acts[0].resize(x.rows(), d_ + 1);
  acts[0].col(0) = t;
  acts[0].rightCols(d_) = x;
  for (std::size_t l = 0; l + 1 < L; ++l) {
    Eigen::MatrixXd z = acts[l] * weight(l).transpose();
    z.rowwise() += bias(l).transpose();
    acts[l + 1] = z.array().tanh();
  }
  Vector grad = Vector::Zero(w_.size());
  Eigen::MatrixXd g = cot;
  for (std::size_t l = L; l-- > 0;) {
    Eigen::Map<Mat> gw(grad.data() + offsets_[l], sizes_[l + 1], sizes_[l]);
    Eigen::Map<Eigen::VectorXd> gb(grad.data() + offsets_[l] + sizes_[l + 1] * sizes_[l], sizes_[l + 1]);
    gw = g.transpose() * acts[l];
    gb = g.colwise().sum().transpose();
    if (l == 0) break;
    g = (g * weight(l)).array() * (1.0 - acts[l].array().square());
  }
  return grad;
}

// ---------------------------------------------------------------------------

std::unique_ptr<DriftModel> make_model(const ModelSpec& spec) {
  if (spec.family == "dictionary") return std::make_unique<FeatureDictionary>(parse_feature_set(spec.features), spec.d);
  if (spec.family == "mlp") return std::make_unique<MlpDrift>(spec.d, spec.hidden);
  throw ConfigError("unknown model family: " + spec.family);
}

void randomize(DriftModel& model, Rng& rng) {
  Vector w(model.num_params());
  if (auto* mlp = dynamic_cast<MlpDrift*>(&model)) {
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto& sizes = mlp->layer_sizes();
    Eigen::Index k = 0;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      const double scale = 1.0 / std::sqrt(static_cast<double>(sizes[l]));
      for (int i = 0; i < sizes[l + 1] * sizes[l]; ++i) w(k++) = scale * normal(rng);
      for (int i = 0; i < sizes[l + 1]; ++i) w(k++) = 0.0;
    }
  } else {
    std::uniform_real_distribution<double> unif(-0.5, 0.5);
    for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = unif(rng);
  }
  model.set_params(w);
}

std::unique_ptr<DriftModel> init_model(const ModelSpec& spec, Rng& rng) {
  auto m = make_model(spec);
  randomize(*m, rng);
  return m;
}

}  // namespace alltimeot
