#pragma once

#include "alltimeot/common.hpp"

#include <memory>
#include <string>
#include <vector>

namespace alltimeot {

enum class FeatureSet { affine_1d, quad_t_1d, bilinear_1d, tanh_1d, affine_d, bilinear_2d, tanh_2d };

FeatureSet parse_feature_set(const std::string& name);
std::string to_string(FeatureSet fs);
int feature_count(FeatureSet fs, int d);
/// Spatial dimension implied by a feature set; affine_d takes it from the caller.
int feature_set_dim(FeatureSet fs, int d);

/// Serializable description of a drift model.
struct ModelSpec {
  std::string family = "dictionary";  ///< "dictionary" or "mlp"
  std::string features = "affine_1d";
  int d = 1;
  std::vector<int> hidden = {48, 48};
};

/// Velocity field u(t, x) in R^d with a flat parameter vector.
class DriftModel {
 public:
  virtual ~DriftModel() = default;

  virtual int dim() const = 0;
  virtual int num_params() const = 0;
  virtual bool linear_in_params() const = 0;
  virtual std::unique_ptr<DriftModel> clone() const = 0;
  virtual ModelSpec spec() const = 0;

  const Vector& params() const { return w_; }
  void set_params(const Vector& w);

  /// Drift at (t_i, x_i) for every row i.
  virtual Points evaluate(const Vector& t, const Points& x) const = 0;
  /// Gradient of sum_i <cot_i, u(t_i, x_i)> with respect to the parameters.
  virtual Vector backprop(const Vector& t, const Points& x, const Points& cot) const = 0;

  /// Convenience view for simulators: every particle shares the time t.
  DriftField as_field() const;

 protected:
  Vector w_;
  void check_inputs(const Vector& t, const Points& x) const;
};

/// u_i(t,x) = sum_f W(i,f) phi_f(t,x). Parameters are W flattened row-major.
class FeatureDictionary final : public DriftModel {
 public:
  FeatureDictionary(FeatureSet fs, int d);

  int dim() const override { return d_; }
  int num_params() const override { return d_ * F_; }
  bool linear_in_params() const override { return true; }
  std::unique_ptr<DriftModel> clone() const override { return std::make_unique<FeatureDictionary>(*this); }
  ModelSpec spec() const override;

  FeatureSet feature_set() const { return fs_; }
  int num_features() const { return F_; }
  /// Feature matrix, one row per point.
  Eigen::MatrixXd features(const Vector& t, const Points& x) const;
  /// W as a d x F matrix.
  Eigen::MatrixXd weights() const;

  Points evaluate(const Vector& t, const Points& x) const override;
  Vector backprop(const Vector& t, const Points& x, const Points& cot) const override;

 private:
  FeatureSet fs_;
  int d_;
  int F_;
};

/// Fully connected tanh network (d+1) -> hidden... -> d with identity output.
/// Parameter layout per layer: weight (out x in, row-major) followed by bias.
class MlpDrift final : public DriftModel {
 public:
  MlpDrift(int d, std::vector<int> hidden);

  int dim() const override { return d_; }
  int num_params() const override { return static_cast<int>(w_.size()); }
  bool linear_in_params() const override { return false; }
  std::unique_ptr<DriftModel> clone() const override { return std::make_unique<MlpDrift>(*this); }
  ModelSpec spec() const override;

  Points evaluate(const Vector& t, const Points& x) const override;
  Vector backprop(const Vector& t, const Points& x, const Points& cot) const override;

  const std::vector<int>& layer_sizes() const { return sizes_; }

 private:
  int d_;
  std::vector<int> sizes_;
  std::vector<Eigen::Index> offsets_;  ///< start of each layer's weight block

  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const Mat> weight(std::size_t layer) const;
  Eigen::Map<const Eigen::VectorXd> bias(std::size_t layer) const;
};

/// Zero-parameter model for reference rows.
std::unique_ptr<DriftModel> make_model(const ModelSpec& spec);
/// Fresh model with randomly drawn parameters: dictionaries uniform(-0.5, 0.5),
/// MLP weights normal / sqrt(fan_in) with zero biases.
std::unique_ptr<DriftModel> init_model(const ModelSpec& spec, Rng& rng);
void randomize(DriftModel& model, Rng& rng);

}  // namespace alltimeot
