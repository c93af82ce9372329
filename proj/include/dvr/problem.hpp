#pragma once

#include "dvr/common.hpp"

#include <Eigen/Sparse>
#include <json.hpp>

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace dvr {

using SpMat = Eigen::SparseMatrix<double, Eigen::RowMajor>;

enum class LossKind { logistic, squared };

std::string to_string(LossKind kind);
LossKind parse_loss_kind(const std::string& name);

// Scalar GLM loss l(u, y) of the pre-activation u = x^T theta.
struct LossFamily {
  LossKind kind = LossKind::logistic;

  double value(double u, double y) const;
  double deriv(double u, double y) const;
  double second(double u, double y) const;
  double curvature_bound() const { return kind == LossKind::logistic ? 0.25 : 1.0; }
  bool admissible_label(double y) const;
};

struct Dataset {
  SpMat X;  // N x d
  Vec y;
  double weight = 0.0;  // 0 means 1/m after partitioning

  Eigen::Index size() const { return X.rows(); }
  Eigen::Index dim() const { return X.cols(); }
};

// libsvm text: "label idx:val idx:val ..." with 1-indexed features.
// When `loss` is given, labels are checked against it.
Dataset parse_libsvm(std::istream& in, std::optional<LossKind> loss = std::nullopt);
Dataset load_libsvm(const std::string& path, std::optional<LossKind> loss = std::nullopt);

// Gaussian features with per-coordinate standard deviation decay^k, each row
// rescaled to norm `scale`; labels from a planted Gaussian vector (sign for
// logistic, exact linear response for squared).
Dataset synth_dataset(Eigen::Index n_samples, Eigen::Index dim, LossKind kind,
                      std::uint64_t seed, double scale = 1.0, double decay = 1.0);

enum class KappaBMode { bound, estimate, manual };

struct ProblemOptions {
  KappaBMode kappa_b_mode = KappaBMode::estimate;
  double kappa_b_value = 0.0;
  bool shuffle = false;
  std::uint64_t shuffle_seed = 0;
};

class Problem {
 public:
  int n = 0;
  int m = 0;
  int d = 0;
  LossFamily loss;
  double weight = 0.0;
  SpMat X;  // row i*m + j holds x_ij
  Vec y;
  Vec sigma;
  Mat L;  // n x m
  Vec row_sq_norm;
  double kappa_s = 0.0;
  double kappa_b = 0.0;
  Vec D_M;
  bool truncated = false;
  Eigen::Index dropped = 0;

  Eigen::Index row(int i, int j) const { return static_cast<Eigen::Index>(i) * m + j; }
  double preactivation(int i, int j, const Eigen::Ref<const Vec>& theta) const;
  // w * l'(x_ij^T theta); the sample gradient is this scalar times x_ij.
  double grad_coef(int i, int j, double u) const;
  double sample_value(int i, int j, const Eigen::Ref<const Vec>& theta) const;
  Vec stoch_gradient(int i, int j, const Eigen::Ref<const Vec>& theta) const;
  Vec full_gradient(int i, const Eigen::Ref<const Vec>& theta) const;
  double local_value(int i, const Eigen::Ref<const Vec>& theta) const;
  double objective(const Eigen::Ref<const Vec>& theta) const;
  Vec gradient(const Eigen::Ref<const Vec>& theta) const;
  // Row-wise local gradients sigma_i theta_i + sum_j grad f_ij(theta_i).
  Mat local_gradients(const Mat& theta) const;
  // theta += c * x_ij
  void add_feature(int i, int j, double c, Eigen::Ref<Vec> theta) const;

  // Largest eigenvalue of sum_j c_j x_ij x_ij^T by power iteration.
  double power_lambda_max(int i, const Vec& coefs, bool* converged = nullptr) const;

  double sigma_min() const { return sigma.minCoeff(); }
  double sigma_max() const { return sigma.maxCoeff(); }
  double L_max() const { return L.maxCoeff(); }

  nlohmann::json summary() const;
};

Problem build_problem(const Dataset& data, int n, const Vec& sigma, LossFamily loss,
                      const ProblemOptions& options = {});
Problem build_problem(const Dataset& data, int n, double sigma, LossFamily loss,
                      const ProblemOptions& options = {});

}  // namespace dvr
