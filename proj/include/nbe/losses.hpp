#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace nbe {

enum class LossKind { Tanh, Power, Cauchy, Quadratic, Absolute };
enum class Norm { Euclidean, L1 };

struct LossSpec {
  LossKind kind = LossKind::Tanh;
  double kappa = 0.1;  // tanh
  double beta = 1.0;   // power
  double delta = 0.0;  // power
  double rho = 1.0;    // cauchy
  double alpha = 2.0;  // cauchy
  Norm norm = Norm::Euclidean;

  static LossSpec tanh(double kappa);
  static LossSpec power(double beta, double delta);
  static LossSpec cauchy(double rho, double alpha);
  static LossSpec quadratic();
  static LossSpec absolute();

  /// Throws Config naming the offending field.
  void validate() const;
  bool operator==(const LossSpec&) const = default;
};

const char* loss_name(LossKind kind);
LossKind parse_loss_kind(const std::string& name);

/// ||est - truth|| under the spec's norm.
double loss_distance(const LossSpec& spec, const double* truth, const double* est,
                     std::size_t p);
/// The loss as a function of distance alone.
double loss_of_distance(const LossSpec& spec, double d);
/// Derivative of loss_of_distance with respect to d (right derivative at 0).
double loss_slope(const LossSpec& spec, double d);

double loss(const LossSpec& spec, const std::vector<double>& truth,
            const std::vector<double>& est);
double loss(const LossSpec& spec, const double* truth, const double* est, std::size_t p);

/// Gradient with respect to `est`. At est == truth the zero vector is
/// returned (the loss is minimal there) unless the slope diverges, which is
/// reported as a Numerical error.
std::vector<double> loss_gradient(const LossSpec& spec, const std::vector<double>& truth,
                                  const std::vector<double>& est);
void loss_gradient(const LossSpec& spec, const double* truth, const double* est,
                   std::size_t p, double* grad);

}  // namespace nbe
