#ifndef NLME_STRUCTURAL_HPP
#define NLME_STRUCTURAL_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "nlme/errors.hpp"

namespace nlme {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Open interval (lower, upper).
struct Interval {
  double lower = -std::numeric_limits<double>::infinity();
  double upper = std::numeric_limits<double>::infinity();

  bool contains(double x) const { return x > lower && x < upper; }
};

enum class DiffMethod { analytic, central_difference };

inline const char* to_string(DiffMethod m) {
  return m == DiffMethod::analytic ? "analytic" : "central-difference";
}

/// Predictions f(t_j, psi) for every observation time.
using PredictFn =
    std::function<Vector(const Vector& times, const Vector& psi, double dose)>;
/// Jacobian d f(t_j, psi) / d psi_l, an n x p matrix.
using JacobianFn =
    std::function<Matrix(const Vector& times, const Vector& psi, double dose)>;

/// A structural model f(t, psi). Immutable once built; safe to share.
struct StructuralModel {
  std::string name;
  std::vector<std::string> param_names;
  std::vector<Interval> domain;
  PredictFn predict;
  /// Optional. When empty, `jacobian` falls back to central differences.
  JacobianFn analytic_jacobian;

  Index dim() const { return static_cast<Index>(param_names.size()); }

  bool in_domain(const Vector& psi) const {
    if (psi.size() != dim()) return false;
    for (Index l = 0; l < psi.size(); ++l) {
      if (!domain[static_cast<std::size_t>(l)].contains(psi(l))) return false;
    }
    return true;
  }
};

struct JacobianResult {
  Vector values;  // f_i(psi)
  Matrix jac;     // n_i x p
  DiffMethod method = DiffMethod::analytic;
};

// ---------------------------------------------------------------------------
// One-compartment model, first-order oral absorption, linear elimination.

namespace detail {

inline void check_pk_args(double ka, double V, double k, double dose) {
  auto ok = [](double x) { return std::isfinite(x) && x > 0.0; };
  if (!ok(ka)) throw DomainError("pk1_oral: ka must be positive and finite");
  if (!ok(V)) throw DomainError("pk1_oral: V must be positive and finite");
  if (!ok(k)) throw DomainError("pk1_oral: k must be positive and finite");
  if (!ok(dose)) throw DomainError("pk1_oral: dose must be positive and finite");
}

inline double pk_degeneracy_threshold(double ka, double k) {
  return 1e-8 * std::max(ka, k);
}

}  // namespace detail

/// Concentration c(t) = D ka / (V (ka - k)) (exp(-k t) - exp(-ka t)).
///
/// The exponential difference is evaluated as exp(-lo t) * (-expm1(-|ka-k| t))
/// with lo = min(ka, k), which is free of cancellation. When
/// |ka - k| <= 1e-8 max(ka, k) the limiting form D kappa t exp(-kappa t) / V
/// with kappa = (ka + k) / 2 is used instead.
inline Vector pk1_oral(const Vector& times, double ka, double V, double k,
                       double dose) {
  detail::check_pk_args(ka, V, k, dose);
  Vector c(times.size());
  const double gap = std::abs(ka - k);
  if (gap <= detail::pk_degeneracy_threshold(ka, k)) {
    const double kappa = 0.5 * (ka + k);
    for (Index j = 0; j < times.size(); ++j) {
      const double t = times(j);
      c(j) = dose * kappa * t * std::exp(-kappa * t) / V;
    }
    return c;
  }
  const double lo = std::min(ka, k);
  const double scale = dose * ka / (V * gap);
  for (Index j = 0; j < times.size(); ++j) {
    const double t = times(j);
    c(j) = scale * std::exp(-lo * t) * -std::expm1(-gap * t);
  }
  return c;
}

/// Analytic Jacobian of pk1_oral with respect to (ka, V, k).
inline Matrix pk1_oral_jacobian(const Vector& times, double ka, double V,
                                double k, double dose) {
  const Vector c = pk1_oral(times, ka, V, k, dose);
  Matrix jac(times.size(), 3);
  const double diff = ka - k;
  if (std::abs(diff) <= detail::pk_degeneracy_threshold(ka, k)) {
    const double kappa = 0.5 * (ka + k);
    for (Index j = 0; j < times.size(); ++j) {
      const double t = times(j);
      const double e = std::exp(-kappa * t);
      jac(j, 0) = dose / V * e * (t - 0.5 * kappa * t * t);
      jac(j, 1) = -c(j) / V;
      jac(j, 2) = -dose * kappa * t * t * e / (2.0 * V);
    }
    return jac;
  }
  const double amp = dose * ka / (V * diff);
  for (Index j = 0; j < times.size(); ++j) {
    const double t = times(j);
    jac(j, 0) = -k * c(j) / (ka * diff) + amp * t * std::exp(-ka * t);
    jac(j, 1) = -c(j) / V;
    jac(j, 2) = c(j) / diff - amp * t * std::exp(-k * t);
  }
  return jac;
}

inline StructuralModel pk1_oral_model() {
  StructuralModel m;
  m.name = "pk1_oral";
  m.param_names = {"ka", "V", "k"};
  m.domain.assign(3, Interval{0.0, std::numeric_limits<double>::infinity()});
  m.predict = [](const Vector& times, const Vector& psi, double dose) {
    return pk1_oral(times, psi(0), psi(1), psi(2), dose);
  };
  m.analytic_jacobian = [](const Vector& times, const Vector& psi, double dose) {
    return pk1_oral_jacobian(times, psi(0), psi(1), psi(2), dose);
  };
  return m;
}

/// f(t, psi) = sum_l psi_l t^l. p = 1 gives f = psi, p = 2 gives psi_1 + psi_2 t.
inline StructuralModel polynomial_model(Index p) {
  StructuralModel m;
  m.name = p == 1 ? "constant" : (p == 2 ? "linear" : "polynomial" + std::to_string(p));
  for (Index l = 0; l < p; ++l) m.param_names.push_back("b" + std::to_string(l));
  m.domain.assign(static_cast<std::size_t>(p), Interval{});
  auto design = [p](const Vector& times) {
    Matrix x(times.size(), p);
    for (Index j = 0; j < times.size(); ++j) {
      double power = 1.0;
      for (Index l = 0; l < p; ++l) {
        x(j, l) = power;
        power *= times(j);
      }
    }
    return x;
  };
  m.predict = [design](const Vector& times, const Vector& psi, double) -> Vector {
    return design(times) * psi;
  };
  m.analytic_jacobian = [design](const Vector& times, const Vector&, double) {
    return design(times);
  };
  return m;
}

/// Jacobian of f_i at psi. Uses the model's analytic derivative when present,
/// otherwise central differences with step cbrt(eps) * max(1, |psi_l|).
inline JacobianResult jacobian(const StructuralModel& model, const Vector& times,
                               const Vector& psi, double dose) {
  if (!model.in_domain(psi)) {
    throw DomainError("jacobian: psi outside the domain of model " + model.name);
  }
  JacobianResult out;
  out.values = model.predict(times, psi, dose);
  for (Index j = 0; j < out.values.size(); ++j) {
    if (!std::isfinite(out.values(j))) {
      throw EvaluationError("non-finite prediction at time index " + std::to_string(j), j);
    }
  }

  if (model.analytic_jacobian) {
    out.jac = model.analytic_jacobian(times, psi, dose);
    out.method = DiffMethod::analytic;
  } else {
    const double base = std::cbrt(std::numeric_limits<double>::epsilon());
    out.jac.resize(times.size(), psi.size());
    out.method = DiffMethod::central_difference;
    for (Index l = 0; l < psi.size(); ++l) {
      double h = base * std::max(1.0, std::abs(psi(l)));
      Vector up = psi, down = psi;
      const Interval& dom = model.domain[static_cast<std::size_t>(l)];
      for (int shrink = 0; shrink < 60; ++shrink) {
        up(l) = psi(l) + h;
        down(l) = psi(l) - h;
        if (dom.contains(up(l)) && dom.contains(down(l))) break;
        h *= 0.5;
      }
      const double width = up(l) - down(l);
      out.jac.col(l) = (model.predict(times, up, dose) - model.predict(times, down, dose)) / width;
    }
  }

  for (Index l = 0; l < out.jac.cols(); ++l) {
    for (Index j = 0; j < out.jac.rows(); ++j) {
      if (!std::isfinite(out.jac(j, l))) {
        throw DerivativeError("non-finite derivative at (" + std::to_string(j) + ", " +
                                  std::to_string(l) + ")",
                              j, l);
      }
    }
  }
  return out;
}

/// Named structural models selectable from configuration.
class ModelRegistry {
 public:
  void add(StructuralModel model) {
    std::string key = model.name;
    models_.insert_or_assign(std::move(key), std::move(model));
  }

  const StructuralModel& get(const std::string& name) const {
    auto it = models_.find(name);
    if (it == models_.end()) throw InputError("unknown structural model '" + name + "'");
    return it->second;
  }

  bool contains(const std::string& name) const { return models_.count(name) != 0; }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [name, _] : models_) out.push_back(name);
    return out;
  }

  /// pk1_oral, constant (f = psi) and linear (f = b0 + b1 t).
  static ModelRegistry builtin() {
    ModelRegistry r;
    r.add(pk1_oral_model());
    r.add(polynomial_model(1));
    r.add(polynomial_model(2));
    return r;
  }

 private:
  std::map<std::string, StructuralModel> models_;
};

}  // namespace nlme

#endif  // NLME_STRUCTURAL_HPP
