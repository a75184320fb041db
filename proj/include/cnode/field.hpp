#pragma once

#include <utility>

#include "cnode/adjoint.hpp"
#include "cnode/mlp.hpp"

namespace cnode::model {

using diffcore::MlpSpec;
using diffcore::Tape;

// What the Jacobian net is allowed to see. kUOnly feeds it u alone, so its
// output cannot depend on where along x the state sits; equality of mixed
// partials then holds by construction instead of by penalty.
enum class BalanceMode { kUOnly, kFull };

BalanceMode parse_balance(const std::string& name);
std::string balance_name(BalanceMode m);

// Learned field driving the latent u along characteristic curves:
//   dx/ds = direction(x, u [, cond])          k values
//   du/ds = jac(u) or jac(x, u), times dx/ds  n values, jac is n-by-k
// With unit_direction the curve parameter is time itself (dx/ds = 1), which
// collapses the model to an ordinary neural ODE du/ds = jac(u).
// direction_reads_x = false drops x from the direction input; combined with
// kUOnly this makes du/ds a function of u alone, which flow models need so
// that integrating backward from a data point is well posed.
struct CharacteristicField {
  Index k = 1;
  Index n = 1;
  Index cond_dim = 0;
  BalanceMode balance = BalanceMode::kUOnly;
  bool unit_direction = false;
  bool direction_reads_x = true;
  MlpSpec direction_net;
  MlpSpec jac_net;

  Index direction_param_count() const {
    return unit_direction ? 0 : direction_net.param_count();
  }
  Index param_count() const {
    return direction_param_count() + jac_net.param_count();
  }
  Index direction_in_dim() const {
    return (direction_reads_x ? k : 0) + n + cond_dim;
  }
  Index jac_in_dim() const { return balance == BalanceMode::kUOnly ? n : k + n; }

  void validate() const;
};

// Convenience builder wiring up net widths from the field dimensions.
CharacteristicField make_field(Index k, Index n, Index cond_dim,
                               BalanceMode balance,
                               const std::vector<Index>& direction_hidden,
                               const std::vector<Index>& jac_hidden,
                               diffcore::Activation act = diffcore::Activation::kTanh,
                               bool unit_direction = false);

struct FieldRates {
  Vec dx;
  Vec du;
};

// Plain evaluation of both rates. cond must be empty when cond_dim == 0.
FieldRates field_rates(const CharacteristicField& field, const Vec& theta2,
                       const Vec& x, const Vec& u, const Vec& cond);

// Taped twin; returns (dx node, du node). cond < 0 means unconditioned.
std::pair<int, int> record_field(Tape& tape, const CharacteristicField& field,
                                 int theta2, int x, int u, int cond);

// The field as solver dynamics over the stacked state [x; u]. The parameter
// vector seen by the solver is [theta2; cond], so adjoint and discrete
// backprop deliver the conditioning gradient alongside the field gradient.
class FieldDynamics : public solver::TapedDynamics {
 public:
  FieldDynamics(CharacteristicField field, Vec theta2, Vec cond);

  Index state_dim() const override { return field_.k + field_.n; }
  const Vec& params() const override { return packed_; }
  int record(Tape& tape, double s, int y, int theta) const override;

  Index theta2_size() const { return theta2_size_; }
  Index cond_size() const { return packed_.size() - theta2_size_; }

 private:
  CharacteristicField field_;
  Vec packed_;
  Index theta2_size_;
};

// Hand-set fields with known closed-form behavior. Both produce rates that
// are constant along s, so any solver maps them exactly.

// k=2, n=1, conditioned: du/ds = 1 - 2 u0, hence u(1) = 1 - u0. The two
// characteristics launched from u0 = 0 and u0 = 1 cross; no scalar ODE in u
// alone can swap endpoint order like this.
CharacteristicField make_crossing_field();
Vec crossing_theta2();

// k = 2n, conditioned: du/ds = A u0 - u0, hence u(1) = A u0 and integrating
// the same field backward from u(1) recovers u0.
CharacteristicField make_linear_map_field(Index n);
Vec linear_map_theta2(const Mat& a);

}  // namespace cnode::model
