#include "cnode/field.hpp"

namespace cnode::model {

using diffcore::Tensor;

BalanceMode parse_balance(const std::string& name) {
  if (name == "u_only") return BalanceMode::kUOnly;
  if (name == "full") return BalanceMode::kFull;
  throw ConfigError("unknown balance mode '" + name + "'");
}

std::string balance_name(BalanceMode m) {
  return m == BalanceMode::kUOnly ? "u_only" : "full";
}

void CharacteristicField::validate() const {
  if (k <= 0 || n <= 0 || cond_dim < 0) {
    throw ContractError("CharacteristicField: dimensions must be positive");
  }
  jac_net.validate();
  if (jac_net.in_dim() != jac_in_dim()) {
    throw DimensionError("CharacteristicField jac_net input", jac_in_dim(),
                         jac_net.in_dim());
  }
  if (jac_net.out_dim() != n * k) {
    throw DimensionError("CharacteristicField jac_net output", n * k,
                         jac_net.out_dim());
  }
  if (!unit_direction) {
    direction_net.validate();
    if (direction_net.in_dim() != direction_in_dim()) {
      throw DimensionError("CharacteristicField direction_net input",
                           direction_in_dim(), direction_net.in_dim());
    }
    if (direction_net.out_dim() != k) {
      throw DimensionError("CharacteristicField direction_net output", k,
                           direction_net.out_dim());
    }
  }
}

CharacteristicField make_field(Index k, Index n, Index cond_dim,
                               BalanceMode balance,
                               const std::vector<Index>& direction_hidden,
                               const std::vector<Index>& jac_hidden,
                               diffcore::Activation act, bool unit_direction) {
  CharacteristicField f;
  f.k = k;
  f.n = n;
  f.cond_dim = cond_dim;
  f.balance = balance;
  f.unit_direction = unit_direction;
  if (!unit_direction) {
    f.direction_net.layer_widths.push_back(f.direction_in_dim());
    for (Index w : direction_hidden) f.direction_net.layer_widths.push_back(w);
    f.direction_net.layer_widths.push_back(k);
    f.direction_net.activation = act;
  }
  f.jac_net.layer_widths.push_back(f.jac_in_dim());
  for (Index w : jac_hidden) f.jac_net.layer_widths.push_back(w);
  f.jac_net.layer_widths.push_back(n * k);
  f.jac_net.activation = act;
  f.validate();
  return f;
}

FieldRates field_rates(const CharacteristicField& field, const Vec& theta2,
                       const Vec& x, const Vec& u, const Vec& cond) {
  field.validate();
  if (x.size() != field.k) throw DimensionError("field_rates x", field.k, x.size());
  if (u.size() != field.n) throw DimensionError("field_rates u", field.n, u.size());
  if (cond.size() != field.cond_dim) {
    throw DimensionError("field_rates cond", field.cond_dim, cond.size());
  }
  if (theta2.size() != field.param_count()) {
    throw DimensionError("field_rates theta2", field.param_count(), theta2.size());
  }

  FieldRates r;
  if (field.unit_direction) {
    r.dx = Vec::Ones(field.k);
  } else {
    Vec in(field.direction_in_dim());
    Index off = 0;
    if (field.direction_reads_x) {
      in.head(field.k) = x;
      off = field.k;
    }
    in.segment(off, field.n) = u;
    if (field.cond_dim > 0) in.tail(field.cond_dim) = cond;
    r.dx = mlp_forward(field.direction_net, theta2.head(field.direction_param_count()), in);
  }
  Vec jin(field.jac_in_dim());
  if (field.balance == BalanceMode::kUOnly) {
    jin = u;
  } else {
    jin << x, u;
  }
  const Vec jflat =
      mlp_forward(field.jac_net, theta2.tail(field.jac_net.param_count()), jin);
  r.du = Eigen::Map<const RowMat>(jflat.data(), field.n, field.k) * r.dx;
  return r;
}

std::pair<int, int> record_field(Tape& tape, const CharacteristicField& field,
                                 int theta2, int x, int u, int cond) {
  if ((cond >= 0) != (field.cond_dim > 0)) {
    throw ContractError("record_field: conditioning input mismatch");
  }
  int dx;
  if (field.unit_direction) {
    dx = tape.constant(Tensor::vector(Vec::Ones(field.k)));
  } else {
    int in = field.direction_reads_x ? tape.concat(x, u) : u;
    if (cond >= 0) in = tape.concat(in, cond);
    const int dtheta = tape.slice(theta2, 0, field.direction_param_count());
    dx = mlp_forward(tape, field.direction_net, dtheta, in);
  }
  const int jin = field.balance == BalanceMode::kUOnly ? u : tape.concat(x, u);
  const int jtheta = tape.slice(theta2, field.direction_param_count(),
                                field.jac_net.param_count());
  const int jflat = mlp_forward(tape, field.jac_net, jtheta, jin);
  const int jmat = tape.reshape(jflat, {field.n, field.k});
  const int du = tape.matvec(jmat, dx);
  return {dx, du};
}

FieldDynamics::FieldDynamics(CharacteristicField field, Vec theta2, Vec cond)
    : field_(std::move(field)), theta2_size_(theta2.size()) {
  field_.validate();
  if (theta2.size() != field_.param_count()) {
    throw DimensionError("FieldDynamics theta2", field_.param_count(),
                         theta2.size());
  }
  if (cond.size() != field_.cond_dim) {
    throw DimensionError("FieldDynamics cond", field_.cond_dim, cond.size());
  }
  packed_.resize(theta2.size() + cond.size());
  packed_ << theta2, cond;
}

int FieldDynamics::record(Tape& tape, double /*s*/, int y, int theta) const {
  const int x = tape.slice(y, 0, field_.k);
  const int u = tape.slice(y, field_.k, field_.n);
  const int th2 = tape.slice(theta, 0, theta2_size_);
  const int cond = field_.cond_dim > 0
                       ? tape.slice(theta, theta2_size_, field_.cond_dim)
                       : -1;
  const auto [dx, du] = record_field(tape, field_, th2, x, u, cond);
  return tape.concat(dx, du);
}

CharacteristicField make_crossing_field() {
  CharacteristicField f;
  f.k = 2;
  f.n = 1;
  f.cond_dim = 1;
  f.balance = BalanceMode::kUOnly;
  f.direction_net.layer_widths = {4, 2};
  f.jac_net.layer_widths = {1, 2};
  f.validate();
  return f;
}

Vec crossing_theta2() {
  // direction([x0, x1, u, c]) = (1, c); jac(u) = (1, -2).
  Vec theta = Vec::Zero(14);
  theta[7] = 1.0;   // direction weight row 1, column 3 (the conditioning input)
  theta[8] = 1.0;   // direction bias 0
  theta[12] = 1.0;  // jac bias 0
  theta[13] = -2.0; // jac bias 1
  return theta;
}

CharacteristicField make_linear_map_field(Index n) {
  CharacteristicField f;
  f.k = 2 * n;
  f.n = n;
  f.cond_dim = n;
  f.balance = BalanceMode::kUOnly;
  f.direction_net.layer_widths = {f.direction_in_dim(), f.k};
  f.jac_net.layer_widths = {n, n * f.k};
  f.validate();
  return f;
}

Vec linear_map_theta2(const Mat& a) {
  if (a.rows() != a.cols()) throw ContractError("linear_map_theta2: square matrix required");
  const Index n = a.rows();
  const CharacteristicField f = make_linear_map_field(n);

  // direction([x(2n), u(n), c(n)]) = (c; c): two stacked selectors of the
  // conditioning block, which carries u0.
  const Index din = f.direction_in_dim();
  Mat wd = Mat::Zero(f.k, din);
  for (Index i = 0; i < n; ++i) {
    wd(i, 3 * n + i) = 1.0;
    wd(n + i, 3 * n + i) = 1.0;
  }
  // jac(u) = [A | -I] flattened row-major, independent of u.
  Mat jac(n, 2 * n);
  jac << a, -Mat::Identity(n, n);

  Vec theta = Vec::Zero(f.param_count());
  Index off = 0;
  RowMat wdr = wd;
  theta.segment(off, wdr.size()) = Eigen::Map<const Vec>(wdr.data(), wdr.size());
  off += wdr.size() + f.k;  // zero direction biases
  off += f.jac_net.layer_widths[0] * f.jac_net.layer_widths[1];  // zero jac weights
  RowMat jr = jac;
  theta.segment(off, jr.size()) = Eigen::Map<const Vec>(jr.data(), jr.size());
  return theta;
}

}  // namespace cnode::model
