#pragma once

#include <vector>

#include "cnode/rng.hpp"
#include "cnode/tape.hpp"

namespace cnode::diffcore {

enum class Activation { kTanh, kRelu, kIdentity };
enum class OutputActivation { kIdentity, kSoftmax };

// Fully connected net. layer_widths includes input and output, so a net with
// no hidden layer has two entries. Parameters are stored flat, per layer:
// row-major weight matrix, then bias.
struct MlpSpec {
  std::vector<Index> layer_widths;
  Activation activation = Activation::kTanh;
  OutputActivation output = OutputActivation::kIdentity;

  Index in_dim() const { return layer_widths.front(); }
  Index out_dim() const { return layer_widths.back(); }
  Index n_layers() const { return static_cast<Index>(layer_widths.size()) - 1; }

  Index param_count() const {
    Index n = 0;
    for (std::size_t l = 0; l + 1 < layer_widths.size(); ++l) {
      n += layer_widths[l] * layer_widths[l + 1] + layer_widths[l + 1];
    }
    return n;
  }

  void validate() const {
    if (layer_widths.size() < 2) {
      throw ContractError("MlpSpec: need at least input and output widths");
    }
    for (Index w : layer_widths) {
      if (w <= 0) throw ContractError("MlpSpec: widths must be positive");
    }
  }
};

// Glorot-uniform weights, zero biases. Draws are consumed in parameter
// storage order so a seed pins the full vector.
Vec mlp_init(const MlpSpec& spec, Rng& rng);

Vec mlp_forward(const MlpSpec& spec, const Vec& params, const Vec& input);

// Same computation recorded on a tape, op for op, so values are bit-identical
// to the plain overload.
int mlp_forward(Tape& tape, const MlpSpec& spec, int params, int input);

// Forward-mode Jacobian d output / d input, one column per input entry.
Mat mlp_jacobian(const MlpSpec& spec, const Vec& params, const Vec& input);

// Mean over entries of the squared error against a fixed target.
int mse_loss(Tape& tape, int pred, const Vec& target);

// Negative log-likelihood of `label` under softmax of the logits.
int cross_entropy_loss(Tape& tape, int logits, Index label);

}  // namespace cnode::diffcore
