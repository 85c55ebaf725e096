#pragma once

#include <optional>
#include <vector>

#include "emc/autodiff.hpp"
#include "emc/rng.hpp"

namespace emc::channel {

// A fixed-length message over a vocabulary of size V. During training the
// relaxed form (one tape row per symbol, one-hot in value, soft in gradient)
// rides along so gradients can cross the discretization.
struct Message {
  std::vector<int> symbols;
  std::vector<ad::Var> relaxed_rows;  // empty outside training

  bool has_relaxed() const { return !relaxed_rows.empty(); }
};

// How the speaker's per-step logits become the symbol and the row fed back
// into the decoder.
enum class Mode {
  train_st,    // straight-through Gumbel-Softmax: hard forward, soft gradient
  train_soft,  // relaxed sample only; keeps the whole loss differentiable
  eval_argmax  // deterministic argmax, lowest index wins ties
};

// One decoding step: row in, row out. Returned row is [1 x V]; symbol is its
// argmax. The straight-through rule is installed here (not in the autodiff
// core) via Tape::make_node.
ad::Var step(ad::Tape& tape, ad::Var logits_row, Mode mode, double temperature, Rng& rng,
             int& symbol_out);

// Whole-logits variants matching the per-step semantics row by row.
Message gumbel_softmax_st(ad::Tape& tape, ad::Var logits, double temperature, Rng& rng);
Message argmax_decode(const ad::Tensor& logits);

int argmax_lowest(const double* row, int n);

Message distort_message(const Message& msg, int position, int replacement, int vocab_size);

}  // namespace emc::channel
