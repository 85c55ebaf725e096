#include "emc/channel.hpp"

#include <stdexcept>
#include <string>

namespace emc::channel {

using ad::Tape;
using ad::Tensor;
using ad::Var;

int argmax_lowest(const double* row, int n) {
  int best = 0;
  for (int j = 1; j < n; ++j) {
    if (row[j] > row[best]) best = j;
  }
  return best;
}

// forward: one-hot rows at the soft argmax; backward: gradient flows to the
// soft rows unchanged (hard + soft - detach(soft))
static Var straight_through(Tape& tape, Var soft) {
  const Tensor& S = tape.value(soft);
  Tensor hard(S.shape);
  const int m = S.rows(), n = S.cols();
  for (int i = 0; i < m; ++i) {
    hard.at(i, argmax_lowest(&S.data[static_cast<std::size_t>(i) * n], n)) = 1.0;
  }
  const int si = soft.id;
  const int oi = static_cast<int>(tape.size());
  return tape.make_node(std::move(hard), [si, oi](Tape& t) {
    const Tensor& G = t.grad(Var{oi});
    Tensor& gS = t.grad(Var{si});
    for (std::size_t k = 0; k < G.data.size(); ++k) gS.data[k] += G.data[k];
  });
}

ad::Var step(Tape& tape, Var logits_row, Mode mode, double temperature, Rng& rng,
             int& symbol_out) {
  const Tensor& L = tape.value(logits_row);
  if (L.rows() != 1) {
    throw std::runtime_error("channel: expected a single logits row, got " + ad::shape_str(L.shape));
  }
  const int vocab = L.cols();
  if (mode == Mode::eval_argmax) {
    symbol_out = argmax_lowest(L.data.data(), vocab);
    Tensor onehot({1, vocab});
    onehot.data[static_cast<std::size_t>(symbol_out)] = 1.0;
    return tape.input(std::move(onehot));
  }
  if (temperature <= 0.0) {
    throw std::runtime_error("channel: temperature must be positive, got " +
                             std::to_string(temperature));
  }
  Tensor noise({1, vocab});
  for (double& g : noise.data) g = rng.gumbel();
  Var perturbed = tape.add_const(logits_row, noise);
  Var soft = tape.softmax_rows(tape.affine(perturbed, 1.0 / temperature, 0.0));
  const Tensor& S = tape.value(soft);
  symbol_out = argmax_lowest(S.data.data(), vocab);
  if (mode == Mode::train_soft) return soft;
  return straight_through(tape, soft);
}

Message gumbel_softmax_st(Tape& tape, Var logits, double temperature, Rng& rng) {
  const Tensor& L = tape.value(logits);
  Message msg;
  for (int i = 0; i < L.rows(); ++i) {
    Var row = tape.gather_rows(logits, {i});
    int sym = 0;
    msg.relaxed_rows.push_back(step(tape, row, Mode::train_st, temperature, rng, sym));
    msg.symbols.push_back(sym);
  }
  return msg;
}

Message argmax_decode(const Tensor& logits) {
  Message msg;
  const int m = logits.rows(), n = logits.cols();
  for (int i = 0; i < m; ++i) {
    msg.symbols.push_back(argmax_lowest(&logits.data[static_cast<std::size_t>(i) * n], n));
  }
  return msg;
}

Message distort_message(const Message& msg, int position, int replacement, int vocab_size) {
  if (position < 0 || position >= static_cast<int>(msg.symbols.size())) {
    throw std::runtime_error("distort: position " + std::to_string(position) +
                             " outside message of length " + std::to_string(msg.symbols.size()));
  }
  if (replacement < 0 || replacement >= vocab_size) {
    throw std::runtime_error("distort: replacement symbol " + std::to_string(replacement) +
                             " outside vocabulary of size " + std::to_string(vocab_size));
  }
  Message out;
  out.symbols = msg.symbols;
  out.symbols[static_cast<std::size_t>(position)] = replacement;
  return out;
}

}  // namespace emc::channel
