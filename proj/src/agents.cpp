#include "emc/agents.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace emc::agents {

using ad::Tape;
using ad::Tensor;
using ad::Var;

std::string to_string(Repr r) {
  switch (r) {
    case Repr::bow: return "bow";
    case Repr::seq: return "seq";
    case Repr::graph: return "graph";
  }
  return "?";
}

std::string to_string(GraphLayer l) { return l == GraphLayer::gcn ? "gcn" : "sage"; }

std::string to_string(SageAggregator a) {
  switch (a) {
    case SageAggregator::mean: return "mean";
    case SageAggregator::pool: return "pool";
    case SageAggregator::gcn: return "gcn";
  }
  return "?";
}

std::string to_string(Pooling p) {
  switch (p) {
    case Pooling::sum: return "sum";
    case Pooling::mean: return "mean";
    case Pooling::max: return "max";
  }
  return "?";
}

Repr repr_from_string(const std::string& s) {
  if (s == "bow") return Repr::bow;
  if (s == "seq") return Repr::seq;
  if (s == "graph") return Repr::graph;
  throw std::runtime_error("unknown representation '" + s + "' (want bow|seq|graph)");
}

GraphLayer graph_layer_from_string(const std::string& s) {
  if (s == "gcn") return GraphLayer::gcn;
  if (s == "sage") return GraphLayer::sage;
  throw std::runtime_error("unknown graph layer '" + s + "' (want gcn|sage)");
}

SageAggregator aggregator_from_string(const std::string& s) {
  if (s == "mean") return SageAggregator::mean;
  if (s == "pool") return SageAggregator::pool;
  if (s == "gcn") return SageAggregator::gcn;
  throw std::runtime_error("unknown aggregator '" + s + "' (want mean|pool|gcn)");
}

Pooling pooling_from_string(const std::string& s) {
  if (s == "sum") return Pooling::sum;
  if (s == "mean") return Pooling::mean;
  if (s == "max") return Pooling::max;
  throw std::runtime_error("unknown pooling '" + s + "' (want sum|mean|max)");
}

// --- parameters ---------------------------------------------------------------

ad::Tensor& ParamSet::add(const std::string& name, ad::Tensor t) {
  if (has(name)) throw std::runtime_error("param '" + name + "' registered twice");
  entries.emplace_back(name, std::move(t));
  return entries.back().second;
}

ad::Tensor& ParamSet::at(const std::string& name) {
  for (auto& [n, t] : entries) {
    if (n == name) return t;
  }
  throw std::runtime_error("unknown param '" + name + "'");
}

const ad::Tensor& ParamSet::at(const std::string& name) const {
  for (const auto& [n, t] : entries) {
    if (n == name) return t;
  }
  throw std::runtime_error("unknown param '" + name + "'");
}

bool ParamSet::has(const std::string& name) const {
  for (const auto& [n, t] : entries) {
    if (n == name) return true;
  }
  return false;
}

ad::Var Bound::at(const std::string& name) const {
  auto it = vars.find(name);
  if (it == vars.end()) throw std::runtime_error("param '" + name + "' not bound to this tape");
  return it->second;
}

Bound bind(const ParamSet& params, Tape& tape) {
  Bound b;
  for (const auto& [name, tensor] : params.entries) {
    b.vars.emplace(name, tape.param(tensor));
  }
  return b;
}

ad::Tensor glorot(int rows, int cols, Rng& rng) {
  Tensor t({rows, cols});
  const double limit = std::sqrt(6.0 / (rows + cols));
  for (double& v : t.data) v = rng.uniform(-limit, limit);
  return t;
}

static void add_gru(ParamSet& p, const std::string& prefix, int in, int hidden, Rng& rng) {
  for (const char* gate : {"z", "r", "c"}) {
    p.add(prefix + ".Wx" + gate, glorot(in, hidden, rng));
    p.add(prefix + ".Wh" + gate, glorot(hidden, hidden, rng));
    p.add(prefix + ".b" + gate, Tensor({1, hidden}));
  }
}

static void add_encoder(ParamSet& p, const std::string& prefix, const AgentConfig& cfg, Rng& rng) {
  const EncoderConfig& e = cfg.encoder;
  switch (e.kind) {
    case Repr::graph: {
      int in = cfg.node_feat_width;
      for (int l = 0; l < e.num_layers; ++l) {
        const std::string lp = prefix + ".l" + std::to_string(l);
        if (e.graph_layer == GraphLayer::sage && e.aggregator != SageAggregator::gcn) {
          if (e.aggregator == SageAggregator::pool) {
            p.add(lp + ".Wpool", glorot(in, in, rng));
            p.add(lp + ".bpool", Tensor({1, in}));
          }
          p.add(lp + ".W", glorot(2 * in, e.hidden, rng));
        } else {
          p.add(lp + ".W", glorot(in, e.hidden, rng));
        }
        in = e.hidden;
      }
      p.add(prefix + ".out.W", glorot(e.hidden, cfg.embed, rng));
      break;
    }
    case Repr::seq: {
      p.add(prefix + ".tok.E", glorot(cfg.token_count, cfg.msg_embed, rng));
      add_gru(p, prefix + ".rnn", cfg.msg_embed, e.hidden, rng);
      p.add(prefix + ".out.W", glorot(e.hidden, cfg.embed, rng));
      break;
    }
    case Repr::bow: {
      p.add(prefix + ".bow.W1", glorot(cfg.bow_width, e.hidden, rng));
      p.add(prefix + ".bow.b1", Tensor({1, e.hidden}));
      p.add(prefix + ".bow.W2", glorot(e.hidden, cfg.embed, rng));
      break;
    }
  }
}

ParamSet make_speaker_params(const AgentConfig& cfg, Rng& rng) {
  ParamSet p;
  add_encoder(p, "spk.enc", cfg, rng);
  p.add("spk.dec.init.W", glorot(cfg.embed, cfg.encoder.hidden, rng));
  p.add("spk.dec.init.b", Tensor({1, cfg.encoder.hidden}));
  p.add("spk.dec.start", glorot(1, cfg.msg_embed, rng));
  add_gru(p, "spk.dec.rnn", cfg.msg_embed, cfg.encoder.hidden, rng);
  p.add("spk.dec.vocab.W", glorot(cfg.encoder.hidden, cfg.vocab, rng));
  p.add("spk.dec.vocab.b", Tensor({1, cfg.vocab}));
  p.add("spk.dec.E", glorot(cfg.vocab, cfg.msg_embed, rng));
  return p;
}

ParamSet make_listener_params(const AgentConfig& cfg, Rng& rng) {
  ParamSet p;
  p.add("lst.msg.E", glorot(cfg.vocab, cfg.msg_embed, rng));
  add_gru(p, "lst.msg.rnn", cfg.msg_embed, cfg.encoder.hidden, rng);
  p.add("lst.msg.out.W", glorot(cfg.encoder.hidden, cfg.embed, rng));
  add_encoder(p, "lst.enc", cfg, rng);
  return p;
}

// --- inputs ---------------------------------------------------------------------

ReprInput make_repr_input(const world::Dataset& ds, const world::Item& it, Repr kind) {
  ReprInput in;
  in.kind = kind;
  switch (kind) {
    case Repr::graph: in.graph = world::item_graph(ds, it); break;
    case Repr::seq: in.tokens = world::item_sequence(ds, it); break;
    case Repr::bow: in.bow = world::item_bow(ds, it); break;
  }
  return in;
}

// --- graph layers -----------------------------------------------------------------

static std::vector<std::vector<int>> neighbor_lists(const world::GraphSample& g) {
  std::vector<std::vector<int>> nbr(static_cast<std::size_t>(g.num_nodes));
  for (const auto& [a, b] : g.edges) {
    nbr[static_cast<std::size_t>(a)].push_back(b);
    if (a != b) nbr[static_cast<std::size_t>(b)].push_back(a);
  }
  for (auto& row : nbr) std::sort(row.begin(), row.end());
  return nbr;
}

// dense [N x N] operator with M[i][j] = w_i for j in N_i
static Tensor neighbor_matrix(const world::GraphSample& g, bool include_self, bool normalize) {
  Tensor M({g.num_nodes, g.num_nodes});
  const auto nbr = neighbor_lists(g);
  for (int i = 0; i < g.num_nodes; ++i) {
    std::vector<int> js = nbr[static_cast<std::size_t>(i)];
    if (include_self && std::find(js.begin(), js.end(), i) == js.end()) js.push_back(i);
    if (js.empty()) continue;
    const double w = normalize ? 1.0 / static_cast<double>(js.size()) : 1.0;
    for (int j : js) M.at(i, j) = w;
  }
  return M;
}

ad::Var gcn_layer(Tape& tape, Var H, const world::GraphSample& g, Var W) {
  Var A = tape.input(neighbor_matrix(g, false, false));
  return tape.relu(tape.matmul(tape.matmul(A, H), W));
}

// column-wise max over each node's neighbor rows; grad goes to the argmax row
static Var neighbor_rows_max(Tape& tape, Var M, const world::GraphSample& g) {
  const Tensor& X = tape.value(M);
  const int n = X.cols();
  const auto nbr = neighbor_lists(g);
  Tensor out({g.num_nodes, n});
  std::vector<int> arg(static_cast<std::size_t>(g.num_nodes) * n, -1);
  for (int i = 0; i < g.num_nodes; ++i) {
    const auto& js = nbr[static_cast<std::size_t>(i)];
    if (js.empty()) continue;  // isolated node aggregates to zero
    for (int c = 0; c < n; ++c) {
      int best = js[0];
      for (int j : js) {
        if (X.at(j, c) > X.at(best, c)) best = j;
      }
      out.at(i, c) = X.at(best, c);
      arg[static_cast<std::size_t>(i) * n + c] = best;
    }
  }
  const int mi = M.id;
  const int oi = static_cast<int>(tape.size());
  const int rows = g.num_nodes;
  return tape.make_node(std::move(out), [mi, oi, rows, n, arg = std::move(arg)](Tape& t) {
    const Tensor& G = t.grad(Var{oi});
    Tensor& gM = t.grad(Var{mi});
    for (int i = 0; i < rows; ++i) {
      for (int c = 0; c < n; ++c) {
        const int j = arg[static_cast<std::size_t>(i) * n + c];
        if (j >= 0) gM.at(j, c) += G.at(i, c);
      }
    }
  });
}

ad::Var sage_layer(Tape& tape, Var H, const world::GraphSample& g, SageAggregator kind, Var W,
                   Var W_pool, Var b_pool) {
  switch (kind) {
    case SageAggregator::mean: {
      Var M = tape.input(neighbor_matrix(g, false, true));
      return tape.relu(tape.matmul(tape.concat_cols(H, tape.matmul(M, H)), W));
    }
    case SageAggregator::pool: {
      Var projected = tape.relu(tape.add_row(tape.matmul(H, W_pool), b_pool));
      Var pooled = neighbor_rows_max(tape, projected, g);
      return tape.relu(tape.matmul(tape.concat_cols(H, pooled), W));
    }
    case SageAggregator::gcn: {
      Var M = tape.input(neighbor_matrix(g, true, true));
      return tape.relu(tape.matmul(tape.matmul(M, H), W));
    }
  }
  throw std::runtime_error("unknown aggregator");
}

ad::Var pool_graph(Tape& tape, Var node_embs, Pooling method, Var W_out) {
  ad::Reduce r = ad::Reduce::sum;
  if (method == Pooling::mean) r = ad::Reduce::mean;
  if (method == Pooling::max) r = ad::Reduce::max;
  return tape.matmul(tape.reduce_rows(node_embs, r), W_out);
}

// --- encoders -----------------------------------------------------------------------

ad::Var encode_graph(Tape& tape, const world::GraphSample& g, const Bound& p,
                     const AgentConfig& cfg, const std::string& prefix) {
  const EncoderConfig& e = cfg.encoder;
  Var H = tape.input(g.node_features);
  for (int l = 0; l < e.num_layers; ++l) {
    const std::string lp = prefix + ".l" + std::to_string(l);
    if (e.graph_layer == GraphLayer::gcn) {
      H = gcn_layer(tape, H, g, p.at(lp + ".W"));
    } else {
      Var wp, bp;
      if (e.aggregator == SageAggregator::pool) {
        wp = p.at(lp + ".Wpool");
        bp = p.at(lp + ".bpool");
      }
      H = sage_layer(tape, H, g, e.aggregator, p.at(lp + ".W"), wp, bp);
    }
  }
  return pool_graph(tape, H, e.pooling, p.at(prefix + ".out.W"));
}

ad::Var gru_step(Tape& tape, const Bound& p, const std::string& prefix, Var x, Var h) {
  auto gate = [&](const char* name, Var hin) {
    return tape.add(tape.add(tape.matmul(x, p.at(prefix + ".Wx" + name)),
                             tape.matmul(hin, p.at(prefix + ".Wh" + name))),
                    p.at(prefix + ".b" + name));
  };
  Var z = tape.sigmoid(gate("z", h));
  Var r = tape.sigmoid(gate("r", h));
  Var c = tape.tanh(gate("c", tape.mul(r, h)));
  // h' = z * h + (1 - z) * c
  return tape.add(tape.mul(z, h), tape.mul(tape.affine(z, -1.0, 1.0), c));
}

ad::Var encode_sequence(Tape& tape, const std::vector<int>& tokens, const Bound& p,
                        const AgentConfig& cfg, const std::string& prefix) {
  for (int t : tokens) {
    if (t < 0 || t >= cfg.token_count) {
      throw std::runtime_error("encode_sequence: token " + std::to_string(t) +
                               " outside universe of size " + std::to_string(cfg.token_count));
    }
  }
  Var h = tape.input(Tensor({1, cfg.encoder.hidden}));
  for (int t : tokens) {
    Var x = tape.gather_rows(p.at(prefix + ".tok.E"), {t});
    h = gru_step(tape, p, prefix + ".rnn", x, h);
  }
  return tape.matmul(h, p.at(prefix + ".out.W"));
}

ad::Var encode_bow(Tape& tape, const std::vector<double>& bow, const Bound& p,
                   const AgentConfig& cfg, const std::string& prefix) {
  if (static_cast<int>(bow.size()) != cfg.bow_width) {
    throw std::runtime_error("encode_bow: input width " + std::to_string(bow.size()) +
                             " does not match configured width " + std::to_string(cfg.bow_width));
  }
  Var x = tape.input(Tensor::row(bow));
  Var hidden = tape.relu(tape.add(tape.matmul(x, p.at(prefix + ".bow.W1")), p.at(prefix + ".bow.b1")));
  return tape.matmul(hidden, p.at(prefix + ".bow.W2"));
}

ad::Var encode_input(Tape& tape, const ReprInput& input, const Bound& p, const AgentConfig& cfg,
                     const std::string& prefix) {
  switch (input.kind) {
    case Repr::graph: return encode_graph(tape, input.graph, p, cfg, prefix);
    case Repr::seq: return encode_sequence(tape, input.tokens, p, cfg, prefix);
    case Repr::bow: return encode_bow(tape, input.bow, p, cfg, prefix);
  }
  throw std::runtime_error("unknown representation kind");
}

// --- decoder --------------------------------------------------------------------------

Decoded decode_message(Tape& tape, Var context, const Bound& p, const AgentConfig& cfg,
                       const StepFn& discretize) {
  Decoded out;
  Var h = tape.tanh(tape.add(tape.matmul(context, p.at("spk.dec.init.W")), p.at("spk.dec.init.b")));
  Var x = p.at("spk.dec.start");
  for (int t = 0; t < cfg.msg_len; ++t) {
    h = gru_step(tape, p, "spk.dec.rnn", x, h);
    Var logits = tape.add(tape.matmul(h, p.at("spk.dec.vocab.W")), p.at("spk.dec.vocab.b"));
    out.logit_rows.push_back(logits);
    int symbol = -1;
    Var row = discretize(tape, logits, t, symbol);
    out.message_rows.push_back(row);
    out.symbols.push_back(symbol);
    x = tape.matmul(row, p.at("spk.dec.E"));
  }
  return out;
}

// --- listener -------------------------------------------------------------------------

std::vector<ad::Var> onehot_rows(Tape& tape, const std::vector<int>& symbols, int vocab) {
  std::vector<Var> rows;
  rows.reserve(symbols.size());
  for (int s : symbols) {
    if (s < 0 || s >= vocab) {
      throw std::runtime_error("message symbol " + std::to_string(s) +
                               " outside vocabulary of size " + std::to_string(vocab));
    }
    Tensor r({1, vocab});
    r.data[static_cast<std::size_t>(s)] = 1.0;
    rows.push_back(tape.input(std::move(r)));
  }
  return rows;
}

ad::Var encode_message_rows(Tape& tape, const std::vector<ad::Var>& rows, const Bound& p,
                            const AgentConfig& cfg) {
  Var h = tape.input(Tensor({1, cfg.encoder.hidden}));
  for (Var row : rows) {
    Var x = tape.matmul(row, p.at("lst.msg.E"));
    h = gru_step(tape, p, "lst.msg.rnn", x, h);
  }
  return tape.matmul(h, p.at("lst.msg.out.W"));
}

ad::Var listener_score(Tape& tape, const std::vector<ad::Var>& message_rows,
                       const std::vector<ReprInput>& candidates, const Bound& p,
                       const AgentConfig& cfg) {
  Var u = encode_message_rows(tape, message_rows, p, cfg);
  std::vector<Var> embs;
  embs.reserve(candidates.size());
  for (const ReprInput& c : candidates) {
    embs.push_back(encode_input(tape, c, p, cfg, "lst.enc"));
  }
  Var stacked = tape.concat_rows(embs);
  Var scores = tape.matmul(stacked, tape.reshape(u, {cfg.embed, 1}));
  return tape.softmax_rows(tape.reshape(scores, {1, static_cast<int>(candidates.size())}));
}

}  // namespace emc::agents
