#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "emc/autodiff.hpp"
#include "emc/rng.hpp"
#include "emc/world.hpp"

namespace emc::agents {

enum class Repr { bow, seq, graph };
enum class GraphLayer { gcn, sage };
enum class SageAggregator { mean, pool, gcn };
enum class Pooling { sum, mean, max };

std::string to_string(Repr r);
std::string to_string(GraphLayer l);
std::string to_string(SageAggregator a);
std::string to_string(Pooling p);
Repr repr_from_string(const std::string& s);
GraphLayer graph_layer_from_string(const std::string& s);
SageAggregator aggregator_from_string(const std::string& s);
Pooling pooling_from_string(const std::string& s);

struct EncoderConfig {
  Repr kind = Repr::graph;
  GraphLayer graph_layer = GraphLayer::gcn;
  SageAggregator aggregator = SageAggregator::mean;
  Pooling pooling = Pooling::sum;  // sum pooling is the default throughout
  int num_layers = 2;
  int hidden = 200;
};

struct AgentConfig {
  EncoderConfig encoder;
  int embed = 50;      // context / graph embedding size
  int msg_embed = 50;  // symbol embedding size
  int vocab = 10;
  int msg_len = 3;
  // input geometry, fixed by the dataset
  int node_feat_width = 0;
  int token_count = 0;
  int bow_width = 0;
};

// Named parameter tensors. Registration order is the checkpoint manifest
// order, so construction must be deterministic.
struct ParamSet {
  std::vector<std::pair<std::string, ad::Tensor>> entries;

  ad::Tensor& add(const std::string& name, ad::Tensor t);
  ad::Tensor& at(const std::string& name);
  const ad::Tensor& at(const std::string& name) const;
  bool has(const std::string& name) const;
};

// A ParamSet bound to one tape: every named tensor became a trainable leaf.
struct Bound {
  std::unordered_map<std::string, ad::Var> vars;

  ad::Var at(const std::string& name) const;
};

Bound bind(const ParamSet& params, ad::Tape& tape);

ParamSet make_speaker_params(const AgentConfig& cfg, Rng& rng);
ParamSet make_listener_params(const AgentConfig& cfg, Rng& rng);

// One item rendered in the representation the agents were configured for.
struct ReprInput {
  Repr kind = Repr::graph;
  world::GraphSample graph;
  std::vector<int> tokens;
  std::vector<double> bow;
};

ReprInput make_repr_input(const world::Dataset& ds, const world::Item& it, Repr kind);

// --- encoder building blocks --------------------------------------------------

// Unnormalized neighbor-sum aggregation followed by ReLU. Self-loops in the
// edge list contribute the node's own features.
ad::Var gcn_layer(ad::Tape& tape, ad::Var H, const world::GraphSample& g, ad::Var W);

ad::Var sage_layer(ad::Tape& tape, ad::Var H, const world::GraphSample& g, SageAggregator kind,
                   ad::Var W, ad::Var W_pool, ad::Var b_pool);

// Reduce node embeddings by `method`, then apply the linear map.
ad::Var pool_graph(ad::Tape& tape, ad::Var node_embs, Pooling method, ad::Var W_out);

ad::Var encode_graph(ad::Tape& tape, const world::GraphSample& g, const Bound& p,
                     const AgentConfig& cfg, const std::string& prefix);
ad::Var encode_sequence(ad::Tape& tape, const std::vector<int>& tokens, const Bound& p,
                        const AgentConfig& cfg, const std::string& prefix);
ad::Var encode_bow(ad::Tape& tape, const std::vector<double>& bow, const Bound& p,
                   const AgentConfig& cfg, const std::string& prefix);
ad::Var encode_input(ad::Tape& tape, const ReprInput& input, const Bound& p,
                     const AgentConfig& cfg, const std::string& prefix);

// --- speaker decoder -----------------------------------------------------------

// Discretization hook supplied by the caller (the communication channel owns
// the actual rule). Receives the [1 x V] logits row, returns the row fed back
// into the decoder and reports the discrete symbol.
using StepFn = std::function<ad::Var(ad::Tape&, ad::Var logits_row, int step, int& symbol_out)>;

struct Decoded {
  std::vector<ad::Var> logit_rows;    // L rows, [1 x V] each
  std::vector<ad::Var> message_rows;  // what the channel produced per step
  std::vector<int> symbols;
};

Decoded decode_message(ad::Tape& tape, ad::Var context, const Bound& p, const AgentConfig& cfg,
                       const StepFn& discretize);

// --- listener -------------------------------------------------------------------

std::vector<ad::Var> onehot_rows(ad::Tape& tape, const std::vector<int>& symbols, int vocab);

// Message rows -> symbol embeddings -> recurrent cell -> message code u.
ad::Var encode_message_rows(ad::Tape& tape, const std::vector<ad::Var>& rows, const Bound& p,
                            const AgentConfig& cfg);

// Scores all candidates against the message: softmax over dot(u, c_i).
ad::Var listener_score(ad::Tape& tape, const std::vector<ad::Var>& message_rows,
                       const std::vector<ReprInput>& candidates, const Bound& p,
                       const AgentConfig& cfg);

// Single gated recurrent step, parameters under `prefix`.
ad::Var gru_step(ad::Tape& tape, const Bound& p, const std::string& prefix, ad::Var x, ad::Var h);

ad::Tensor glorot(int rows, int cols, Rng& rng);

}  // namespace emc::agents
