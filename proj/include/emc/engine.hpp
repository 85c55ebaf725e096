#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "emc/agents.hpp"
#include "emc/channel.hpp"
#include "emc/world.hpp"

namespace emc::engine {

// The unit of play: one target, K distinct distractors, shuffled.
struct Episode {
  std::vector<int> candidate_items;  // dataset item indices, shuffled
  int target_index = -1;             // position of the target among candidates

  int target_item() const { return candidate_items[static_cast<std::size_t>(target_index)]; }
};

enum class PlayMode { train_st, train_soft, eval };

struct TrainConfig {
  world::Game game = world::Game::g1;
  agents::Repr repr = agents::Repr::graph;
  agents::GraphLayer graph_layer = agents::GraphLayer::gcn;
  agents::SageAggregator aggregator = agents::SageAggregator::mean;
  agents::Pooling pooling = agents::Pooling::sum;
  int num_layers = 2;
  int hidden = 200;
  int embed = 50;
  int msg_embed = 50;
  int distractors = 9;
  int vocab = 10;
  int msg_len = 3;
  double lr = 0.001;
  double temperature = 1.0;
  int batch = 32;
  long max_episodes = 200000;
  long eval_every = 2000;
  int eval_episodes = 500;
  int patience = 20;
  std::uint64_t seed = 1;

  void validate() const;
  // values outside the supported experiment grid (informational)
  std::vector<std::string> off_grid_fields() const;
};

struct AgentPair {
  agents::AgentConfig cfg;
  agents::ParamSet speaker;
  agents::ParamSet listener;
};

struct divergence_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

agents::AgentConfig agent_config_for(const TrainConfig& cfg, const world::Dataset& ds);
AgentPair init_agents(const TrainConfig& cfg, const world::Dataset& ds, Rng& rng);

Episode assemble_episode(const world::Dataset& ds, world::Split split, int distractors, Rng& rng);

struct PlayOutcome {
  std::vector<double> probabilities;
  int chosen = -1;
  ad::Var loss;
  std::vector<int> message;
};

PlayOutcome play_episode(ad::Tape& tape, const Episode& ep, const world::Dataset& ds,
                         const agents::Bound& speaker, const agents::Bound& listener,
                         const agents::AgentConfig& cfg, PlayMode mode, double temperature,
                         Rng& rng);

struct EvalRecord {
  std::vector<int> candidate_items;
  int target_index = -1;
  std::vector<int> message;
  int chosen = -1;
};

struct EvalResult {
  double accuracy = 0.0;
  std::vector<EvalRecord> records;
};

EvalResult evaluate(const AgentPair& agents, const world::Dataset& ds, world::Split split,
                    int distractors, long episodes, Rng& rng);

// Argmax message the speaker emits for one item.
std::vector<int> speak(const AgentPair& agents, const world::Dataset& ds, const world::Item& it);

// Re-scores recorded candidates under an arbitrary message; used by the
// robustness sweep.
int listener_choose(const AgentPair& agents, const world::Dataset& ds,
                    const std::vector<int>& candidate_items, const std::vector<int>& symbols);

struct TrainLogRow {
  long episode = 0;
  double loss = 0.0;
  double valid_acc = 0.0;
};

struct TrainResult {
  AgentPair best;
  double best_valid = 0.0;
  long best_episode = 0;
  std::vector<TrainLogRow> log;
  bool early_stopped = false;
};

TrainResult train(const TrainConfig& cfg, const world::Dataset& ds);

void write_log_csv(const std::string& path, const std::vector<TrainLogRow>& rows);

// Checkpoint: manifest (name + shape per parameter) followed by the values as
// little-endian 64-bit floats in manifest order; config and seed live in a
// JSON sidecar next to it.
void save_checkpoint(const std::string& path, const AgentPair& agents, const TrainConfig& cfg);
struct Checkpoint {
  AgentPair agents;
  TrainConfig config;
};
Checkpoint load_checkpoint(const std::string& path);

std::string config_to_json(const TrainConfig& cfg);
TrainConfig config_from_json(const std::string& text);

}  // namespace emc::engine
