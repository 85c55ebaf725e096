#include "emc/engine.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

namespace emc::engine {

using ad::Tape;
using ad::Tensor;
using ad::Var;
using nlohmann::json;

// --- config ---------------------------------------------------------------------

void TrainConfig::validate() const {
  auto positive = [](long v, const char* name) {
    if (v <= 0) throw std::runtime_error(std::string("config: ") + name + " must be positive");
  };
  positive(distractors, "distractors");
  positive(vocab, "vocab");
  positive(msg_len, "msg-len");
  positive(num_layers, "layers");
  positive(hidden, "hidden");
  positive(embed, "embed");
  positive(msg_embed, "msg-embed");
  positive(batch, "batch");
  positive(max_episodes, "episodes");
  positive(eval_every, "eval-every");
  positive(eval_episodes, "eval-episodes");
  positive(patience, "patience");
  if (lr < 0) throw std::runtime_error("config: learning rate must be >= 0");
  if (temperature <= 0) throw std::runtime_error("config: temperature must be positive");
}

template <typename T>
static bool in_grid(T v, std::initializer_list<T> grid) {
  for (T g : grid) {
    if (v == g) return true;
  }
  return false;
}

std::vector<std::string> TrainConfig::off_grid_fields() const {
  std::vector<std::string> out;
  if (!in_grid(distractors, {1, 2, 4, 9, 19, 29, 49})) out.push_back("distractors");
  if (!in_grid(vocab, {10, 25, 50, 100})) out.push_back("vocab");
  if (!in_grid(msg_len, {3, 4, 5, 10, 25})) out.push_back("msg-len");
  if (!in_grid(num_layers, {1, 2, 3})) out.push_back("layers");
  if (!in_grid(hidden, {100, 200})) out.push_back("hidden");
  if (!in_grid(msg_embed, {50, 100})) out.push_back("msg-embed");
  if (!in_grid(lr, {0.01, 0.001})) out.push_back("lr");
  if (!in_grid(temperature, {1.0})) out.push_back("temperature");
  return out;
}

agents::AgentConfig agent_config_for(const TrainConfig& cfg, const world::Dataset& ds) {
  agents::AgentConfig a;
  a.encoder.kind = cfg.repr;
  a.encoder.graph_layer = cfg.graph_layer;
  a.encoder.aggregator = cfg.aggregator;
  a.encoder.pooling = cfg.pooling;
  a.encoder.num_layers = cfg.num_layers;
  a.encoder.hidden = cfg.hidden;
  a.embed = cfg.embed;
  a.msg_embed = cfg.msg_embed;
  a.vocab = cfg.vocab;
  a.msg_len = cfg.msg_len;
  if (ds.game == world::Game::g1) {
    const int n = ds.spec.num_properties();
    a.node_feat_width = (n + 1) + ds.spec.max_types();
    a.token_count = ds.spec.token_count();
    a.bow_width = ds.spec.token_count();
  } else {
    a.node_feat_width = ds.g2_num_nodes;
    a.token_count = ds.g2_num_nodes;
    a.bow_width = ds.g2_num_nodes;
  }
  return a;
}

AgentPair init_agents(const TrainConfig& cfg, const world::Dataset& ds, Rng& rng) {
  AgentPair pair;
  pair.cfg = agent_config_for(cfg, ds);
  pair.speaker = agents::make_speaker_params(pair.cfg, rng);
  pair.listener = agents::make_listener_params(pair.cfg, rng);
  return pair;
}

// --- episodes --------------------------------------------------------------------

Episode assemble_episode(const world::Dataset& ds, world::Split split, int distractors, Rng& rng) {
  const std::vector<int> pool = ds.indices_of(split);
  if (static_cast<int>(pool.size()) <= distractors) {
    throw std::runtime_error("split '" + world::to_string(split) + "' has " +
                             std::to_string(pool.size()) + " items, need more than " +
                             std::to_string(distractors));
  }
  const int target = pool[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(pool.size())))];
  std::set<std::string> used{ds.item_key(ds.items[static_cast<std::size_t>(target)])};
  std::vector<int> picked{target};
  const int max_attempts = 200 * (distractors + 1);
  int attempts = 0;
  while (static_cast<int>(picked.size()) < distractors + 1) {
    if (++attempts > max_attempts) {
      throw std::runtime_error("split '" + world::to_string(split) +
                               "' lacks enough distinct items for " +
                               std::to_string(distractors) + " distractors");
    }
    const int c = pool[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(pool.size())))];
    const std::string key = ds.item_key(ds.items[static_cast<std::size_t>(c)]);
    if (used.count(key)) continue;
    used.insert(key);
    picked.push_back(c);
  }
  rng.shuffle(picked);
  Episode ep;
  ep.candidate_items = std::move(picked);
  for (std::size_t i = 0; i < ep.candidate_items.size(); ++i) {
    if (ep.candidate_items[i] == target) ep.target_index = static_cast<int>(i);
  }
  return ep;
}

PlayOutcome play_episode(Tape& tape, const Episode& ep, const world::Dataset& ds,
                         const agents::Bound& speaker, const agents::Bound& listener,
                         const agents::AgentConfig& cfg, PlayMode mode, double temperature,
                         Rng& rng) {
  const world::Item& target = ds.items[static_cast<std::size_t>(ep.target_item())];
  agents::ReprInput target_in = agents::make_repr_input(ds, target, cfg.encoder.kind);

  Var context = agents::encode_input(tape, target_in, speaker, cfg, "spk.enc");

  const channel::Mode cmode = mode == PlayMode::train_st  ? channel::Mode::train_st
                              : mode == PlayMode::train_soft ? channel::Mode::train_soft
                                                             : channel::Mode::eval_argmax;
  agents::StepFn discretize = [&](Tape& t, Var logits, int, int& symbol) {
    return channel::step(t, logits, cmode, temperature, rng, symbol);
  };
  agents::Decoded decoded = agents::decode_message(tape, context, speaker, cfg, discretize);

  std::vector<agents::ReprInput> candidates;
  candidates.reserve(ep.candidate_items.size());
  for (int ix : ep.candidate_items) {
    candidates.push_back(
        agents::make_repr_input(ds, ds.items[static_cast<std::size_t>(ix)], cfg.encoder.kind));
  }
  Var probs = agents::listener_score(tape, decoded.message_rows, candidates, listener, cfg);

  PlayOutcome out;
  out.probabilities = tape.value(probs).data;
  out.chosen = channel::argmax_lowest(out.probabilities.data(),
                                      static_cast<int>(out.probabilities.size()));
  out.loss = tape.cross_entropy(probs, ep.target_index);
  out.message = decoded.symbols;
  return out;
}

// --- evaluation --------------------------------------------------------------------

EvalResult evaluate(const AgentPair& agents_pair, const world::Dataset& ds, world::Split split,
                    int distractors, long episodes, Rng& rng) {
  EvalResult res;
  long correct = 0;
  for (long e = 0; e < episodes; ++e) {
    Tape tape;
    const agents::Bound spk = agents::bind(agents_pair.speaker, tape);
    const agents::Bound lst = agents::bind(agents_pair.listener, tape);
    const Episode ep = assemble_episode(ds, split, distractors, rng);
    const PlayOutcome o =
        play_episode(tape, ep, ds, spk, lst, agents_pair.cfg, PlayMode::eval, 1.0, rng);
    if (o.chosen == ep.target_index) ++correct;
    EvalRecord rec;
    rec.candidate_items = ep.candidate_items;
    rec.target_index = ep.target_index;
    rec.message = o.message;
    rec.chosen = o.chosen;
    res.records.push_back(std::move(rec));
  }
  res.accuracy = episodes > 0 ? static_cast<double>(correct) / static_cast<double>(episodes) : 0.0;
  return res;
}

std::vector<int> speak(const AgentPair& agents_pair, const world::Dataset& ds,
                       const world::Item& it) {
  Tape tape;
  const agents::Bound spk = agents::bind(agents_pair.speaker, tape);
  agents::ReprInput in = agents::make_repr_input(ds, it, agents_pair.cfg.encoder.kind);
  Var context = agents::encode_input(tape, in, spk, agents_pair.cfg, "spk.enc");
  Rng unused(0);
  agents::StepFn discretize = [&](Tape& t, Var logits, int, int& symbol) {
    return channel::step(t, logits, channel::Mode::eval_argmax, 1.0, unused, symbol);
  };
  return agents::decode_message(tape, context, spk, agents_pair.cfg, discretize).symbols;
}

int listener_choose(const AgentPair& agents_pair, const world::Dataset& ds,
                    const std::vector<int>& candidate_items, const std::vector<int>& symbols) {
  Tape tape;
  const agents::Bound lst = agents::bind(agents_pair.listener, tape);
  std::vector<agents::ReprInput> candidates;
  candidates.reserve(candidate_items.size());
  for (int ix : candidate_items) {
    candidates.push_back(agents::make_repr_input(ds, ds.items[static_cast<std::size_t>(ix)],
                                                 agents_pair.cfg.encoder.kind));
  }
  const std::vector<Var> rows = agents::onehot_rows(tape, symbols, agents_pair.cfg.vocab);
  Var probs = agents::listener_score(tape, rows, candidates, lst, agents_pair.cfg);
  const Tensor& P = tape.value(probs);
  return channel::argmax_lowest(P.data.data(), P.cols());
}

// --- optimizer ---------------------------------------------------------------------

namespace {

// adaptive moment estimation, the usual defaults
class Adam {
 public:
  explicit Adam(double lr) : lr_(lr) {}

  void step(agents::ParamSet& params, Tape& tape, const agents::Bound& bound, double scale) {
    ++t_;
    for (auto& [name, tensor] : params.entries) {
      const Tensor& g = tape.grad(bound.at(name));
      auto& [m, v] = moments_[name];
      if (m.data.empty()) {
        m = Tensor::zeros(tensor.shape);
        v = Tensor::zeros(tensor.shape);
      }
      const double bc1 = 1.0 - std::pow(beta1_, t_);
      const double bc2 = 1.0 - std::pow(beta2_, t_);
      for (std::size_t i = 0; i < tensor.data.size(); ++i) {
        const double gi = g.data[i] * scale;
        m.data[i] = beta1_ * m.data[i] + (1.0 - beta1_) * gi;
        v.data[i] = beta2_ * v.data[i] + (1.0 - beta2_) * gi * gi;
        const double mhat = m.data[i] / bc1;
        const double vhat = v.data[i] / bc2;
        tensor.data[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

 private:
  double lr_;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  long t_ = 0;
  std::unordered_map<std::string, std::pair<Tensor, Tensor>> moments_;
};

}  // namespace

// --- training ----------------------------------------------------------------------

TrainResult train(const TrainConfig& cfg, const world::Dataset& ds) {
  cfg.validate();
  Rng init_rng = Rng::substream(cfg.seed, 100);
  AgentPair agents_pair = init_agents(cfg, ds, init_rng);
  Rng episode_rng = Rng::substream(cfg.seed, 101);
  Rng channel_rng = Rng::substream(cfg.seed, 102);

  Adam speaker_opt(cfg.lr);
  Adam listener_opt(cfg.lr);

  TrainResult result;
  result.best = agents_pair;
  result.best_valid = -1.0;

  long episodes_done = 0;
  long next_eval = cfg.eval_every;
  long eval_index = 0;
  int evals_since_best = 0;
  double window_loss = 0.0;
  long window_count = 0;

  while (episodes_done < cfg.max_episodes) {
    Tape tape;
    const agents::Bound spk = agents::bind(agents_pair.speaker, tape);
    const agents::Bound lst = agents::bind(agents_pair.listener, tape);

    const int batch = static_cast<int>(
        std::min<long>(cfg.batch, cfg.max_episodes - episodes_done));
    Var total;
    for (int b = 0; b < batch; ++b) {
      const Episode ep = assemble_episode(ds, world::Split::train, cfg.distractors, episode_rng);
      PlayOutcome o = play_episode(tape, ep, ds, spk, lst, agents_pair.cfg, PlayMode::train_st,
                                   cfg.temperature, channel_rng);
      total = b == 0 ? o.loss : tape.add(total, o.loss);
      window_loss += tape.value(o.loss).data[0];
      ++window_count;
      ++episodes_done;
    }
    Var loss = tape.affine(total, 1.0 / batch, 0.0);
    const double loss_value = tape.value(loss).data[0];
    if (!std::isfinite(loss_value)) {
      throw divergence_error("training diverged: loss " + std::to_string(loss_value) +
                             " at episode " + std::to_string(episodes_done));
    }
    tape.backward(loss);
    speaker_opt.step(agents_pair.speaker, tape, spk, 1.0);
    listener_opt.step(agents_pair.listener, tape, lst, 1.0);

    bool stop = false;
    while (episodes_done >= next_eval) {
      Rng eval_rng = Rng::substream(cfg.seed, 5000 + static_cast<std::uint64_t>(eval_index));
      const EvalResult ev = evaluate(agents_pair, ds, world::Split::valid, cfg.distractors,
                                     cfg.eval_episodes, eval_rng);
      TrainLogRow row;
      row.episode = episodes_done;
      row.loss = window_count > 0 ? window_loss / static_cast<double>(window_count) : 0.0;
      row.valid_acc = ev.accuracy;
      result.log.push_back(row);
      window_loss = 0.0;
      window_count = 0;
      ++eval_index;
      next_eval += cfg.eval_every;

      if (ev.accuracy > result.best_valid) {
        result.best_valid = ev.accuracy;
        result.best = agents_pair;
        result.best_episode = episodes_done;
        evals_since_best = 0;
      } else if (++evals_since_best >= cfg.patience) {
        result.early_stopped = true;
        stop = true;
        break;
      }
    }
    if (stop) break;
  }

  if (result.log.empty()) {
    result.best = agents_pair;
    result.best_episode = episodes_done;
  }
  return result;
}

void write_log_csv(const std::string& path, const std::vector<TrainLogRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write log " + path);
  out << "episode,loss,valid_acc\n";
  char buf[128];
  for (const TrainLogRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%ld,%.6f,%.6f\n", r.episode, r.loss, r.valid_acc);
    out << buf;
  }
}

// --- checkpoints ----------------------------------------------------------------------

static void write_f64_le(std::ostream& out, double v) {
  const std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  out.write(b, 8);
}

static double read_f64_le(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

static const char* kCheckpointMagic = "EMC-CKPT-1";

void save_checkpoint(const std::string& path, const AgentPair& agents_pair,
                     const TrainConfig& cfg) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  std::vector<const std::pair<std::string, Tensor>*> manifest;
  for (const auto& e : agents_pair.speaker.entries) manifest.push_back(&e);
  for (const auto& e : agents_pair.listener.entries) manifest.push_back(&e);

  out << kCheckpointMagic << "\n" << manifest.size() << "\n";
  for (const auto* e : manifest) {
    out << e->first << " " << e->second.shape.size();
    for (int d : e->second.shape) out << " " << d;
    out << "\n";
  }
  for (const auto* e : manifest) {
    for (double v : e->second.data) write_f64_le(out, v);
  }

  json sidecar;
  sidecar["config"] = json::parse(config_to_json(cfg));
  sidecar["seed"] = cfg.seed;
  json derived;
  derived["node_feat_width"] = agents_pair.cfg.node_feat_width;
  derived["token_count"] = agents_pair.cfg.token_count;
  derived["bow_width"] = agents_pair.cfg.bow_width;
  sidecar["derived"] = derived;
  std::ofstream side(path + ".json", std::ios::binary);
  if (!side) throw std::runtime_error("cannot write checkpoint sidecar for " + path);
  side << sidecar.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream side(path + ".json", std::ios::binary);
  if (!side) throw std::runtime_error("missing checkpoint sidecar " + path + ".json");
  json sidecar;
  side >> sidecar;

  Checkpoint ck;
  ck.config = config_from_json(sidecar.at("config").dump());

  agents::AgentConfig acfg;
  acfg.encoder.kind = ck.config.repr;
  acfg.encoder.graph_layer = ck.config.graph_layer;
  acfg.encoder.aggregator = ck.config.aggregator;
  acfg.encoder.pooling = ck.config.pooling;
  acfg.encoder.num_layers = ck.config.num_layers;
  acfg.encoder.hidden = ck.config.hidden;
  acfg.embed = ck.config.embed;
  acfg.msg_embed = ck.config.msg_embed;
  acfg.vocab = ck.config.vocab;
  acfg.msg_len = ck.config.msg_len;
  const json& derived = sidecar.at("derived");
  acfg.node_feat_width = derived.at("node_feat_width").get<int>();
  acfg.token_count = derived.at("token_count").get<int>();
  acfg.bow_width = derived.at("bow_width").get<int>();
  ck.agents.cfg = acfg;

  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("missing checkpoint " + path);
  std::string magic;
  std::getline(in, magic);
  if (magic != kCheckpointMagic) {
    throw std::runtime_error("not a checkpoint file: " + path);
  }
  std::size_t count = 0;
  in >> count;
  std::vector<std::pair<std::string, ad::Shape>> manifest;
  for (std::size_t i = 0; i < count; ++i) {
    std::string name;
    std::size_t ndim = 0;
    in >> name >> ndim;
    ad::Shape shape(ndim);
    for (std::size_t d = 0; d < ndim; ++d) in >> shape[d];
    manifest.emplace_back(std::move(name), std::move(shape));
  }
  in.get();  // trailing newline before the binary block
  for (auto& [name, shape] : manifest) {
    Tensor t(shape);
    for (double& v : t.data) v = read_f64_le(in);
    if (!in) throw std::runtime_error("checkpoint truncated at param '" + name + "'");
    if (name.rfind("spk.", 0) == 0) {
      ck.agents.speaker.add(name, std::move(t));
    } else {
      ck.agents.listener.add(name, std::move(t));
    }
  }
  return ck;
}

// --- config json -------------------------------------------------------------------------

std::string config_to_json(const TrainConfig& cfg) {
  json j;
  j["game"] = world::to_string(cfg.game);
  j["repr"] = agents::to_string(cfg.repr);
  j["graph_layer"] = agents::to_string(cfg.graph_layer);
  j["aggregator"] = agents::to_string(cfg.aggregator);
  j["pooling"] = agents::to_string(cfg.pooling);
  j["layers"] = cfg.num_layers;
  j["hidden"] = cfg.hidden;
  j["embed"] = cfg.embed;
  j["msg_embed"] = cfg.msg_embed;
  j["distractors"] = cfg.distractors;
  j["vocab"] = cfg.vocab;
  j["msg_len"] = cfg.msg_len;
  j["lr"] = cfg.lr;
  j["temperature"] = cfg.temperature;
  j["batch"] = cfg.batch;
  j["episodes"] = cfg.max_episodes;
  j["eval_every"] = cfg.eval_every;
  j["eval_episodes"] = cfg.eval_episodes;
  j["patience"] = cfg.patience;
  j["seed"] = cfg.seed;
  return j.dump(2);
}

TrainConfig config_from_json(const std::string& text) {
  const json j = json::parse(text);
  TrainConfig cfg;
  cfg.game = world::game_from_string(j.at("game").get<std::string>());
  cfg.repr = agents::repr_from_string(j.at("repr").get<std::string>());
  cfg.graph_layer = agents::graph_layer_from_string(j.at("graph_layer").get<std::string>());
  cfg.aggregator = agents::aggregator_from_string(j.at("aggregator").get<std::string>());
  cfg.pooling = agents::pooling_from_string(j.at("pooling").get<std::string>());
  cfg.num_layers = j.at("layers").get<int>();
  cfg.hidden = j.at("hidden").get<int>();
  cfg.embed = j.at("embed").get<int>();
  cfg.msg_embed = j.at("msg_embed").get<int>();
  cfg.distractors = j.at("distractors").get<int>();
  cfg.vocab = j.at("vocab").get<int>();
  cfg.msg_len = j.at("msg_len").get<int>();
  cfg.lr = j.at("lr").get<double>();
  cfg.temperature = j.at("temperature").get<double>();
  cfg.batch = j.at("batch").get<int>();
  cfg.max_episodes = j.at("episodes").get<long>();
  cfg.eval_every = j.at("eval_every").get<long>();
  cfg.eval_episodes = j.at("eval_episodes").get<int>();
  cfg.patience = j.at("patience").get<int>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

}  // namespace emc::engine
