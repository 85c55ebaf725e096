#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "emc/engine.hpp"
#include "oracles.hpp"

using namespace emc;
using ad::Tape;
using ad::Tensor;
using ad::Var;
using engine::AgentPair;
using engine::Episode;
using engine::PlayMode;
using engine::TrainConfig;
using world::Dataset;
using world::DatasetSizes;
using world::Split;

namespace {

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.game = world::Game::g1;
  cfg.repr = agents::Repr::graph;
  cfg.num_layers = 2;
  cfg.hidden = 8;
  cfg.embed = 6;
  cfg.msg_embed = 5;
  cfg.distractors = 1;
  cfg.vocab = 4;
  cfg.msg_len = 2;
  cfg.batch = 8;
  cfg.max_episodes = 64;
  cfg.eval_every = 32;
  cfg.eval_episodes = 20;
  cfg.seed = 5;
  return cfg;
}

Dataset tiny_dataset(std::uint64_t seed = 11) {
  return world::build_game1_dataset(world::PerceptualSpec{{3, 3}}, DatasetSizes{40, 15, 15, 0},
                                    0.0, seed);
}

std::string file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("assemble_episode draws distinct shuffled candidates") {
  const Dataset ds = tiny_dataset();
  Rng rng(3);
  const Episode ep = engine::assemble_episode(ds, Split::train, 3, rng);
  CHECK(ep.candidate_items.size() == 4);
  std::set<std::string> keys;
  for (int ix : ep.candidate_items) {
    keys.insert(ds.item_key(ds.items[static_cast<std::size_t>(ix)]));
  }
  CHECK(keys.size() == 4);
  CHECK(ep.target_index >= 0);
  CHECK(ep.target_index < 4);
}

TEST_CASE("assemble_episode fails on a too-small split") {
  const Dataset ds = tiny_dataset();
  Rng rng(5);
  CHECK_THROWS_AS(engine::assemble_episode(ds, Split::ood, 1, rng), std::runtime_error);
  // pool of 9 distinct objects cannot provide 10 distinct candidates
  CHECK_THROWS_AS(engine::assemble_episode(ds, Split::valid, 15, rng), std::runtime_error);
}

TEST_CASE("two-item split with one distractor includes both items") {
  Dataset ds = tiny_dataset();
  // carve a two-item split by relabeling
  int found = 0;
  std::set<std::string> seen;
  for (auto& it : ds.items) {
    if (it.split == Split::valid && found < 2 && !seen.count(ds.item_key(it))) {
      it.split = Split::test;
      seen.insert(ds.item_key(it));
      ++found;
    } else if (it.split == Split::test) {
      it.split = Split::valid;
    }
  }
  REQUIRE(found == 2);
  Rng rng(7);
  const Episode ep = engine::assemble_episode(ds, Split::test, 1, rng);
  CHECK(ep.candidate_items.size() == 2);
}

TEST_CASE("target position is uniform over 10k assemblies") {
  const Dataset ds = tiny_dataset();
  Rng rng(9);
  const int K = 3;
  std::vector<int> counts(K + 1, 0);
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    ++counts[static_cast<std::size_t>(engine::assemble_episode(ds, Split::train, K, rng).target_index)];
  }
  const double expect = static_cast<double>(n) / (K + 1);
  const double sigma = std::sqrt(expect * (1.0 - 1.0 / (K + 1)));
  for (int c : counts) CHECK(std::fabs(c - expect) < 3.0 * sigma);
}

TEST_CASE("composite episode gradient matches finite differences") {
  const Dataset ds = world::build_game1_dataset(world::PerceptualSpec{{2, 2, 2}},
                                                DatasetSizes{8, 0, 0, 0}, 0.0, 21);
  TrainConfig cfg = tiny_config();
  cfg.hidden = 6;
  cfg.embed = 4;
  cfg.msg_embed = 3;
  cfg.vocab = 4;
  cfg.msg_len = 2;

  Rng prng(31);
  AgentPair pair = engine::init_agents(cfg, ds, prng);
  // 4-node toy episode: the [2,2,2] tree has 3 property nodes plus the center
  Rng erng(33);
  const Episode ep = engine::assemble_episode(ds, Split::train, 1, erng);

  std::vector<std::string> names;
  std::vector<Tensor> tensors;
  for (const auto& [n, t] : pair.speaker.entries) {
    names.push_back(n);
    tensors.push_back(t);
  }
  const std::size_t split_at = names.size();
  for (const auto& [n, t] : pair.listener.entries) {
    names.push_back(n);
    tensors.push_back(t);
  }

  auto build = [&](Tape& t, const std::vector<Var>& vars) {
    agents::Bound spk, lst;
    for (std::size_t i = 0; i < names.size(); ++i) {
      (i < split_at ? spk : lst).vars.emplace(names[i], vars[i]);
    }
    Rng noise(777);  // identical gumbel draws on every re-evaluation
    return engine::play_episode(t, ep, ds, spk, lst, pair.cfg, PlayMode::train_soft, 1.0, noise)
        .loss;
  };

  const auto res = oracles::finite_difference_check(tensors, build);
  INFO("worst param ", res.worst_param >= 0 ? names[static_cast<std::size_t>(res.worst_param)] : "-",
       " fd ", res.worst_fd, " analytic ", res.worst_analytic);
  CHECK(res.max_rel_err < 1e-3);
}

TEST_CASE("oracle probabilities give zero loss, uniform listener gives log K+1") {
  Tape t;
  Tensor onehot({1, 10});
  onehot.data[4] = 1.0;
  CHECK(t.value(t.cross_entropy(t.input(onehot), 4)).data[0] ==
        doctest::Approx(0.0).epsilon(1e-9));
  Var uniform = t.input(Tensor::full({1, 20}, 1.0 / 20.0));
  CHECK(t.value(t.cross_entropy(uniform, 7)).data[0] == doctest::Approx(std::log(20.0)));
}

TEST_CASE("untrained accuracy sits near chance across fresh pairs") {
  const Dataset ds = world::build_game1_dataset(world::PerceptualSpec{{4, 4, 3}},
                                                DatasetSizes{200, 100, 100, 0}, 0.0, 51);
  TrainConfig cfg = tiny_config();
  cfg.distractors = 9;
  // one fixed random pair is biased on a finite pool; average over draws
  long correct = 0, total = 0;
  for (int p = 0; p < 20; ++p) {
    Rng prng(53 + static_cast<std::uint64_t>(p));
    const AgentPair pair = engine::init_agents(cfg, ds, prng);
    Rng erng(55 + static_cast<std::uint64_t>(p));
    const auto res = engine::evaluate(pair, ds, Split::test, 9, 50, erng);
    for (const auto& rec : res.records) {
      if (rec.chosen == rec.target_index) ++correct;
      ++total;
    }
  }
  const double accuracy = static_cast<double>(correct) / static_cast<double>(total);
  CHECK(accuracy > 0.10 - 0.04);
  CHECK(accuracy < 0.10 + 0.04);
}

TEST_CASE("soft-channel gradient step decreases the episode loss") {
  const Dataset ds = tiny_dataset();
  TrainConfig cfg = tiny_config();
  Rng prng(61);
  AgentPair pair = engine::init_agents(cfg, ds, prng);
  Rng erng(63);
  const Episode ep = engine::assemble_episode(ds, Split::train, 1, erng);

  auto loss_and_grads = [&](bool apply) {
    Tape t;
    agents::Bound spk = agents::bind(pair.speaker, t);
    agents::Bound lst = agents::bind(pair.listener, t);
    Rng noise(99);
    auto o = engine::play_episode(t, ep, ds, spk, lst, pair.cfg, PlayMode::train_soft, 1.0, noise);
    const double before = t.value(o.loss).data[0];
    if (apply) {
      t.backward(o.loss);
      const double lr = 1e-3;
      for (auto& [name, tensor] : pair.speaker.entries) {
        const Tensor& g = t.grad(spk.at(name));
        for (std::size_t k = 0; k < tensor.data.size(); ++k) tensor.data[k] -= lr * g.data[k];
      }
      for (auto& [name, tensor] : pair.listener.entries) {
        const Tensor& g = t.grad(lst.at(name));
        for (std::size_t k = 0; k < tensor.data.size(); ++k) tensor.data[k] -= lr * g.data[k];
      }
    }
    return before;
  };
  const double before = loss_and_grads(true);
  const double after = loss_and_grads(false);
  CHECK(after < before);
}

TEST_CASE("training runs, logs, and stays deterministic") {
  const Dataset ds = tiny_dataset();
  TrainConfig cfg = tiny_config();
  cfg.max_episodes = 96;
  cfg.eval_every = 48;

  const auto r1 = engine::train(cfg, ds);
  const auto r2 = engine::train(cfg, ds);
  REQUIRE(r1.log.size() == r2.log.size());
  REQUIRE(!r1.log.empty());
  for (std::size_t i = 0; i < r1.log.size(); ++i) {
    CHECK(r1.log[i].episode == r2.log[i].episode);
    CHECK(r1.log[i].loss == r2.log[i].loss);
    CHECK(r1.log[i].valid_acc == r2.log[i].valid_acc);
  }
  for (std::size_t i = 0; i < r1.best.speaker.entries.size(); ++i) {
    CHECK(r1.best.speaker.entries[i].second.data == r2.best.speaker.entries[i].second.data);
  }
  for (const auto& row : r1.log) CHECK(std::isfinite(row.loss));
}

TEST_CASE("exploding training aborts with a divergence diagnostic") {
  const Dataset ds = tiny_dataset();
  TrainConfig cfg = tiny_config();
  cfg.lr = 1e300;
  cfg.max_episodes = 600;
  cfg.eval_every = 10000;
  CHECK_THROWS_AS(engine::train(cfg, ds), engine::divergence_error);
}

TEST_CASE("requesting items for an empty split pool fails") {
  // universe of two objects cannot populate a three-way split with items
  CHECK_THROWS_AS(world::build_game1_dataset(world::PerceptualSpec{{2}},
                                             DatasetSizes{10, 5, 5, 0}, 0.0, 3),
                  std::runtime_error);
}

TEST_CASE("zero learning rate leaves parameters untouched") {
  const Dataset ds = tiny_dataset();
  TrainConfig cfg = tiny_config();
  cfg.lr = 0.0;
  cfg.max_episodes = 32;
  cfg.eval_every = 1000;  // no eval pass

  Rng prng = Rng::substream(cfg.seed, 100);
  const AgentPair fresh = engine::init_agents(cfg, ds, prng);
  const auto result = engine::train(cfg, ds);
  for (std::size_t i = 0; i < fresh.speaker.entries.size(); ++i) {
    CHECK(result.best.speaker.entries[i].second.data == fresh.speaker.entries[i].second.data);
  }
  for (std::size_t i = 0; i < fresh.listener.entries.size(); ++i) {
    CHECK(result.best.listener.entries[i].second.data == fresh.listener.entries[i].second.data);
  }
}

TEST_CASE("evaluation never touches parameters or foreign splits") {
  const Dataset ds = tiny_dataset();
  TrainConfig cfg = tiny_config();
  Rng prng(71);
  const AgentPair pair = engine::init_agents(cfg, ds, prng);
  const auto snapshot = pair.speaker.entries;

  Rng erng(73);
  const auto res = engine::evaluate(pair, ds, Split::test, 1, 50, erng);
  for (std::size_t i = 0; i < snapshot.size(); ++i) {
    CHECK(pair.speaker.entries[i].second.data == snapshot[i].second.data);
  }
  for (const auto& rec : res.records) {
    for (int ix : rec.candidate_items) {
      CHECK(ds.items[static_cast<std::size_t>(ix)].split == Split::test);
    }
    REQUIRE(rec.message.size() == static_cast<std::size_t>(cfg.msg_len));
  }
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  const Dataset ds = tiny_dataset();
  TrainConfig cfg = tiny_config();
  Rng prng(81);
  const AgentPair pair = engine::init_agents(cfg, ds, prng);

  const std::string path = "test_ckpt.bin";
  engine::save_checkpoint(path, pair, cfg);
  const engine::Checkpoint back = engine::load_checkpoint(path);

  REQUIRE(back.agents.speaker.entries.size() == pair.speaker.entries.size());
  for (std::size_t i = 0; i < pair.speaker.entries.size(); ++i) {
    CHECK(back.agents.speaker.entries[i].first == pair.speaker.entries[i].first);
    CHECK(back.agents.speaker.entries[i].second.data == pair.speaker.entries[i].second.data);
  }
  REQUIRE(back.agents.listener.entries.size() == pair.listener.entries.size());
  for (std::size_t i = 0; i < pair.listener.entries.size(); ++i) {
    CHECK(back.agents.listener.entries[i].second.data == pair.listener.entries[i].second.data);
  }
  CHECK(back.config.vocab == cfg.vocab);
  CHECK(back.config.seed == cfg.seed);
  CHECK(back.agents.cfg.node_feat_width == pair.cfg.node_feat_width);

  // same agents saved twice produce identical bytes
  engine::save_checkpoint("test_ckpt2.bin", pair, cfg);
  CHECK(file_bytes(path) == file_bytes("test_ckpt2.bin"));
}

TEST_CASE("config json round-trips") {
  TrainConfig cfg = tiny_config();
  cfg.repr = agents::Repr::seq;
  cfg.lr = 0.01;
  const TrainConfig back = engine::config_from_json(engine::config_to_json(cfg));
  CHECK(back.repr == cfg.repr);
  CHECK(back.lr == cfg.lr);
  CHECK(back.max_episodes == cfg.max_episodes);
  CHECK(back.seed == cfg.seed);
  CHECK(back.game == cfg.game);
}

TEST_CASE("grid validation flags off-grid values without rejecting them") {
  TrainConfig cfg;  // defaults sit on the grid
  CHECK(cfg.off_grid_fields().empty());
  cfg.msg_len = 2;
  cfg.hidden = 64;
  const auto off = cfg.off_grid_fields();
  CHECK(off == std::vector<std::string>{"msg-len", "hidden"});
  cfg.validate();  // still sane

  TrainConfig bad;
  bad.temperature = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::runtime_error);
}

TEST_CASE("speak emits a deterministic argmax message per item") {
  const Dataset ds = tiny_dataset();
  TrainConfig cfg = tiny_config();
  Rng prng(91);
  const AgentPair pair = engine::init_agents(cfg, ds, prng);
  const auto& item = ds.items.front();
  const auto m1 = engine::speak(pair, ds, item);
  const auto m2 = engine::speak(pair, ds, item);
  CHECK(m1 == m2);
  CHECK(m1.size() == static_cast<std::size_t>(cfg.msg_len));
}

TEST_CASE("listener_choose agrees with recorded evaluation choices") {
  const Dataset ds = tiny_dataset();
  TrainConfig cfg = tiny_config();
  Rng prng(95);
  const AgentPair pair = engine::init_agents(cfg, ds, prng);
  Rng erng(97);
  const auto res = engine::evaluate(pair, ds, Split::train, 2, 25, erng);
  for (const auto& rec : res.records) {
    CHECK(engine::listener_choose(pair, ds, rec.candidate_items, rec.message) == rec.chosen);
  }
}
