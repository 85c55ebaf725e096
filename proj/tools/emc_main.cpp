// emc — emergent-communication lab for graph referential games.
// Subcommands: generate | train | eval | report.
// Exit codes: 0 ok, 1 usage, 2 runtime failure.

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "emc/engine.hpp"
#include "emc/metrics.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace emc;

namespace {

std::string default_out_root() {
  const char* env = std::getenv("EMC_OUT_ROOT");
  return env && *env ? env : "runs";
}

std::string run_dir_name(const engine::TrainConfig& cfg) {
  std::ostringstream os;
  os << world::to_string(cfg.game) << "-" << agents::to_string(cfg.repr) << "-K"
     << cfg.distractors << "-V" << cfg.vocab << "-L" << cfg.msg_len << "-seed" << cfg.seed;
  return os.str();
}

void warn_off_grid(const engine::TrainConfig& cfg, bool strict) {
  const auto off = cfg.off_grid_fields();
  if (off.empty()) return;
  std::ostringstream os;
  os << "values outside the supported experiment grid:";
  for (const auto& f : off) os << " " << f;
  if (strict) throw std::runtime_error(os.str() + " (remove --strict-grid to allow)");
  std::cerr << "warning: " << os.str() << "\n";
}

struct GenerateArgs {
  std::string game = "g1";
  std::vector<int> dims = {10, 6, 8};
  int nodes = 25;
  long train = 40000, valid = 5000, test = 5000, ood = 0;
  double ood_fraction = 0.2;
  std::uint64_t seed = 1;
  std::string out = "dataset.jsonl";
};

int cmd_generate(const GenerateArgs& a) {
  world::Dataset ds;
  if (a.game == "g1") {
    world::PerceptualSpec spec{a.dims};
    ds = world::build_game1_dataset(spec, {a.train, a.valid, a.test, a.ood}, a.ood_fraction,
                                    a.seed);
  } else if (a.game == "g2") {
    ds = world::build_game2_dataset(a.nodes, {a.train, a.valid, a.test, a.ood}, a.seed);
  } else {
    throw std::runtime_error("unknown game '" + a.game + "' (want g1|g2)");
  }
  if (const fs::path parent = fs::path(a.out).parent_path(); !parent.empty()) {
    fs::create_directories(parent);
  }
  world::save_dataset(ds, a.out);
  std::cout << "wrote " << ds.items.size() << " items to " << a.out << "\n";
  return 0;
}

struct TrainArgs {
  engine::TrainConfig cfg;
  std::string data;
  std::string out = default_out_root();
  std::string repr = "graph";
  std::string graph_layer = "gcn";
  std::string aggregator = "mean";
  std::string pooling = "sum";
  bool strict_grid = false;
  std::vector<int> sweep_distractors, sweep_seeds;
  std::vector<std::string> sweep_repr;
  int jobs = 1;
};

int run_one_training(engine::TrainConfig cfg, const world::Dataset& ds, const fs::path& root) {
  cfg.game = ds.game;
  const fs::path dir = root / run_dir_name(cfg);
  fs::create_directories(dir);
  const auto result = engine::train(cfg, ds);
  engine::save_checkpoint((dir / "checkpoint.bin").string(), result.best, cfg);
  engine::write_log_csv((dir / "train_log.csv").string(), result.log);
  json summary;
  summary["best_valid_accuracy"] = result.best_valid;
  summary["best_episode"] = result.best_episode;
  summary["early_stopped"] = result.early_stopped;
  std::ofstream(dir / "train_summary.json") << summary.dump(2) << "\n";
  std::cout << dir.string() << ": best valid " << result.best_valid << " at episode "
            << result.best_episode << "\n";
  return 0;
}

int cmd_train(const TrainArgs& a) {
  world::Dataset ds = world::load_dataset(a.data);

  engine::TrainConfig base = a.cfg;
  base.game = ds.game;
  base.repr = agents::repr_from_string(a.repr);
  base.graph_layer = agents::graph_layer_from_string(a.graph_layer);
  base.aggregator = agents::aggregator_from_string(a.aggregator);
  base.pooling = agents::pooling_from_string(a.pooling);
  base.validate();
  warn_off_grid(base, a.strict_grid);

  std::vector<engine::TrainConfig> runs;
  const std::vector<int> ks =
      a.sweep_distractors.empty() ? std::vector<int>{base.distractors} : a.sweep_distractors;
  const std::vector<int> seeds = a.sweep_seeds.empty()
                                     ? std::vector<int>{static_cast<int>(base.seed)}
                                     : a.sweep_seeds;
  const std::vector<std::string> reprs =
      a.sweep_repr.empty() ? std::vector<std::string>{agents::to_string(base.repr)}
                           : a.sweep_repr;
  for (const std::string& r : reprs) {
    for (int k : ks) {
      for (int s : seeds) {
        engine::TrainConfig cfg = base;
        cfg.repr = agents::repr_from_string(r);
        cfg.distractors = k;
        cfg.seed = static_cast<std::uint64_t>(s);
        runs.push_back(cfg);
      }
    }
  }

  const fs::path root(a.out);
  fs::create_directories(root);
  if (runs.size() == 1 || a.jobs <= 1) {
    for (const auto& cfg : runs) run_one_training(cfg, ds, root);
    return 0;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<int> failures{0};
  std::mutex io;
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < runs.size(); i = next.fetch_add(1)) {
      try {
        run_one_training(runs[i], ds, root);
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(io);
        std::cerr << "run " << run_dir_name(runs[i]) << " failed: " << e.what() << "\n";
        ++failures;
      }
    }
  };
  std::vector<std::thread> pool;
  const int n = std::min<int>(a.jobs, static_cast<int>(runs.size()));
  pool.reserve(static_cast<std::size_t>(n));
  for (int t = 0; t < n; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (failures > 0) throw std::runtime_error(std::to_string(failures.load()) + " runs failed");
  return 0;
}

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string split = "test";
  bool ood = false;
  long episodes = 5000;
  int distractors = -1;
  std::uint64_t seed = 1;
  bool toposim = false;
  std::string pairs = "500";
  bool robustness = false;
  int position = 0;
  std::string out = ".";
};

int cmd_eval(const EvalArgs& a) {
  const engine::Checkpoint ck = engine::load_checkpoint(a.checkpoint);
  const world::Dataset ds = world::load_dataset(a.data);
  if (ds.game != ck.config.game) {
    throw std::runtime_error("checkpoint was trained on " + world::to_string(ck.config.game) +
                             " but the dataset is " + world::to_string(ds.game));
  }
  const world::Split split = world::split_from_string(a.ood ? "ood" : a.split);
  const int k = a.distractors > 0 ? a.distractors : ck.config.distractors;
  const fs::path out(a.out);
  fs::create_directories(out);

  Rng eval_rng = Rng::substream(a.seed, 900);
  const auto ev = engine::evaluate(ck.agents, ds, split, k, a.episodes, eval_rng);
  json acc;
  acc["split"] = world::to_string(split);
  acc["episodes"] = a.episodes;
  acc["distractors"] = k;
  acc["accuracy"] = ev.accuracy;
  const std::string acc_path = (out / ("eval_" + world::to_string(split) + ".json")).string();
  std::ofstream(acc_path) << acc.dump(2) << "\n";
  std::cout << "accuracy[" << world::to_string(split) << "] = " << ev.accuracy << " (" << acc_path
            << ")\n";

  if (a.toposim) {
    std::set<std::string> seen;
    std::vector<std::vector<double>> inputs;
    std::vector<std::vector<int>> messages;
    std::ofstream msg_out(out / "messages.jsonl");
    for (const auto& it : ds.items) {
      if (it.split != split) continue;
      if (!seen.insert(ds.item_key(it)).second) continue;
      inputs.push_back(metrics::flatten_input(ds, it, ck.config.repr));
      messages.push_back(engine::speak(ck.agents, ds, it));
      json line;
      line["id"] = it.id;
      line["message"] = messages.back();
      msg_out << line.dump() << "\n";
    }
    const std::size_t budget = a.pairs == "full"
                                   ? inputs.size()
                                   : static_cast<std::size_t>(std::stoul(a.pairs));
    Rng ts_rng = Rng::substream(a.seed, 901);
    const auto report = metrics::topographic_similarity_sampled(inputs, messages, budget, ts_rng);
    std::ofstream(out / "toposim.json") << metrics::toposim_to_json(report) << "\n";
    std::cout << "toposim = " << report.toposim << " over " << report.num_pairs << " pairs\n";
  }

  if (a.robustness) {
    const auto report = metrics::robustness_sweep(ck.agents, ds, ev.records, a.position);
    std::ofstream(out / "robustness.json") << metrics::robustness_to_json(report) << "\n";
    metrics::robustness_to_csv(report, (out / "robustness.csv").string());
    std::cout << "robustness sweep at position " << a.position << ": " << report.groups.size()
              << " symbol groups\n";
  }
  return 0;
}

struct ReportArgs {
  std::vector<std::string> run_dirs;
  std::string out = "report.csv";
};

int cmd_report(const ReportArgs& a) {
  struct Row {
    std::vector<double> acc, ood, ts;
    long warnings = 0;
  };
  std::map<std::string, Row> rows;
  long warnings = 0;

  for (const std::string& dir : a.run_dirs) {
    const fs::path d(dir);
    const fs::path sidecar = d / "checkpoint.bin.json";
    if (!fs::exists(sidecar)) {
      std::cerr << "warning: " << dir << " has no checkpoint sidecar, skipped\n";
      ++warnings;
      continue;
    }
    json side;
    std::ifstream(sidecar) >> side;
    const engine::TrainConfig cfg = engine::config_from_json(side.at("config").dump());
    std::ostringstream fp;
    fp << world::to_string(cfg.game) << "-" << agents::to_string(cfg.repr) << "-K"
       << cfg.distractors << "-V" << cfg.vocab << "-L" << cfg.msg_len << "-layers"
       << cfg.num_layers << "-hidden" << cfg.hidden << "-lr" << cfg.lr;
    Row& row = rows[fp.str()];

    auto read_metric = [&](const fs::path& file, const char* key, std::vector<double>& dst) {
      if (!fs::exists(file)) {
        ++row.warnings;
        ++warnings;
        return;
      }
      json j;
      std::ifstream(file) >> j;
      dst.push_back(j.at(key).get<double>());
    };
    read_metric(d / "eval_test.json", "accuracy", row.acc);
    read_metric(d / "eval_ood.json", "accuracy", row.ood);
    read_metric(d / "toposim.json", "toposim", row.ts);
  }

  auto mean_std = [](const std::vector<double>& xs) {
    if (xs.empty()) return std::make_pair(std::string("null"), std::string("null"));
    double m = 0;
    for (double x : xs) m += x;
    m /= static_cast<double>(xs.size());
    double v = 0;
    for (double x : xs) v += (x - m) * (x - m);
    v = xs.size() > 1 ? v / static_cast<double>(xs.size() - 1) : 0.0;
    char b1[64], b2[64];
    std::snprintf(b1, sizeof(b1), "%.6f", m);
    std::snprintf(b2, sizeof(b2), "%.6f", std::sqrt(v));
    return std::make_pair(std::string(b1), std::string(b2));
  };

  std::ofstream out(a.out);
  if (!out) throw std::runtime_error("cannot write " + a.out);
  out << "config,runs,test_acc_mean,test_acc_std,ood_acc_mean,ood_acc_std,toposim_mean,"
         "toposim_std,warnings\n";
  for (const auto& [fp, row] : rows) {
    const auto acc = mean_std(row.acc);
    const auto ood = mean_std(row.ood);
    const auto ts = mean_std(row.ts);
    const std::size_t n = std::max({row.acc.size(), row.ood.size(), row.ts.size()});
    out << fp << "," << n << "," << acc.first << "," << acc.second << "," << ood.first << ","
        << ood.second << "," << ts.first << "," << ts.second << "," << row.warnings << "\n";
  }
  std::cout << "wrote " << rows.size() << " aggregate rows to " << a.out;
  if (warnings > 0) std::cout << " (" << warnings << " warnings)";
  std::cout << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"emergent-communication lab for graph referential games"};
  app.require_subcommand(1);
  // flat key=value config; keys live under a [subcommand] section or use the
  // dotted form (train.lr=0.001); flags override file values
  app.set_config("--config", "", "config file (given before the subcommand)");

  GenerateArgs g;
  CLI::App* gen = app.add_subcommand("generate", "generate a dataset file");
  gen->add_option("--game", g.game, "g1|g2")->capture_default_str();
  gen->add_option("--dims", g.dims, "game-1 perceptual dimensions, e.g. 10,6,8")
      ->delimiter(',')
      ->capture_default_str();
  gen->add_option("--nodes", g.nodes, "game-2 node count")->capture_default_str();
  gen->add_option("--train", g.train)->capture_default_str();
  gen->add_option("--valid", g.valid)->capture_default_str();
  gen->add_option("--test", g.test)->capture_default_str();
  gen->add_option("--ood", g.ood, "out-of-domain item count")->capture_default_str();
  gen->add_option("--ood-fraction", g.ood_fraction, "game-1 holdout fraction of the universe")
      ->capture_default_str();
  gen->add_option("--seed", g.seed)->capture_default_str();
  gen->add_option("--out", g.out)->capture_default_str();

  TrainArgs t;
  CLI::App* tr = app.add_subcommand("train", "train a speaker/listener pair");
  tr->add_option("--data", t.data, "dataset file from `generate`")->required();
  tr->add_option("--repr", t.repr, "bow|seq|graph")->capture_default_str();
  tr->add_option("--graph-layer", t.graph_layer, "gcn|sage")->capture_default_str();
  tr->add_option("--aggregator", t.aggregator, "sage aggregator: mean|pool|gcn")
      ->capture_default_str();
  tr->add_option("--pooling", t.pooling, "graph pooling: sum|mean|max")->capture_default_str();
  tr->add_option("--layers", t.cfg.num_layers)->capture_default_str();
  tr->add_option("--hidden", t.cfg.hidden)->capture_default_str();
  tr->add_option("--embed", t.cfg.embed)->capture_default_str();
  tr->add_option("--msg-embed", t.cfg.msg_embed)->capture_default_str();
  tr->add_option("--distractors", t.cfg.distractors)->capture_default_str();
  tr->add_option("--vocab", t.cfg.vocab)->capture_default_str();
  tr->add_option("--msg-len", t.cfg.msg_len)->capture_default_str();
  tr->add_option("--lr", t.cfg.lr)->capture_default_str();
  tr->add_option("--temperature", t.cfg.temperature)->capture_default_str();
  tr->add_option("--batch", t.cfg.batch)->capture_default_str();
  tr->add_option("--episodes", t.cfg.max_episodes)->capture_default_str();
  tr->add_option("--eval-every", t.cfg.eval_every)->capture_default_str();
  tr->add_option("--eval-episodes", t.cfg.eval_episodes)->capture_default_str();
  tr->add_option("--patience", t.cfg.patience)->capture_default_str();
  tr->add_option("--seed", t.cfg.seed)->capture_default_str();
  tr->add_option("--out", t.out, "runs root (default $EMC_OUT_ROOT or ./runs)")
      ->capture_default_str();
  tr->add_flag("--strict-grid", t.strict_grid, "reject values outside the experiment grid");
  tr->add_option("--sweep-distractors", t.sweep_distractors, "comma list, one run each")
      ->delimiter(',');
  tr->add_option("--sweep-seeds", t.sweep_seeds, "comma list, one run each")->delimiter(',');
  tr->add_option("--sweep-repr", t.sweep_repr, "comma list, one run each")->delimiter(',');
  tr->add_option("--jobs", t.jobs, "parallel runs for sweeps")->capture_default_str();

  EvalArgs e;
  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ev->add_option("--checkpoint", e.checkpoint)->required();
  ev->add_option("--data", e.data)->required();
  ev->add_option("--split", e.split, "train|valid|test|ood")->capture_default_str();
  ev->add_flag("--ood", e.ood, "shorthand for --split ood");
  ev->add_option("--episodes", e.episodes)->capture_default_str();
  ev->add_option("--distractors", e.distractors, "defaults to the training value");
  ev->add_option("--seed", e.seed)->capture_default_str();
  ev->add_flag("--toposim", e.toposim, "compute topographic similarity");
  ev->add_option("--pairs", e.pairs, "item budget for toposim, or 'full'")->capture_default_str();
  ev->add_flag("--robustness", e.robustness, "symbol substitution sweep");
  ev->add_option("--position", e.position, "message position to distort")->capture_default_str();
  ev->add_option("--out", e.out, "output directory")->capture_default_str();

  ReportArgs r;
  CLI::App* re = app.add_subcommand("report", "aggregate run directories into a CSV");
  re->add_option("dirs", r.run_dirs, "run directories")->required();
  re->add_option("--out", r.out)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_generate(g);
    if (tr->parsed()) return cmd_train(t);
    if (ev->parsed()) return cmd_eval(e);
    if (re->parsed()) return cmd_report(r);
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  }
  return 0;
}
