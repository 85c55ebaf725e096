#include "emc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include <json.hpp>

namespace emc::metrics {

using nlohmann::json;

int levenshtein(const std::vector<int>& a, const std::vector<int>& b) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<int> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= m; ++j) {
      const int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

double cosine_similarity(const std::vector<double>& u, const std::vector<double>& v) {
  if (u.size() != v.size()) {
    throw std::runtime_error("cosine: vector lengths differ (" + std::to_string(u.size()) +
                             " vs " + std::to_string(v.size()) + ")");
  }
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  if (nu == 0.0 || nv == 0.0) return 0.0;
  return dot / (std::sqrt(nu) * std::sqrt(nv));
}

std::vector<double> average_ranks(const std::vector<double>& xs) {
  const std::size_t n = xs.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && xs[order[j + 1]] == xs[order[i]]) ++j;
    const double mean_rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = mean_rank;
    i = j + 1;
  }
  return ranks;
}

double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size()) throw std::runtime_error("spearman: list lengths differ");
  if (xs.size() < 2) throw std::runtime_error("spearman: need at least two observations");
  const std::vector<double> rx = average_ranks(xs);
  const std::vector<double> ry = average_ranks(ys);
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = rx[i] - mx, dy = ry[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) {
    throw degenerate_correlation_error("spearman undefined: zero variance in " +
                                       std::string(sxx == 0.0 ? "first" : "second") + " list");
  }
  return sxy / std::sqrt(sxx * syy);
}

TopoReport topographic_similarity(const std::vector<std::vector<double>>& inputs,
                                  const std::vector<std::vector<int>>& messages) {
  if (inputs.size() != messages.size()) {
    throw std::runtime_error("toposim: input and message counts differ");
  }
  if (inputs.size() < 3) throw std::runtime_error("toposim: need at least three samples");
  std::vector<double> sims, dists;
  const std::size_t n = inputs.size();
  sims.reserve(n * (n - 1) / 2);
  dists.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      sims.push_back(cosine_similarity(inputs[i], inputs[j]));
      dists.push_back(static_cast<double>(levenshtein(messages[i], messages[j])));
    }
  }
  TopoReport report;
  report.num_pairs = static_cast<long>(sims.size());
  report.toposim = -spearman(sims, dists);
  return report;
}

TopoReport topographic_similarity_sampled(const std::vector<std::vector<double>>& inputs,
                                          const std::vector<std::vector<int>>& messages,
                                          std::size_t max_items, Rng& rng) {
  if (inputs.size() <= max_items) return topographic_similarity(inputs, messages);
  std::vector<std::size_t> order(inputs.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  std::vector<std::vector<double>> in;
  std::vector<std::vector<int>> msg;
  for (std::size_t k = 0; k < max_items; ++k) {
    in.push_back(inputs[order[k]]);
    msg.push_back(messages[order[k]]);
  }
  return topographic_similarity(in, msg);
}

std::vector<double> flatten_input(const world::Dataset& ds, const world::Item& it,
                                  agents::Repr kind) {
  switch (kind) {
    case agents::Repr::bow:
      return world::item_bow(ds, it);
    case agents::Repr::seq: {
      const std::vector<int> tokens = world::item_sequence(ds, it);
      const int width = ds.game == world::Game::g1 ? ds.spec.token_count() : ds.g2_num_nodes;
      std::vector<double> out(tokens.size() * static_cast<std::size_t>(width), 0.0);
      for (std::size_t i = 0; i < tokens.size(); ++i) {
        out[i * static_cast<std::size_t>(width) + static_cast<std::size_t>(tokens[i])] = 1.0;
      }
      return out;
    }
    case agents::Repr::graph: {
      const world::GraphSample g = world::item_graph(ds, it);
      return g.node_features.data;  // rows in node order
    }
  }
  throw std::runtime_error("unknown representation kind");
}

RobustnessReport robustness_sweep(const engine::AgentPair& agents_pair, const world::Dataset& ds,
                                  const std::vector<engine::EvalRecord>& records, int position) {
  const int vocab = agents_pair.cfg.vocab;
  RobustnessReport report;
  report.position = position;
  report.vocab = vocab;

  std::map<int, std::vector<const engine::EvalRecord*>> groups;
  for (const engine::EvalRecord& r : records) {
    if (position < 0 || position >= static_cast<int>(r.message.size())) {
      throw std::runtime_error("robustness: position " + std::to_string(position) +
                               " outside message of length " + std::to_string(r.message.size()));
    }
    groups[r.message[static_cast<std::size_t>(position)]].push_back(&r);
  }

  for (const auto& [symbol, members] : groups) {
    RobustnessGroup g;
    g.symbol = symbol;
    g.n = static_cast<long>(members.size());
    long orig_correct = 0;
    for (const auto* r : members) {
      if (r->chosen == r->target_index) ++orig_correct;
    }
    g.original_accuracy = static_cast<double>(orig_correct) / static_cast<double>(members.size());
    g.per_replacement.assign(static_cast<std::size_t>(vocab), 0.0);
    for (int repl = 0; repl < vocab; ++repl) {
      long correct = 0;
      for (const auto* r : members) {
        std::vector<int> symbols = r->message;
        symbols[static_cast<std::size_t>(position)] = repl;
        const int chosen = engine::listener_choose(agents_pair, ds, r->candidate_items, symbols);
        if (chosen == r->target_index) ++correct;
      }
      g.per_replacement[static_cast<std::size_t>(repl)] =
          static_cast<double>(correct) / static_cast<double>(members.size());
    }
    report.groups.push_back(std::move(g));
  }
  return report;
}

std::string toposim_to_json(const TopoReport& r) {
  json j;
  j["toposim"] = r.toposim;
  j["num_pairs"] = r.num_pairs;
  j["input_metric"] = r.input_metric;
  j["message_metric"] = r.message_metric;
  return j.dump(2);
}

std::string robustness_to_json(const RobustnessReport& r) {
  json j;
  j["position"] = r.position;
  j["vocab"] = r.vocab;
  json groups = json::array();
  for (const RobustnessGroup& g : r.groups) {
    json jg;
    jg["symbol"] = g.symbol;
    jg["n"] = g.n;
    jg["original_accuracy"] = g.original_accuracy;
    jg["per_replacement"] = g.per_replacement;
    groups.push_back(jg);
  }
  j["groups"] = groups;
  return j.dump(2);
}

void robustness_to_csv(const RobustnessReport& r, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "original_symbol,replacement_symbol,accuracy,n\n";
  char buf[128];
  for (const RobustnessGroup& g : r.groups) {
    for (int repl = 0; repl < r.vocab; ++repl) {
      std::snprintf(buf, sizeof(buf), "%d,%d,%.6f,%ld\n", g.symbol, repl,
                    g.per_replacement[static_cast<std::size_t>(repl)], g.n);
      out << buf;
    }
  }
}

}  // namespace emc::metrics
