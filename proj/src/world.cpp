#include "emc/world.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include <json.hpp>

namespace emc::world {

using nlohmann::json;

// --- PerceptualSpec ----------------------------------------------------------

void PerceptualSpec::validate() const {
  if (dims.empty()) throw std::runtime_error("perceptual spec: needs at least one property");
  for (int p : dims) {
    if (p < 2) throw std::runtime_error("perceptual spec: every property needs >= 2 types");
  }
}

int PerceptualSpec::max_types() const {
  int m = 0;
  for (int p : dims) m = std::max(m, p);
  return m;
}

int PerceptualSpec::token_count() const {
  int t = 0;
  for (int p : dims) t += p;
  return t;
}

long long PerceptualSpec::universe_size() const {
  long long u = 1;
  for (int p : dims) u *= p;
  return u;
}

int PerceptualSpec::token_offset(int property) const {
  int off = 0;
  for (int i = 0; i < property; ++i) off += dims[static_cast<std::size_t>(i)];
  return off;
}

// --- graph helpers -----------------------------------------------------------

bool GraphSample::has_edge(int a, int b) const {
  const auto e = std::minmax(a, b);
  return std::find(edges.begin(), edges.end(), std::make_pair(e.first, e.second)) != edges.end();
}

void add_edge(GraphSample& g, int a, int b) {
  if (a < 0 || b < 0 || a >= g.num_nodes || b >= g.num_nodes) {
    throw std::runtime_error("add_edge: endpoint out of range");
  }
  const auto e = std::minmax(a, b);
  const auto canon = std::make_pair(e.first, e.second);
  if (std::find(g.edges.begin(), g.edges.end(), canon) == g.edges.end()) {
    g.edges.push_back(canon);
  }
}

std::vector<int> node_degrees(int num_nodes, const std::vector<std::pair<int, int>>& edges) {
  std::vector<int> deg(static_cast<std::size_t>(num_nodes), 0);
  for (const auto& [a, b] : edges) {
    if (a == b) continue;  // self-loops are a message-passing device, not a feature
    ++deg[static_cast<std::size_t>(a)];
    ++deg[static_cast<std::size_t>(b)];
  }
  return deg;
}

// --- Game-1 ------------------------------------------------------------------

PerceptualObject generate_game1_object(const PerceptualSpec& spec, Rng& rng) {
  spec.validate();
  PerceptualObject obj;
  obj.values.reserve(spec.dims.size());
  for (int p : spec.dims) obj.values.push_back(rng.uniform_int(p));
  return obj;
}

static void check_object(const PerceptualObject& obj, const PerceptualSpec& spec) {
  if (obj.values.size() != spec.dims.size()) {
    throw std::runtime_error("object has " + std::to_string(obj.values.size()) +
                             " values, spec has " + std::to_string(spec.dims.size()) +
                             " properties");
  }
  for (std::size_t i = 0; i < obj.values.size(); ++i) {
    if (obj.values[i] < 0 || obj.values[i] >= spec.dims[i]) {
      throw std::runtime_error("object value out of range at property " + std::to_string(i));
    }
  }
}

GraphSample object_to_tree(const PerceptualObject& obj, const PerceptualSpec& spec) {
  check_object(obj, spec);
  const int n = spec.num_properties();
  const int width = (n + 1) + spec.max_types();
  GraphSample g;
  g.num_nodes = n + 1;
  g.node_features = ad::Tensor({n + 1, width});
  for (int i = 0; i < n; ++i) {
    add_edge(g, i, n);
    g.node_features.at(i, i) = 1.0;
    g.node_features.at(i, (n + 1) + obj.values[static_cast<std::size_t>(i)]) = 1.0;
  }
  g.node_features.at(n, n) = 1.0;  // central role slot; type slots stay zero
  return g;
}

std::vector<int> object_to_sequence(const PerceptualObject& obj, const PerceptualSpec& spec) {
  check_object(obj, spec);
  std::vector<int> tokens;
  tokens.reserve(obj.values.size());
  for (int i = 0; i < spec.num_properties(); ++i) {
    tokens.push_back(spec.token_offset(i) + obj.values[static_cast<std::size_t>(i)]);
  }
  return tokens;
}

std::vector<double> object_to_bow(const PerceptualObject& obj, const PerceptualSpec& spec) {
  std::vector<double> v(static_cast<std::size_t>(spec.token_count()), 0.0);
  for (int tok : object_to_sequence(obj, spec)) v[static_cast<std::size_t>(tok)] = 1.0;
  return v;
}

// --- Game-2 ------------------------------------------------------------------

static ad::Tensor degree_onehots(int num_nodes, const std::vector<std::pair<int, int>>& edges) {
  ad::Tensor f({num_nodes, num_nodes});
  const std::vector<int> deg = node_degrees(num_nodes, edges);
  for (int i = 0; i < num_nodes; ++i) f.at(i, deg[static_cast<std::size_t>(i)]) = 1.0;
  return f;
}

GraphSample generate_game2_graph(int num_nodes, double edge_probability, Rng& rng) {
  if (num_nodes < 2) throw std::runtime_error("game2 graph needs >= 2 nodes");
  if (edge_probability <= 0.0 || edge_probability >= 1.0) {
    throw std::runtime_error("edge probability must lie in (0, 1)");
  }
  GraphSample g;
  g.num_nodes = num_nodes;
  for (int i = 0; i < num_nodes; ++i) {
    for (int j = i + 1; j < num_nodes; ++j) {
      if (rng.uniform() < edge_probability) g.edges.emplace_back(i, j);
    }
  }
  for (int i = 0; i < num_nodes; ++i) g.edges.emplace_back(i, i);
  g.node_features = degree_onehots(num_nodes, g.edges);
  return g;
}

std::vector<int> graph_to_sequence(const GraphSample& g) {
  return node_degrees(g.num_nodes, g.edges);
}

std::vector<double> graph_to_bow(const GraphSample& g) {
  std::vector<double> hist(static_cast<std::size_t>(g.num_nodes), 0.0);
  for (int d : node_degrees(g.num_nodes, g.edges)) hist[static_cast<std::size_t>(d)] += 1.0;
  return hist;
}

// --- datasets ----------------------------------------------------------------

std::string to_string(Game g) { return g == Game::g1 ? "g1" : "g2"; }

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
    case Split::ood: return "ood";
  }
  return "?";
}

Game game_from_string(const std::string& s) {
  if (s == "g1") return Game::g1;
  if (s == "g2") return Game::g2;
  throw std::runtime_error("unknown game '" + s + "'");
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "valid") return Split::valid;
  if (s == "test") return Split::test;
  if (s == "ood") return Split::ood;
  throw std::runtime_error("unknown split '" + s + "'");
}

std::vector<int> Dataset::indices_of(Split s) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].split == s) out.push_back(static_cast<int>(i));
  }
  return out;
}

std::string Dataset::item_key(const Item& it) const {
  std::ostringstream os;
  if (game == Game::g1) {
    for (int v : it.object) os << v << ",";
  } else {
    for (const auto& [a, b] : it.edges) os << a << "-" << b << ",";
  }
  return os.str();
}

std::vector<Split> make_splits(std::size_t count, const std::array<double, 3>& fractions,
                               Rng& rng) {
  double total = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(total - 1.0) > 1e-9) {
    throw std::runtime_error("split fractions must sum to 1");
  }
  // largest-remainder apportionment so counts always add up to `count`
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (int s = 0; s < 3; ++s) {
    const double exact = fractions[static_cast<std::size_t>(s)] * static_cast<double>(count);
    counts[static_cast<std::size_t>(s)] = static_cast<std::size_t>(exact);
    rem[static_cast<std::size_t>(s)] = exact - static_cast<double>(counts[static_cast<std::size_t>(s)]);
    assigned += counts[static_cast<std::size_t>(s)];
  }
  while (assigned < count) {
    int best = 0;
    for (int s = 1; s < 3; ++s) {
      if (rem[static_cast<std::size_t>(s)] > rem[static_cast<std::size_t>(best)]) best = s;
    }
    ++counts[static_cast<std::size_t>(best)];
    rem[static_cast<std::size_t>(best)] = -1.0;
    ++assigned;
  }
  std::vector<int> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = static_cast<int>(i);
  rng.shuffle(order);
  std::vector<Split> labels(count, Split::train);
  std::size_t pos = 0;
  const Split kinds[3] = {Split::train, Split::valid, Split::test};
  for (int s = 0; s < 3; ++s) {
    for (std::size_t k = 0; k < counts[static_cast<std::size_t>(s)]; ++k, ++pos) {
      labels[static_cast<std::size_t>(order[pos])] = kinds[s];
    }
  }
  return labels;
}

void make_ood_split(const std::vector<PerceptualObject>& universe, double ood_fraction, Rng& rng,
                    std::vector<PerceptualObject>& in_domain, std::vector<PerceptualObject>& ood) {
  if (ood_fraction <= 0.0 || ood_fraction >= 1.0) {
    throw std::runtime_error("ood fraction must lie in (0, 1)");
  }
  if (universe.empty()) throw std::runtime_error("ood split: empty universe");
  const std::size_t n_props = universe[0].values.size();
  std::size_t holdout = static_cast<std::size_t>(ood_fraction * static_cast<double>(universe.size()));
  if (holdout == 0) holdout = 1;
  if (holdout >= universe.size()) throw std::runtime_error("ood split: holdout swallows the universe");

  const int max_retries = 200;
  for (int attempt = 0; attempt < max_retries; ++attempt) {
    std::vector<int> order(universe.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    rng.shuffle(order);

    std::vector<PerceptualObject> cand_ood, cand_in;
    for (std::size_t i = 0; i < order.size(); ++i) {
      const PerceptualObject& o = universe[static_cast<std::size_t>(order[i])];
      if (i < holdout) {
        cand_ood.push_back(o);
      } else {
        cand_in.push_back(o);
      }
    }
    // every property value needs an in-domain witness
    bool covered = true;
    for (std::size_t p = 0; p < n_props && covered; ++p) {
      std::set<int> seen;
      for (const auto& o : cand_in) seen.insert(o.values[p]);
      int needed = 0;
      for (const auto& o : universe) needed = std::max(needed, o.values[p] + 1);
      if (static_cast<int>(seen.size()) < needed) covered = false;
    }
    if (covered) {
      in_domain = std::move(cand_in);
      ood = std::move(cand_ood);
      return;
    }
  }
  throw std::runtime_error("ood split: could not keep every property value in-domain after " +
                           std::to_string(max_retries) + " retries");
}

static std::vector<PerceptualObject> enumerate_universe(const PerceptualSpec& spec) {
  spec.validate();
  const long long size = spec.universe_size();
  if (size > 10'000'000LL) {
    throw std::runtime_error("game1 universe too large to enumerate: " + std::to_string(size));
  }
  std::vector<PerceptualObject> all;
  all.reserve(static_cast<std::size_t>(size));
  PerceptualObject cur;
  cur.values.assign(spec.dims.size(), 0);
  while (true) {
    all.push_back(cur);
    int i = spec.num_properties() - 1;
    for (; i >= 0; --i) {
      if (++cur.values[static_cast<std::size_t>(i)] < spec.dims[static_cast<std::size_t>(i)]) break;
      cur.values[static_cast<std::size_t>(i)] = 0;
    }
    if (i < 0) break;
  }
  return all;
}

// Draws `want` items from a pool: a shuffled prefix when the pool is big
// enough, i.i.d. draws (duplicates allowed) when it is not.
static std::vector<int> sample_pool(std::size_t pool_size, long want, Rng& rng) {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(want));
  if (static_cast<long>(pool_size) >= want) {
    std::vector<int> order(pool_size);
    for (std::size_t i = 0; i < pool_size; ++i) order[i] = static_cast<int>(i);
    rng.shuffle(order);
    out.assign(order.begin(), order.begin() + want);
  } else {
    for (long i = 0; i < want; ++i) out.push_back(rng.uniform_int(static_cast<int>(pool_size)));
  }
  return out;
}

Dataset build_game1_dataset(const PerceptualSpec& spec, const DatasetSizes& sizes,
                            double ood_fraction, std::uint64_t seed) {
  Dataset ds;
  ds.game = Game::g1;
  ds.spec = spec;
  ds.seed = seed;

  std::vector<PerceptualObject> universe = enumerate_universe(spec);
  std::vector<PerceptualObject> in_domain, ood_pool;
  if (sizes.ood > 0) {
    Rng ood_rng = Rng::substream(seed, 1);
    make_ood_split(universe, ood_fraction > 0.0 ? ood_fraction : 0.2, ood_rng, in_domain, ood_pool);
  } else {
    in_domain = std::move(universe);
  }

  const double total = static_cast<double>(sizes.train + sizes.valid + sizes.test);
  if (total <= 0) throw std::runtime_error("dataset: no items requested");
  Rng split_rng = Rng::substream(seed, 2);
  const std::array<double, 3> fracs = {static_cast<double>(sizes.train) / total,
                                       static_cast<double>(sizes.valid) / total,
                                       static_cast<double>(sizes.test) / total};
  const std::vector<Split> labels = make_splits(in_domain.size(), fracs, split_rng);

  std::vector<std::vector<const PerceptualObject*>> pools(3);
  for (std::size_t i = 0; i < in_domain.size(); ++i) {
    pools[static_cast<std::size_t>(labels[i])].push_back(&in_domain[i]);
  }

  long id = 0;
  const Split kinds[3] = {Split::train, Split::valid, Split::test};
  const long wants[3] = {sizes.train, sizes.valid, sizes.test};
  for (int s = 0; s < 3; ++s) {
    if (wants[s] == 0) continue;
    if (pools[static_cast<std::size_t>(s)].empty()) {
      throw std::runtime_error("dataset: requested " + std::to_string(wants[s]) + " " +
                               to_string(kinds[s]) + " items but split pool is empty");
    }
    Rng draw_rng = Rng::substream(seed, 3 + static_cast<std::uint64_t>(s));
    for (int ix : sample_pool(pools[static_cast<std::size_t>(s)].size(), wants[s], draw_rng)) {
      Item it;
      it.id = id++;
      it.split = kinds[s];
      it.object = pools[static_cast<std::size_t>(s)][static_cast<std::size_t>(ix)]->values;
      ds.items.push_back(std::move(it));
    }
  }
  if (sizes.ood > 0) {
    Rng draw_rng = Rng::substream(seed, 6);
    for (int ix : sample_pool(ood_pool.size(), sizes.ood, draw_rng)) {
      Item it;
      it.id = id++;
      it.split = Split::ood;
      it.object = ood_pool[static_cast<std::size_t>(ix)].values;
      ds.items.push_back(std::move(it));
    }
  }
  return ds;
}

Dataset build_game2_dataset(int num_nodes, const DatasetSizes& sizes, std::uint64_t seed) {
  Dataset ds;
  ds.game = Game::g2;
  ds.g2_num_nodes = num_nodes;
  ds.seed = seed;

  Rng rng = Rng::substream(seed, 10);
  std::unordered_set<std::string> keys;
  auto draw_distinct = [&](double p) {
    const int max_attempts = 10000;
    for (int a = 0; a < max_attempts; ++a) {
      const double prob = p > 0.0 ? p : rng.uniform(0.1, 0.9);
      GraphSample g = generate_game2_graph(num_nodes, prob, rng);
      std::ostringstream os;
      for (const auto& [x, y] : g.edges) os << x << "-" << y << ",";
      if (keys.insert(os.str()).second) return g;
    }
    throw std::runtime_error("game2 dataset: could not draw a fresh graph (universe exhausted?)");
  };

  long id = 0;
  const Split kinds[4] = {Split::train, Split::valid, Split::test, Split::ood};
  const long wants[4] = {sizes.train, sizes.valid, sizes.test, sizes.ood};
  for (int s = 0; s < 4; ++s) {
    for (long i = 0; i < wants[s]; ++i) {
      GraphSample g = draw_distinct(0.0);
      Item it;
      it.id = id++;
      it.split = kinds[s];
      it.num_nodes = num_nodes;
      it.edges = std::move(g.edges);
      ds.items.push_back(std::move(it));
    }
  }

  // keep every degree value 0..n-1 witnessed in-domain
  auto missing_degree = [&]() {
    std::vector<bool> seen(static_cast<std::size_t>(num_nodes), false);
    for (const Item& it : ds.items) {
      if (it.split == Split::ood) continue;
      for (int d : node_degrees(it.num_nodes, it.edges)) seen[static_cast<std::size_t>(d)] = true;
    }
    for (int d = 0; d < num_nodes; ++d) {
      if (!seen[static_cast<std::size_t>(d)]) return d;
    }
    return -1;
  };

  std::vector<int> in_domain_ix;
  for (std::size_t i = 0; i < ds.items.size(); ++i) {
    if (ds.items[i].split != Split::ood) in_domain_ix.push_back(static_cast<int>(i));
  }
  if (in_domain_ix.empty() && sizes.ood > 0) return ds;

  const int max_fixups = 1000;
  int fixups = 0;
  for (int d = missing_degree(); d >= 0; d = missing_degree()) {
    if (++fixups > max_fixups) {
      throw std::runtime_error("game2 dataset: could not witness degree " + std::to_string(d) +
                               " in-domain after " + std::to_string(max_fixups) + " retries");
    }
    // replace a random in-domain item with a graph biased toward the gap
    const double p = std::min(0.98, std::max(0.02, static_cast<double>(d) / (num_nodes - 1)));
    GraphSample g = draw_distinct(p);
    Item& victim = ds.items[static_cast<std::size_t>(
        in_domain_ix[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(in_domain_ix.size())))])];
    victim.edges = std::move(g.edges);
    victim.num_nodes = num_nodes;
  }
  return ds;
}

GraphSample item_graph(const Dataset& ds, const Item& it) {
  if (ds.game == Game::g1) {
    return object_to_tree(PerceptualObject{it.object}, ds.spec);
  }
  GraphSample g;
  g.num_nodes = it.num_nodes;
  g.edges = it.edges;
  g.node_features = degree_onehots(it.num_nodes, it.edges);
  return g;
}

std::vector<int> item_sequence(const Dataset& ds, const Item& it) {
  if (ds.game == Game::g1) {
    return object_to_sequence(PerceptualObject{it.object}, ds.spec);
  }
  return node_degrees(it.num_nodes, it.edges);
}

std::vector<double> item_bow(const Dataset& ds, const Item& it) {
  if (ds.game == Game::g1) {
    return object_to_bow(PerceptualObject{it.object}, ds.spec);
  }
  std::vector<double> hist(static_cast<std::size_t>(it.num_nodes), 0.0);
  for (int d : node_degrees(it.num_nodes, it.edges)) hist[static_cast<std::size_t>(d)] += 1.0;
  return hist;
}

// --- persistence ---------------------------------------------------------------

void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write dataset file " + path);
  for (const Item& it : ds.items) {
    json line;
    line["id"] = it.id;
    line["game"] = to_string(ds.game);
    line["split"] = to_string(it.split);
    if (ds.game == Game::g1) {
      line["object"] = it.object;
      GraphSample g = object_to_tree(PerceptualObject{it.object}, ds.spec);
      line["num_nodes"] = g.num_nodes;
      json edges = json::array();
      for (const auto& [a, b] : g.edges) edges.push_back({a, b});
      line["edges"] = edges;
      line["features_kind"] = "g1-concat";
    } else {
      line["object"] = nullptr;
      line["num_nodes"] = it.num_nodes;
      json edges = json::array();
      for (const auto& [a, b] : it.edges) edges.push_back({a, b});
      line["edges"] = edges;
      line["features_kind"] = "degree-onehot";
    }
    out << line.dump() << "\n";
  }
  json manifest;
  manifest["game"] = to_string(ds.game);
  manifest["seed"] = ds.seed;
  if (ds.game == Game::g1) {
    manifest["dims"] = ds.spec.dims;
  } else {
    manifest["num_nodes"] = ds.g2_num_nodes;
  }
  json counts;
  for (Split s : {Split::train, Split::valid, Split::test, Split::ood}) {
    counts[to_string(s)] = ds.indices_of(s).size();
  }
  manifest["counts"] = counts;
  std::ofstream mout(path + ".manifest.json", std::ios::binary);
  if (!mout) throw std::runtime_error("cannot write dataset manifest for " + path);
  mout << manifest.dump(2) << "\n";
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset file " + path);
  Dataset ds;
  bool first = true;
  std::string raw;
  while (std::getline(in, raw)) {
    if (raw.empty()) continue;
    const json line = json::parse(raw);
    if (first) {
      ds.game = game_from_string(line.at("game").get<std::string>());
      first = false;
    }
    Item it;
    it.id = line.at("id").get<long>();
    it.split = split_from_string(line.at("split").get<std::string>());
    if (ds.game == Game::g1) {
      it.object = line.at("object").get<std::vector<int>>();
    } else {
      it.num_nodes = line.at("num_nodes").get<int>();
      for (const auto& e : line.at("edges")) {
        it.edges.emplace_back(e.at(0).get<int>(), e.at(1).get<int>());
      }
    }
    ds.items.push_back(std::move(it));
  }
  if (ds.items.empty()) throw std::runtime_error("dataset file " + path + " is empty");

  std::ifstream min(path + ".manifest.json", std::ios::binary);
  if (min) {
    json manifest;
    min >> manifest;
    if (manifest.contains("seed")) ds.seed = manifest["seed"].get<std::uint64_t>();
    if (ds.game == Game::g1 && manifest.contains("dims")) {
      ds.spec.dims = manifest["dims"].get<std::vector<int>>();
    }
    if (ds.game == Game::g2 && manifest.contains("num_nodes")) {
      ds.g2_num_nodes = manifest["num_nodes"].get<int>();
    }
  }
  if (ds.game == Game::g1 && ds.spec.dims.empty()) {
    // fall back to per-property maxima seen in the file
    std::vector<int> dims;
    for (const Item& it : ds.items) {
      if (dims.size() < it.object.size()) dims.resize(it.object.size(), 0);
      for (std::size_t i = 0; i < it.object.size(); ++i) {
        dims[i] = std::max(dims[i], it.object[i] + 1);
      }
    }
    ds.spec.dims = dims;
  }
  if (ds.game == Game::g2 && ds.g2_num_nodes == 0) ds.g2_num_nodes = ds.items.front().num_nodes;
  return ds;
}

}  // namespace emc::world
