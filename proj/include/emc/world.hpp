#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "emc/rng.hpp"
#include "emc/tensor.hpp"

namespace emc::world {

// Game-1 object space: dims[i] is the number of possible types of property i.
struct PerceptualSpec {
  std::vector<int> dims;

  int num_properties() const { return static_cast<int>(dims.size()); }
  int max_types() const;
  // width of the derived token universe (one token per property/value pair)
  int token_count() const;
  long long universe_size() const;
  int token_offset(int property) const;
  void validate() const;
};

struct PerceptualObject {
  std::vector<int> values;
};

// Undirected graph with canonical (min,max) edges, self-pairs allowed, plus a
// dense per-node feature matrix.
struct GraphSample {
  int num_nodes = 0;
  std::vector<std::pair<int, int>> edges;
  ad::Tensor node_features;

  bool has_edge(int a, int b) const;
};

void add_edge(GraphSample& g, int a, int b);
// Degree counts non-self-loop incident edges.
std::vector<int> node_degrees(int num_nodes, const std::vector<std::pair<int, int>>& edges);

// --- Game-1 derivations -----------------------------------------------------

PerceptualObject generate_game1_object(const PerceptualSpec& spec, Rng& rng);

// Star graph: one node per property plus a central node (index n). Features
// are property one-hot (width n+1, slot n reserved for the central role)
// concatenated with a type one-hot of width max(dims); the central node's
// type slots stay zero.
GraphSample object_to_tree(const PerceptualObject& obj, const PerceptualSpec& spec);

// Token for property i with value v is token_offset(i) + v.
std::vector<int> object_to_sequence(const PerceptualObject& obj, const PerceptualSpec& spec);

// Multi-hot of width token_count() with exactly n ones.
std::vector<double> object_to_bow(const PerceptualObject& obj, const PerceptualSpec& spec);

// --- Game-2 derivations -----------------------------------------------------

// Erdos-Renyi draw over unordered pairs, then a self-loop on every node.
// Node features are degree one-hots of width num_nodes.
GraphSample generate_game2_graph(int num_nodes, double edge_probability, Rng& rng);

std::vector<int> graph_to_sequence(const GraphSample& g);
std::vector<double> graph_to_bow(const GraphSample& g);

// --- Datasets ----------------------------------------------------------------

enum class Game { g1, g2 };
enum class Split { train, valid, test, ood };

std::string to_string(Game g);
std::string to_string(Split s);
Game game_from_string(const std::string& s);
Split split_from_string(const std::string& s);

struct Item {
  long id = 0;
  Split split = Split::train;
  std::vector<int> object;                  // Game-1 only
  int num_nodes = 0;                        // Game-2 only
  std::vector<std::pair<int, int>> edges;   // Game-2 only
};

struct Dataset {
  Game game = Game::g1;
  PerceptualSpec spec;       // Game-1
  int g2_num_nodes = 0;      // Game-2
  std::uint64_t seed = 0;
  std::vector<Item> items;

  std::vector<int> indices_of(Split s) const;
  // Content key for distinctness checks: object values or canonical edge list.
  std::string item_key(const Item& it) const;
};

// Disjoint random partition of `count` items into train/valid/test by
// fraction. Deterministic under a fixed rng state.
std::vector<Split> make_splits(std::size_t count, const std::array<double, 3>& fractions, Rng& rng);

// Game-1 OOD holdout: ood combinations are removed from the in-domain pool
// while every individual property value keeps at least one in-domain witness.
// Throws after bounded retries when coverage cannot be met.
void make_ood_split(const std::vector<PerceptualObject>& universe, double ood_fraction, Rng& rng,
                    std::vector<PerceptualObject>& in_domain, std::vector<PerceptualObject>& ood);

struct DatasetSizes {
  long train = 0;
  long valid = 0;
  long test = 0;
  long ood = 0;
};

Dataset build_game1_dataset(const PerceptualSpec& spec, const DatasetSizes& sizes,
                            double ood_fraction, std::uint64_t seed);
// Game-2 ood items are held out by exact edge set; every degree value must
// keep an in-domain witness.
Dataset build_game2_dataset(int num_nodes, const DatasetSizes& sizes, std::uint64_t seed);

// One representation triple per item, derived on demand.
GraphSample item_graph(const Dataset& ds, const Item& it);
std::vector<int> item_sequence(const Dataset& ds, const Item& it);
std::vector<double> item_bow(const Dataset& ds, const Item& it);

// JSON-lines dataset file plus a .manifest.json sidecar.
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace emc::world
