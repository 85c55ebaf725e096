#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "emc/engine.hpp"
#include "emc/world.hpp"

namespace emc::metrics {

// Raised when a correlation is undefined (zero variance on either side);
// callers surface it instead of silently reporting zero.
struct degenerate_correlation_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Minimum edit count (insert/delete/substitute at unit cost).
int levenshtein(const std::vector<int>& a, const std::vector<int>& b);

// dot(u, v) / (|u| |v|); a zero-vector operand yields 0.
double cosine_similarity(const std::vector<double>& u, const std::vector<double>& v);

// Ties get the mean of the ranks they span.
std::vector<double> average_ranks(const std::vector<double>& xs);

// Pearson correlation of average-ranked values.
double spearman(const std::vector<double>& xs, const std::vector<double>& ys);

struct TopoReport {
  double toposim = 0.0;
  long num_pairs = 0;
  std::string input_metric = "cosine";
  std::string message_metric = "levenshtein";
};

// Negative Spearman correlation between pairwise input similarities and
// pairwise message distances over all pairs of the given lists. Positive
// values mean similar inputs get similar messages.
TopoReport topographic_similarity(const std::vector<std::vector<double>>& inputs,
                                  const std::vector<std::vector<int>>& messages);

// Same, but caps the item count first (all-pairs cost is quadratic).
TopoReport topographic_similarity_sampled(const std::vector<std::vector<double>>& inputs,
                                          const std::vector<std::vector<int>>& messages,
                                          std::size_t max_items, Rng& rng);

// Input vector for the similarity side: bow as-is, sequences as concatenated
// token one-hots, graphs as concatenated node feature rows.
std::vector<double> flatten_input(const world::Dataset& ds, const world::Item& it,
                                  agents::Repr kind);

struct RobustnessGroup {
  int symbol = 0;                        // original symbol at the swept position
  long n = 0;                            // episodes in this group
  double original_accuracy = 0.0;        // accuracy with the undistorted message
  std::vector<double> per_replacement;   // accuracy after substituting each symbol
};

struct RobustnessReport {
  int position = 0;
  int vocab = 0;
  std::vector<RobustnessGroup> groups;
};

// Re-runs the listener on recorded episodes with every substitution of the
// symbol at `position`, grouped by the original symbol value.
RobustnessReport robustness_sweep(const engine::AgentPair& agents_pair, const world::Dataset& ds,
                                  const std::vector<engine::EvalRecord>& records, int position);

std::string toposim_to_json(const TopoReport& r);
std::string robustness_to_json(const RobustnessReport& r);
// rows: original_symbol,replacement_symbol,accuracy,n
void robustness_to_csv(const RobustnessReport& r, const std::string& path);

}  // namespace emc::metrics
