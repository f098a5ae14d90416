#ifndef PRICELAB_GAT_HPP_
#define PRICELAB_GAT_HPP_

#include <cstddef>
#include <span>
#include <vector>

#include "pricelab/graph.hpp"
#include "pricelab/nn.hpp"
#include "pricelab/rng.hpp"

namespace pricelab::nn {

// Attention neighborhoods for `blocks` independent copies of an item graph,
// stacked block-diagonally (one block per environment step in a batch).
// Node i's segment lists i itself first, followed by N(i).
struct AttentionGraph {
  std::size_t nodes_per_block = 0;
  std::size_t blocks = 0;
  std::vector<std::size_t> offsets;  // size num_nodes() + 1
  std::vector<std::size_t> source;   // neighbor node per edge (global index)
  std::vector<std::size_t> target;   // owning node per edge (global index)

  std::size_t num_nodes() const { return nodes_per_block * blocks; }
  std::size_t num_edges() const { return source.size(); }

  static AttentionGraph from_item_graph(const ItemGraph& graph,
                                        std::size_t blocks);
};

struct GatOptions {
  std::size_t in_dim = 64;
  std::size_t heads = 4;
  std::size_t head_dim = 16;
  double leaky_slope = 0.2;
  double attention_dropout = 0.1;
  double edge_drop = 0.1;
};

// Attention coefficients of one forward pass, per head, aligned with the edge
// list of `graph` (after edge drop, in training mode).
struct AttentionTrace {
  AttentionGraph graph;
  std::vector<std::vector<double>> alpha;
};

/// Multi-head graph attention layer.
///
/// For each head h: e_ij = LeakyReLU(a_h . [W_h x_i || W_h x_j]) over
/// j in {i} U N(i), alpha = softmax_j(e), z_i^h = sum_j alpha_ij W_h x_j.
/// Heads are concatenated, so the output has heads * head_dim columns.
///
/// In training mode each block draws its edge-drop and attention-dropout
/// masks from RngStream(block_keys[b]); the self edge is never dropped. The
/// same keys reproduce the same masks, which lets a PPO update replay the
/// exact stochastic forward pass used during the rollout.
class GatLayer {
 public:
  GatLayer() = default;
  GatLayer(ParameterSet& params, const std::string& name, GatOptions options);

  const GatOptions& options() const { return options_; }
  std::size_t out_dim() const { return options_.heads * options_.head_dim; }

  Var forward(Tape& tape, ParameterSet& params, Var x,
              const AttentionGraph& graph, std::span<const RngKey> block_keys,
              bool training, AttentionTrace* trace = nullptr) const;

 private:
  GatOptions options_;
  std::vector<std::size_t> projection_;  // in_dim x head_dim per head
  std::vector<std::size_t> attention_;   // 2*head_dim x 1 per head
};

}  // namespace pricelab::nn

#endif  // PRICELAB_GAT_HPP_
