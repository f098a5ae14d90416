#include "pricelab/gat.hpp"

#include "pricelab/error.hpp"

namespace pricelab::nn {

AttentionGraph AttentionGraph::from_item_graph(const ItemGraph& graph,
                                               std::size_t blocks) {
  AttentionGraph g;
  g.nodes_per_block = graph.num_nodes();
  g.blocks = blocks;
  g.offsets.reserve(g.num_nodes() + 1);
  g.offsets.push_back(0);
  for (std::size_t b = 0; b < blocks; ++b) {
    const std::size_t base = b * g.nodes_per_block;
    for (std::size_t i = 0; i < g.nodes_per_block; ++i) {
      g.source.push_back(base + i);
      g.target.push_back(base + i);
      for (const auto& e : graph.neighbors(i)) {
        g.source.push_back(base + e.dst);
        g.target.push_back(base + i);
      }
      g.offsets.push_back(g.source.size());
    }
  }
  return g;
}

namespace {

// Removes non-self edges with probability p, block by block.
AttentionGraph drop_edges(const AttentionGraph& g, double p,
                          std::vector<RngStream>& streams) {
  AttentionGraph out;
  out.nodes_per_block = g.nodes_per_block;
  out.blocks = g.blocks;
  out.offsets.push_back(0);
  for (std::size_t node = 0; node < g.num_nodes(); ++node) {
    RngStream& rng = streams[node / g.nodes_per_block];
    for (std::size_t e = g.offsets[node]; e < g.offsets[node + 1]; ++e) {
      const bool self = g.source[e] == node;
      if (!self && rng.bernoulli(p)) continue;
      out.source.push_back(g.source[e]);
      out.target.push_back(g.target[e]);
    }
    out.offsets.push_back(out.source.size());
  }
  return out;
}

}  // namespace

GatLayer::GatLayer(ParameterSet& params, const std::string& name,
                   GatOptions options)
    : options_(options) {
  if (options_.heads == 0 || options_.head_dim == 0 || options_.in_dim == 0) {
    throw Error("GatLayer: heads, head_dim and in_dim must be positive");
  }
  for (std::size_t h = 0; h < options_.heads; ++h) {
    const std::string prefix = name + ".head" + std::to_string(h);
    projection_.push_back(params.add(prefix + ".W", options_.in_dim,
                                     options_.head_dim,
                                     ParamGroup::kGatProjection));
    attention_.push_back(params.add(prefix + ".a", 2 * options_.head_dim, 1,
                                    ParamGroup::kGatAttention));
  }
}

Var GatLayer::forward(Tape& tape, ParameterSet& params, Var x,
                      const AttentionGraph& graph,
                      std::span<const RngKey> block_keys, bool training,
                      AttentionTrace* trace) const {
  if (x.cols() != options_.in_dim) {
    throw Error("GatLayer: embedding dimension " + std::to_string(x.cols()) +
                " does not match projection input " +
                std::to_string(options_.in_dim));
  }
  if (x.rows() != graph.num_nodes()) {
    throw Error("GatLayer: " + std::to_string(x.rows()) +
                " embeddings for a graph with " +
                std::to_string(graph.num_nodes()) + " nodes");
  }

  const AttentionGraph* g = &graph;
  AttentionGraph dropped;
  std::vector<RngStream> streams;
  const bool stochastic = training && (options_.edge_drop > 0.0 ||
                                       options_.attention_dropout > 0.0);
  if (stochastic) {
    if (block_keys.size() != graph.blocks) {
      throw Error("GatLayer: one dropout key per graph block required");
    }
    for (auto k : block_keys) streams.emplace_back(k);
    if (options_.edge_drop > 0.0) {
      dropped = drop_edges(graph, options_.edge_drop, streams);
      g = &dropped;
    }
  }
  if (trace) {
    trace->graph = *g;
    trace->alpha.clear();
  }

  Var out;
  for (std::size_t h = 0; h < options_.heads; ++h) {
    Var wx = matmul(x, tape.parameter(params[projection_[h]]));
    Var wx_src = gather_rows(wx, g->source);
    Var pair = concat_cols(gather_rows(wx, g->target), wx_src);
    Var score = leaky_relu(matmul(pair, tape.parameter(params[attention_[h]])),
                           options_.leaky_slope);
    Var alpha = segment_softmax(score, g->offsets);
    if (trace) trace->alpha.push_back(alpha.value().data);
    if (stochastic && options_.attention_dropout > 0.0) {
      const double p = options_.attention_dropout;
      Matrix mask(g->num_edges(), 1);
      for (std::size_t e = 0; e < g->num_edges(); ++e) {
        RngStream& rng = streams[g->target[e] / g->nodes_per_block];
        mask.data[e] = rng.bernoulli(p) ? 0.0 : 1.0 / (1.0 - p);
      }
      alpha = mul_const(alpha, mask);
    }
    Var z = segment_weighted_sum(alpha, wx_src, g->offsets);
    out = h == 0 ? z : concat_cols(out, z);
  }
  return out;
}

}  // namespace pricelab::nn
