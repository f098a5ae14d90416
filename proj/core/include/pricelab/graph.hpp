#ifndef PRICELAB_GRAPH_HPP_
#define PRICELAB_GRAPH_HPP_

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pricelab/ingest.hpp"

namespace pricelab {

enum class EdgeWeight { kCount, kLift };

// Symmetric co-occurrence weights between catalog SKUs, indexed in catalog
// order. Dense storage: catalogs here hold tens of SKUs.
class WeightMatrix {
 public:
  WeightMatrix() = default;
  explicit WeightMatrix(std::vector<std::string> labels);

  std::size_t size() const { return labels_.size(); }
  const std::vector<std::string>& labels() const { return labels_; }

  double operator()(std::size_t i, std::size_t j) const {
    return w_[i * size() + j];
  }
  double& operator()(std::size_t i, std::size_t j) { return w_[i * size() + j]; }

  bool symmetric() const;

 private:
  std::vector<std::string> labels_;
  std::vector<double> w_;
};

// w_ij = number of invoices containing both i and j. Rows whose SKU is not in
// the catalog are ignored; duplicate lines within an invoice count once.
// With EdgeWeight::kLift the count is divided by the independence expectation
// n_i * n_j / N_invoices.
WeightMatrix cooccurrence_counts(std::span<const Transaction> rows,
                                 const Catalog& catalog,
                                 EdgeWeight kind = EdgeWeight::kCount);

struct Edge {
  std::size_t dst = 0;
  double weight = 0.0;

  friend bool operator==(const Edge&, const Edge&) = default;
};

// Directed top-k item graph; immutable after construction.
class ItemGraph {
 public:
  ItemGraph() = default;
  ItemGraph(std::vector<std::string> labels,
            std::vector<std::vector<Edge>> adjacency, std::size_t k,
            double tau);

  std::size_t num_nodes() const { return adjacency_.size(); }
  std::size_t num_edges() const;
  std::size_t k() const { return k_; }
  double tau() const { return tau_; }
  const std::vector<std::string>& labels() const { return labels_; }

  // Sorted by (weight desc, label asc).
  std::span<const Edge> neighbors(std::size_t i) const { return adjacency_[i]; }
  std::size_t out_degree(std::size_t i) const { return adjacency_[i].size(); }
  bool has_edge(std::size_t i, std::size_t j) const;

  // Same graph with node `i` renamed to `perm[i]`.
  ItemGraph permuted(std::span<const std::size_t> perm) const;

  friend bool operator==(const ItemGraph&, const ItemGraph&) = default;

 private:
  std::vector<std::string> labels_;
  std::vector<std::vector<Edge>> adjacency_;
  std::size_t k_ = 0;
  double tau_ = 0.0;
};

// Drops edges with w < tau, then keeps each node's k heaviest outgoing edges
// (ties by label ascending). Self-loops are never stored.
ItemGraph build_graph(const WeightMatrix& weights, double tau, std::size_t k);

// Weakly connected components, largest first; ties ordered by smallest node.
// Nodes inside a component are ascending.
std::vector<std::vector<std::size_t>> weak_components(const ItemGraph& graph);

// edges.csv: src_sku,dst_sku,weight   graph.json: {"n", "k", "tau", "skus"}
void save_graph(const ItemGraph& graph, const std::filesystem::path& edges_csv,
                const std::filesystem::path& sidecar_json);
ItemGraph load_graph(const std::filesystem::path& edges_csv,
                     const std::filesystem::path& sidecar_json);

}  // namespace pricelab

#endif  // PRICELAB_GRAPH_HPP_
