#include "pricelab/graph.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "pricelab/csv.hpp"
#include "pricelab/error.hpp"

namespace pricelab {

WeightMatrix::WeightMatrix(std::vector<std::string> labels)
    : labels_(std::move(labels)), w_(labels_.size() * labels_.size(), 0.0) {}

bool WeightMatrix::symmetric() const {
  for (std::size_t i = 0; i < size(); ++i) {
    for (std::size_t j = i + 1; j < size(); ++j) {
      if ((*this)(i, j) != (*this)(j, i)) return false;
    }
  }
  return true;
}

WeightMatrix cooccurrence_counts(std::span<const Transaction> rows,
                                 const Catalog& catalog, EdgeWeight kind) {
  std::map<std::string, std::set<std::size_t>> baskets;
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < catalog.size(); ++i) index[catalog.skus[i]] = i;
  for (const auto& t : rows) {
    auto it = index.find(t.sku);
    if (it == index.end()) continue;
    baskets[t.invoice_id].insert(it->second);
  }

  WeightMatrix w(catalog.skus);
  std::vector<double> item_invoices(catalog.size(), 0.0);
  for (const auto& [invoice, items] : baskets) {
    for (auto i : items) item_invoices[i] += 1.0;
    for (auto a = items.begin(); a != items.end(); ++a) {
      for (auto b = std::next(a); b != items.end(); ++b) {
        w(*a, *b) += 1.0;
        w(*b, *a) += 1.0;
      }
    }
  }
  if (kind == EdgeWeight::kLift && !baskets.empty()) {
    const double total = static_cast<double>(baskets.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
      for (std::size_t j = 0; j < w.size(); ++j) {
        if (w(i, j) > 0.0) {
          w(i, j) *= total / (item_invoices[i] * item_invoices[j]);
        }
      }
    }
  }
  return w;
}

ItemGraph::ItemGraph(std::vector<std::string> labels,
                     std::vector<std::vector<Edge>> adjacency, std::size_t k,
                     double tau)
    : labels_(std::move(labels)),
      adjacency_(std::move(adjacency)),
      k_(k),
      tau_(tau) {
  if (labels_.size() != adjacency_.size()) {
    throw Error("ItemGraph: label count does not match node count");
  }
  for (std::size_t i = 0; i < adjacency_.size(); ++i) {
    if (adjacency_[i].size() > k_) throw Error("ItemGraph: out-degree > k");
    for (const auto& e : adjacency_[i]) {
      if (e.dst >= adjacency_.size() || e.dst == i) {
        throw Error("ItemGraph: invalid edge from node " + std::to_string(i));
      }
    }
  }
}

std::size_t ItemGraph::num_edges() const {
  std::size_t total = 0;
  for (const auto& a : adjacency_) total += a.size();
  return total;
}

bool ItemGraph::has_edge(std::size_t i, std::size_t j) const {
  return std::any_of(adjacency_[i].begin(), adjacency_[i].end(),
                     [j](const Edge& e) { return e.dst == j; });
}

ItemGraph ItemGraph::permuted(std::span<const std::size_t> perm) const {
  const std::size_t n = num_nodes();
  if (perm.size() != n) throw Error("ItemGraph::permuted: size mismatch");
  std::vector<std::string> labels(n);
  std::vector<std::vector<Edge>> adj(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[perm[i]] = labels_[i];
    for (const auto& e : adjacency_[i]) {
      adj[perm[i]].push_back({perm[e.dst], e.weight});
    }
  }
  return ItemGraph(std::move(labels), std::move(adj), k_, tau_);
}

ItemGraph build_graph(const WeightMatrix& weights, double tau, std::size_t k) {
  if (!(tau > 0.0)) throw Error("build_graph: tau must be > 0");
  if (k < 1) throw Error("build_graph: k must be >= 1");
  const std::size_t n = weights.size();
  const auto& labels = weights.labels();
  std::vector<std::vector<Edge>> adj(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j && weights(i, j) >= tau) adj[i].push_back({j, weights(i, j)});
    }
    std::sort(adj[i].begin(), adj[i].end(),
              [&labels](const Edge& a, const Edge& b) {
                if (a.weight != b.weight) return a.weight > b.weight;
                return labels[a.dst] < labels[b.dst];
              });
    if (adj[i].size() > k) adj[i].resize(k);
  }
  return ItemGraph(labels, std::move(adj), k, tau);
}

std::vector<std::vector<std::size_t>> weak_components(const ItemGraph& graph) {
  const std::size_t n = graph.num_nodes();
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto find = [&parent](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& e : graph.neighbors(i)) {
      auto a = find(i), b = find(e.dst);
      if (a != b) parent[std::max(a, b)] = std::min(a, b);
    }
  }
  std::map<std::size_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < n; ++i) groups[find(i)].push_back(i);
  std::vector<std::vector<std::size_t>> out;
  for (auto& [root, members] : groups) out.push_back(std::move(members));
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.size() > b.size();
  });
  return out;
}

void save_graph(const ItemGraph& graph, const std::filesystem::path& edges_csv,
                const std::filesystem::path& sidecar_json) {
  for (const auto* p : {&edges_csv, &sidecar_json}) {
    if (p->has_parent_path()) std::filesystem::create_directories(p->parent_path());
  }
  std::ofstream out(edges_csv, std::ios::binary);
  if (!out) throw Error("cannot write " + edges_csv.string());
  out << "src_sku,dst_sku,weight\n";
  const auto& labels = graph.labels();
  for (std::size_t i = 0; i < graph.num_nodes(); ++i) {
    for (const auto& e : graph.neighbors(i)) {
      csv::write_record(out, {labels[i], labels[e.dst],
                              csv::format_double(e.weight)});
    }
  }
  nlohmann::json meta = {{"n", graph.num_nodes()},
                         {"k", graph.k()},
                         {"tau", graph.tau()},
                         {"edges", graph.num_edges()},
                         {"skus", labels}};
  std::ofstream side(sidecar_json, std::ios::binary);
  if (!side) throw Error("cannot write " + sidecar_json.string());
  side << meta.dump(2) << '\n';
}

ItemGraph load_graph(const std::filesystem::path& edges_csv,
                     const std::filesystem::path& sidecar_json) {
  std::ifstream side(sidecar_json, std::ios::binary);
  if (!side) throw Error("cannot open " + sidecar_json.string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(side);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("bad graph sidecar " + sidecar_json.string() + ": " +
                     e.what());
  }
  auto labels = meta.at("skus").get<std::vector<std::string>>();
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < labels.size(); ++i) index[labels[i]] = i;

  std::ifstream in(edges_csv, std::ios::binary);
  if (!in) throw Error("cannot open " + edges_csv.string());
  std::vector<std::string> f;
  csv::read_record(in, f);
  std::vector<std::vector<Edge>> adj(labels.size());
  while (csv::read_record(in, f)) {
    if (f.size() < 3) throw ParseError("short edge row in " + edges_csv.string());
    auto s = index.find(f[0]), d = index.find(f[1]);
    if (s == index.end() || d == index.end()) {
      throw ParseError("edge references unknown sku in " + edges_csv.string());
    }
    adj[s->second].push_back({d->second, std::stod(f[2])});
  }
  return ItemGraph(std::move(labels), std::move(adj),
                   meta.at("k").get<std::size_t>(), meta.at("tau").get<double>());
}

}  // namespace pricelab
