#include "pricelab/demand.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "pricelab/csv.hpp"
#include "pricelab/error.hpp"

namespace pricelab {
namespace {

// EMA of quantities on days [0, day_offset), seeded with the first day.
double panel_ema_before(const SalesPanel& panel, std::size_t sku,
                        int day_offset) {
  if (day_offset <= 0) return 0.0;
  double ema = static_cast<double>(panel.quantity(sku, 0));
  for (int d = 1; d < day_offset; ++d) {
    ema = kEmaAlpha * static_cast<double>(panel.quantity(sku, d)) +
          (1.0 - kEmaAlpha) * ema;
  }
  return ema;
}

DemandHistory panel_history(const SalesPanel& panel, std::size_t sku,
                            int day_offset) {
  DemandHistory h;
  if (day_offset >= 1) h.lag1 = static_cast<double>(panel.quantity(sku, day_offset - 1));
  if (day_offset >= kMinHistoryDays) {
    h.lag7 = static_cast<double>(panel.quantity(sku, day_offset - kMinHistoryDays));
  }
  h.ema = panel_ema_before(panel, sku, day_offset);
  return h;
}

struct Column {
  double mean = 0.0;
  double scale = 0.0;
};

}  // namespace

std::vector<std::string> demand_feature_names() {
  std::vector<std::string> names = {"log_price", "price_ratio",
                                    "neighbor_log_price", "lag1", "lag7", "ema"};
  for (const char* d : {"mon", "tue", "wed", "thu", "fri", "sat", "sun"}) {
    names.push_back(std::string("dow_") + d);
  }
  for (int m = 1; m <= 12; ++m) names.push_back("month_" + std::to_string(m));
  names.push_back("trend");
  return names;
}

DemandHistoryBuffer::DemandHistoryBuffer(const SalesPanel& panel,
                                         std::size_t sku, int day_offset) {
  for (int k = 0; k < kMinHistoryDays; ++k) {
    const int d = day_offset - 1 - k;
    last_[k] = d >= 0 ? static_cast<double>(panel.quantity(sku, d)) : 0.0;
  }
  ema_ = panel_ema_before(panel, sku, day_offset);
}

DemandHistory DemandHistoryBuffer::view() const {
  return {last_[0], last_[kMinHistoryDays - 1], ema_};
}

void DemandHistoryBuffer::push(double quantity) {
  std::copy_backward(last_.begin(), last_.end() - 1, last_.end());
  last_[0] = quantity;
  ema_ = kEmaAlpha * quantity + (1.0 - kEmaAlpha) * ema_;
}

DemandFeatures make_features(double own_price, double reference_price,
                             double neighbor_mean_log_price,
                             const DemandHistory& history, Date day,
                             Date origin) {
  DemandFeatures f;
  auto& v = f.values;
  v[feature::kLogPrice] = std::log(own_price);
  v[feature::kPriceRatio] = own_price / reference_price;
  v[feature::kNeighborLogPrice] = neighbor_mean_log_price;
  v[feature::kLag1] = std::log1p(history.lag1);
  v[feature::kLag7] = std::log1p(history.lag7);
  v[feature::kEma] = std::log1p(history.ema);
  v[feature::kWeekday + weekday_index(day)] = 1.0;
  v[feature::kMonth + month_index(day)] = 1.0;
  v[feature::kTrend] = days_between(origin, day) / 365.0;
  return f;
}

double neighbor_mean_log_price(const ItemGraph& graph, std::size_t sku,
                               std::span<const double> prices) {
  const auto nbrs = graph.neighbors(sku);
  if (nbrs.empty()) return 0.0;
  double s = 0.0;
  for (const auto& e : nbrs) s += std::log(prices[e.dst]);
  return s / static_cast<double>(nbrs.size());
}

std::vector<std::vector<double>> historic_prices(const SalesPanel& panel,
                                                 const Catalog& catalog) {
  std::vector<std::vector<double>> out(
      panel.num_days(), std::vector<double>(panel.num_skus()));
  for (std::size_t i = 0; i < panel.num_skus(); ++i) {
    double last = catalog.reference_price[i];
    for (int d = 0; d < panel.num_days(); ++d) {
      const double p = panel.mean_price(i, d);
      if (!std::isnan(p)) last = p;
      out[d][i] = last;
    }
  }
  return out;
}

DemandFeatures featurize(const SalesPanel& panel, const Catalog& catalog,
                         const ItemGraph& graph, std::size_t sku, Date day,
                         std::span<const double> prices) {
  if (sku >= panel.num_skus()) throw Error("featurize: sku index out of range");
  if (prices.size() != panel.num_skus()) {
    throw Error("featurize: price vector length mismatch");
  }
  const Date earliest = add_days(panel.window().start, kMinHistoryDays);
  if (day < earliest || day > panel.window().end) {
    throw Error("featurize: insufficient history for " + format_date(day) +
                "; earliest valid day is " + format_date(earliest));
  }
  const int offset = panel.day_offset(day);
  return make_features(prices[sku], catalog.reference_price[sku],
                       neighbor_mean_log_price(graph, sku, prices),
                       panel_history(panel, sku, offset), day,
                       panel.window().start);
}

// ---------------------------------------------------------------------------

DemandOracle::DemandOracle(std::vector<SkuDemandModel> models)
    : models_(std::move(models)) {
  for (const auto& m : models_) {
    if (m.coef.size() != feature::kCount) {
      throw Error("DemandOracle: coefficient vector has wrong length for " +
                  m.sku);
    }
    if (!(m.sigma >= 0.0)) throw Error("DemandOracle: negative sigma");
  }
}

const SkuDemandModel& DemandOracle::model(std::size_t sku) const {
  if (sku >= models_.size()) {
    throw Error("DemandOracle: no fitted model for sku index " +
                std::to_string(sku));
  }
  return models_[sku];
}

double DemandOracle::mean_log1p(std::size_t sku, const DemandFeatures& x) const {
  const auto& m = model(sku);
  double y = m.intercept;
  for (std::size_t k = 0; k < feature::kCount; ++k) y += m.coef[k] * x[k];
  return y;
}

double DemandOracle::predict(std::size_t sku, const DemandFeatures& x) const {
  return std::max(0.0, std::expm1(mean_log1p(sku, x)));
}

std::int64_t DemandOracle::sample(std::size_t sku, const DemandFeatures& x,
                                  RngStream& rng) const {
  const double z = rng.normal();
  const double y = mean_log1p(sku, x) + model(sku).sigma * z;
  const double q = std::round(std::expm1(y));
  return q > 0.0 ? static_cast<std::int64_t>(q) : 0;
}

double DemandOracle::own_price_elasticity(std::size_t sku, double price,
                                          double reference_price) const {
  const auto& m = model(sku);
  return m.coef[feature::kLogPrice] +
         m.coef[feature::kPriceRatio] * price / reference_price;
}

std::string DemandOracle::to_json() const {
  nlohmann::json j;
  j["format"] = "pricelab-demand-oracle";
  j["schema_version"] = kFeatureSchemaVersion;
  j["features"] = demand_feature_names();
  j["skus"] = nlohmann::json::array();
  for (const auto& m : models_) {
    j["skus"].push_back({{"sku", m.sku},
                         {"intercept", m.intercept},
                         {"coef", m.coef},
                         {"sigma", m.sigma},
                         {"pooled", m.pooled}});
  }
  return j.dump(2);
}

DemandOracle DemandOracle::from_json(std::string_view text) {
  try {
    auto j = nlohmann::json::parse(text);
    if (j.at("format") != "pricelab-demand-oracle") {
      throw ParseError("not a demand oracle file");
    }
    if (j.at("schema_version").get<int>() != kFeatureSchemaVersion) {
      throw ParseError("unsupported demand feature schema version " +
                       j.at("schema_version").dump());
    }
    std::vector<SkuDemandModel> models;
    for (const auto& s : j.at("skus")) {
      SkuDemandModel m;
      m.sku = s.at("sku").get<std::string>();
      m.intercept = s.at("intercept").get<double>();
      m.coef = s.at("coef").get<std::vector<double>>();
      m.sigma = s.at("sigma").get<double>();
      m.pooled = s.value("pooled", false);
      models.push_back(std::move(m));
    }
    return DemandOracle(std::move(models));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad demand oracle json: ") + e.what());
  }
}

void DemandOracle::save(const std::filesystem::path& p) const {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write " + p.string());
  out << to_json() << '\n';
}

DemandOracle DemandOracle::load(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot open " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

// ---------------------------------------------------------------------------

std::pair<double, std::vector<double>> ridge_regression(
    std::span<const std::vector<double>> rows, std::span<const double> target,
    double penalty) {
  if (rows.empty() || rows.size() != target.size()) {
    throw Error("ridge_regression: empty or mismatched design");
  }
  const std::size_t n = rows.size();
  const std::size_t p = rows.front().size();

  std::vector<Column> cols(p);
  for (std::size_t k = 0; k < p; ++k) {
    double mean = 0.0;
    for (const auto& r : rows) mean += r[k];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (const auto& r : rows) var += (r[k] - mean) * (r[k] - mean);
    var /= static_cast<double>(n);
    cols[k] = {mean, var > 1e-24 ? std::sqrt(var) : 0.0};
  }
  std::vector<std::size_t> active;
  for (std::size_t k = 0; k < p; ++k) {
    if (cols[k].scale > 0.0) active.push_back(k);
  }
  const double y_mean =
      std::accumulate(target.begin(), target.end(), 0.0) / static_cast<double>(n);

  std::vector<double> coef(p, 0.0);
  if (!active.empty()) {
    const auto m = static_cast<Eigen::Index>(active.size());
    Eigen::MatrixXd z(static_cast<Eigen::Index>(n), m);
    Eigen::VectorXd y(static_cast<Eigen::Index>(n));
    for (std::size_t r = 0; r < n; ++r) {
      for (Eigen::Index c = 0; c < m; ++c) {
        const auto k = active[static_cast<std::size_t>(c)];
        z(static_cast<Eigen::Index>(r), c) = (rows[r][k] - cols[k].mean) / cols[k].scale;
      }
      y(static_cast<Eigen::Index>(r)) = target[r] - y_mean;
    }
    Eigen::MatrixXd gram = z.transpose() * z;
    gram.diagonal().array() += penalty;
    Eigen::VectorXd beta = gram.ldlt().solve(z.transpose() * y);
    for (Eigen::Index c = 0; c < m; ++c) {
      const auto k = active[static_cast<std::size_t>(c)];
      coef[k] = beta(c) / cols[k].scale;
    }
  }
  double intercept = y_mean;
  for (std::size_t k = 0; k < p; ++k) intercept -= coef[k] * cols[k].mean;
  return {intercept, coef};
}

namespace {

struct Design {
  std::vector<std::vector<double>> x;
  std::vector<double> y;
  std::vector<double> quantity;
};

void append(Design& d, const DemandFeatures& f, std::int64_t q) {
  d.x.emplace_back(f.values.begin(), f.values.end());
  d.y.push_back(std::log1p(static_cast<double>(q)));
  d.quantity.push_back(static_cast<double>(q));
}

struct Accumulator {
  double ss_res = 0.0;
  std::vector<double> log_actual;
  double sq_err = 0.0;
  double ape_sum = 0.0;
  std::size_t ape_n = 0;
  double w_sq_err = 0.0;
  double abs_err = 0.0;
  double weight = 0.0;
  std::size_t n = 0;

  void add(double predicted, double actual) {
    const double lp = std::log1p(predicted), la = std::log1p(actual);
    ss_res += (lp - la) * (lp - la);
    log_actual.push_back(la);
    const double e = predicted - actual;
    sq_err += e * e;
    if (actual > 0.0) {
      ape_sum += std::abs(e) / actual;
      ++ape_n;
    }
    w_sq_err += actual * e * e;
    abs_err += std::abs(e);
    weight += actual;
    ++n;
  }

  void finish(SkuDiagnostics& d) const {
    d.test_rows = n;
    if (n == 0) return;
    const double mean = std::accumulate(log_actual.begin(), log_actual.end(), 0.0) /
                        static_cast<double>(n);
    double ss_tot = 0.0;
    for (double v : log_actual) ss_tot += (v - mean) * (v - mean);
    d.r2_log1p = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : (ss_res == 0.0 ? 1.0 : 0.0);
    d.rmse = std::sqrt(sq_err / static_cast<double>(n));
    d.mape = ape_n ? 100.0 * ape_sum / static_cast<double>(ape_n) : 0.0;
    d.weighted_rmse = weight > 0.0 ? std::sqrt(w_sq_err / weight) : 0.0;
    d.weighted_mape = weight > 0.0 ? 100.0 * abs_err / weight : 0.0;
  }
};

double residual_sigma(const Design& d, double intercept,
                      const std::vector<double>& coef) {
  double ss = 0.0;
  for (std::size_t r = 0; r < d.x.size(); ++r) {
    double y = intercept;
    for (std::size_t k = 0; k < coef.size(); ++k) y += coef[k] * d.x[r][k];
    ss += (d.y[r] - y) * (d.y[r] - y);
  }
  return std::sqrt(ss / static_cast<double>(d.x.size()));
}

}  // namespace

FitResult fit(const SalesPanel& panel, const Catalog& catalog,
              const ItemGraph& graph, const FitOptions& options) {
  const DateRange& w = panel.window();
  if (!w.contains(options.split) || options.split == w.start) {
    throw Error("fit: split date " + format_date(options.split) +
                " must lie inside the panel window");
  }
  if (graph.num_nodes() != panel.num_skus() ||
      catalog.size() != panel.num_skus()) {
    throw Error("fit: catalog, graph and panel disagree on SKU count");
  }
  const int split = panel.day_offset(options.split);
  const int train_days = split - kMinHistoryDays;
  if (train_days < options.min_training_days) {
    throw Error("fit: only " + std::to_string(std::max(train_days, 0)) +
                " training days before the split; need " +
                std::to_string(options.min_training_days));
  }

  const std::size_t n = panel.num_skus();
  const auto prices = historic_prices(panel, catalog);
  std::vector<Design> train(n), test(n);
  Design pooled;
  for (std::size_t i = 0; i < n; ++i) {
    for (int d = kMinHistoryDays; d < panel.num_days(); ++d) {
      const auto f = featurize(panel, catalog, graph, i, panel.date_at(d), prices[d]);
      Design& target = d < split ? train[i] : test[i];
      append(target, f, panel.quantity(i, d));
      if (d < split) append(pooled, f, panel.quantity(i, d));
    }
  }

  std::optional<std::pair<double, std::vector<double>>> pooled_fit;
  std::vector<SkuDemandModel> models;
  FitDiagnostics diag;
  diag.test_window = {options.split, w.end};
  Accumulator all;
  for (std::size_t i = 0; i < n; ++i) {
    const auto selling = static_cast<std::size_t>(std::count_if(
        train[i].quantity.begin(), train[i].quantity.end(),
        [](double q) { return q > 0.0; }));
    SkuDemandModel m;
    m.sku = catalog.skus[i];
    if (selling < options.min_observations) {
      if (!pooled_fit) {
        pooled_fit = ridge_regression(pooled.x, pooled.y, options.ridge);
      }
      std::tie(m.intercept, m.coef) = *pooled_fit;
      m.pooled = true;
      ++diag.pooled_fallbacks;
    } else {
      std::tie(m.intercept, m.coef) =
          ridge_regression(train[i].x, train[i].y, options.ridge);
    }
    m.sigma = residual_sigma(train[i], m.intercept, m.coef);
    models.push_back(m);

    SkuDiagnostics sd;
    sd.sku = m.sku;
    sd.train_rows = train[i].x.size();
    sd.pooled = m.pooled;
    Accumulator acc;
    for (std::size_t r = 0; r < test[i].x.size(); ++r) {
      double y = m.intercept;
      for (std::size_t k = 0; k < feature::kCount; ++k) y += m.coef[k] * test[i].x[r][k];
      const double predicted = std::max(0.0, std::expm1(y));
      acc.add(predicted, test[i].quantity[r]);
      all.add(predicted, test[i].quantity[r]);
    }
    acc.finish(sd);
    diag.per_sku.push_back(sd);
  }
  diag.aggregate.sku = "ALL";
  for (const auto& s : diag.per_sku) diag.aggregate.train_rows += s.train_rows;
  all.finish(diag.aggregate);
  return {DemandOracle(std::move(models)), std::move(diag)};
}

void write_diagnostics_csv(const FitDiagnostics& d,
                           const std::filesystem::path& p) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write " + p.string());
  out << "sku,r2_log1p,rmse,mape_pct,weighted_rmse,weighted_mape_pct,"
         "train_rows,test_rows,pooled,test_start,test_end\n";
  auto row = [&](const SkuDiagnostics& s) {
    csv::write_record(out, {s.sku, csv::format_double(s.r2_log1p),
                            csv::format_double(s.rmse), csv::format_double(s.mape),
                            csv::format_double(s.weighted_rmse),
                            csv::format_double(s.weighted_mape),
                            std::to_string(s.train_rows),
                            std::to_string(s.test_rows), s.pooled ? "1" : "0",
                            format_date(d.test_window.start),
                            format_date(d.test_window.end)});
  };
  for (const auto& s : d.per_sku) row(s);
  row(d.aggregate);
}

}  // namespace pricelab
