#ifndef PRICELAB_DEMAND_HPP_
#define PRICELAB_DEMAND_HPP_

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pricelab/calendar.hpp"
#include "pricelab/graph.hpp"
#include "pricelab/ingest.hpp"
#include "pricelab/rng.hpp"

namespace pricelab {

inline constexpr int kFeatureSchemaVersion = 1;

// Column layout of the demand regressors.
namespace feature {
inline constexpr std::size_t kLogPrice = 0;
inline constexpr std::size_t kPriceRatio = 1;       // p / reference price
inline constexpr std::size_t kNeighborLogPrice = 2; // mean log price over N(i)
inline constexpr std::size_t kLag1 = 3;             // log1p(q[t-1])
inline constexpr std::size_t kLag7 = 4;             // log1p(q[t-7])
inline constexpr std::size_t kEma = 5;              // log1p(EMA span 7)
inline constexpr std::size_t kWeekday = 6;          // 7 one-hot columns
inline constexpr std::size_t kMonth = 13;           // 12 one-hot columns
inline constexpr std::size_t kTrend = 25;           // years since panel start
inline constexpr std::size_t kCount = 26;
}  // namespace feature

inline constexpr int kMinHistoryDays = 7;
inline constexpr double kEmaAlpha = 2.0 / (7.0 + 1.0);

std::vector<std::string> demand_feature_names();

struct DemandFeatures {
  std::array<double, feature::kCount> values{};

  double operator[](std::size_t i) const { return values[i]; }
};

// Raw quantities available before the day being featurized.
struct DemandHistory {
  double lag1 = 0.0;
  double lag7 = 0.0;
  double ema = 0.0;
};

// Rolling per-SKU history used by the simulator: the last seven quantities and
// the span-7 EMA, advanced one day at a time.
class DemandHistoryBuffer {
 public:
  DemandHistoryBuffer() = default;
  // Seeds from the panel days strictly before `day_offset`.
  DemandHistoryBuffer(const SalesPanel& panel, std::size_t sku, int day_offset);

  DemandHistory view() const;
  void push(double quantity);

  friend bool operator==(const DemandHistoryBuffer&,
                         const DemandHistoryBuffer&) = default;

 private:
  std::array<double, kMinHistoryDays> last_{};  // last_[0] is t-1
  double ema_ = 0.0;
};

DemandFeatures make_features(double own_price, double reference_price,
                             double neighbor_mean_log_price,
                             const DemandHistory& history, Date day,
                             Date origin);

// Mean log price of sku's out-neighbors under `prices`; 0 when N(i) is empty.
double neighbor_mean_log_price(const ItemGraph& graph, std::size_t sku,
                               std::span<const double> prices);

// Observed daily prices with gaps filled by the last observed price (or the
// reference price before the first sale). Layout [day][sku].
std::vector<std::vector<double>> historic_prices(const SalesPanel& panel,
                                                 const Catalog& catalog);

// Features for (sku, day) from panel history and the given price vector.
// Throws Error naming the earliest valid day when fewer than seven prior days
// exist in the panel.
DemandFeatures featurize(const SalesPanel& panel, const Catalog& catalog,
                         const ItemGraph& graph, std::size_t sku, Date day,
                         std::span<const double> prices);

struct SkuDemandModel {
  std::string sku;
  double intercept = 0.0;
  std::vector<double> coef = std::vector<double>(feature::kCount, 0.0);
  double sigma = 0.0;   // residual std in log1p space
  bool pooled = false;  // fitted on the pooled catalog model
};

/// Per-SKU log-linear demand oracle on a log1p(quantity) scale.
///
/// The mean response is `intercept + coef . x`; predict() returns
/// max(0, expm1(mean)). sample() adds N(0, sigma^2) noise in log1p space,
/// inverts, rounds to the nearest unit and floors at zero. The oracle is
/// immutable after construction and safe to share between threads.
class DemandOracle {
 public:
  DemandOracle() = default;
  explicit DemandOracle(std::vector<SkuDemandModel> models);

  std::size_t num_skus() const { return models_.size(); }
  const SkuDemandModel& model(std::size_t sku) const;

  double mean_log1p(std::size_t sku, const DemandFeatures& x) const;
  double predict(std::size_t sku, const DemandFeatures& x) const;
  std::int64_t sample(std::size_t sku, const DemandFeatures& x,
                      RngStream& rng) const;

  // d mean_log1p / d log(own price) at `price`.
  double own_price_elasticity(std::size_t sku, double price,
                              double reference_price) const;

  std::string to_json() const;
  static DemandOracle from_json(std::string_view text);
  void save(const std::filesystem::path& p) const;
  static DemandOracle load(const std::filesystem::path& p);

 private:
  std::vector<SkuDemandModel> models_;
};

struct FitOptions {
  Date split{};          // first day of the held-out test window
  double ridge = 1.0;    // penalty on standardized coefficients
  std::size_t min_observations = 10;  // selling days before pooled fallback
  int min_training_days = 30;
};

struct SkuDiagnostics {
  std::string sku;  // "ALL" for the aggregate row
  double r2_log1p = 0.0;
  double rmse = 0.0;
  double mape = 0.0;  // percent, over test days with positive sales
  double weighted_rmse = 0.0;
  double weighted_mape = 0.0;  // percent
  std::size_t train_rows = 0;
  std::size_t test_rows = 0;
  bool pooled = false;
};

struct FitDiagnostics {
  std::vector<SkuDiagnostics> per_sku;
  SkuDiagnostics aggregate;
  DateRange test_window{};
  std::size_t pooled_fallbacks = 0;
};

struct FitResult {
  DemandOracle oracle;
  FitDiagnostics diagnostics;
};

FitResult fit(const SalesPanel& panel, const Catalog& catalog,
              const ItemGraph& graph, const FitOptions& options);

// Ridge regression with an unpenalized intercept on standardized columns.
// Returns raw-scale (intercept, coefficients). Constant columns get 0.
std::pair<double, std::vector<double>> ridge_regression(
    std::span<const std::vector<double>> rows, std::span<const double> target,
    double penalty);

void write_diagnostics_csv(const FitDiagnostics& d,
                           const std::filesystem::path& p);

}  // namespace pricelab

#endif  // PRICELAB_DEMAND_HPP_
