#pragma once

#include <cstdint>
#include <iosfwd>
#include <json.hpp>
#include <span>
#include <string>
#include <vector>

namespace msdnet {

// Smallest exit probability the budget solver returns; budgets at or above the
// deepest-possible expected cost clamp here.
inline constexpr double kMinExitProbability = 1e-6;

// Threshold that no confidence in [0,1] reaches.
double never_exit_threshold();

// q_k = z (1-q)^(k-1) q, normalised to sum to one. Requires q in (0,1], K >= 1.
std::vector<double> exit_distribution(double q, std::size_t num_classifiers);

// M * sum_k q_k(q) C_k
double expected_cost(double q, std::span<const double> costs, std::size_t batch_size);

enum class BudgetClamp { None, AllExitFirst, MaxDepth };
const char* clamp_name(BudgetClamp clamp);

struct BudgetSolution {
  double q = 1.0;
  BudgetClamp clamp = BudgetClamp::None;
  int iterations = 0;
};

// Bisection on q in [q_min, 1] for expected_cost(q) = budget. expected_cost is
// nonincreasing in q. Budgets at or below M*C_1 give q = 1; budgets at or above
// the q_min cost give q_min.
BudgetSolution solve_budget(std::span<const double> costs, std::size_t batch_size, double budget,
                            double rel_tol = 1e-6, int max_iterations = 100);

// Per-sample, per-classifier max-softmax confidences with correctness flags.
class ConfidenceProfile {
 public:
  ConfidenceProfile() = default;
  ConfidenceProfile(std::size_t num_classifiers) : num_classifiers_(num_classifiers) {}

  void add_sample(std::vector<double> confidences, std::vector<bool> correct);

  std::size_t size() const { return confidence_.size(); }
  std::size_t num_classifiers() const { return num_classifiers_; }
  double confidence(std::size_t sample, std::size_t k) const { return confidence_[sample][k]; }
  bool correct(std::size_t sample, std::size_t k) const { return correct_[sample][k]; }

  // Rows: sample_id,classifier,confidence,correct (classifier 1-based).
  void write_csv(std::ostream& os) const;
  static ConfidenceProfile read_csv(std::istream& is);

 private:
  std::size_t num_classifiers_ = 0;
  std::vector<std::vector<double>> confidence_;
  std::vector<std::vector<bool>> correct_;
};

struct Calibration {
  std::vector<double> thresholds;        // theta_k, theta_K = 0
  std::vector<std::size_t> target_exits;  // n_k
  std::vector<std::size_t> exit_counts;   // exits observed on the calibration set
  std::vector<std::string> warnings;
};

// Sequential threshold selection: for k < K, theta_k is the n_k-th largest
// confidence among samples still alive at k (n_k = round(|D| q_k)); samples at
// or above theta_k exit. The final classifier takes everyone left.
Calibration calibrate_thresholds(const ConfidenceProfile& profile, std::span<const double> exit_probs,
                                 std::size_t dataset_size = 0);

// 1-based exit index of a sample with the given per-classifier confidences.
std::size_t exit_index(std::span<const double> confidences, std::span<const double> thresholds);

struct ExitPlan {
  double q = 1.0;
  std::vector<double> exit_probs;   // q_k
  std::vector<double> thresholds;   // theta_k
  std::vector<double> costs;        // C_k
  double budget = 0.0;              // B, for the whole batch
  std::size_t batch_size = 0;       // M
  std::string clamp = "none";
  std::string config_hash;

  std::size_t num_classifiers() const { return thresholds.size(); }
};

nlohmann::json to_json(const ExitPlan& plan);
ExitPlan exit_plan_from_json(const nlohmann::json& j);

}  // namespace msdnet
