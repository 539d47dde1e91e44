#include "msdnet/exit_policy.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "msdnet/errors.hpp"

namespace msdnet {

double never_exit_threshold() { return std::nextafter(1.0, 2.0); }

std::vector<double> exit_distribution(double q, std::size_t num_classifiers) {
  if (!(q > 0.0 && q <= 1.0)) throw InputError("exit probability q must lie in (0, 1], got " + std::to_string(q));
  if (num_classifiers == 0) throw ConfigError("exit distribution needs at least one classifier");
  std::vector<double> probs(num_classifiers);
  double survive = 1.0;
  double total = 0.0;
  for (auto& p : probs) {
    p = survive * q;
    total += p;
    survive *= 1.0 - q;
  }
  for (auto& p : probs) p /= total;
  return probs;
}

double expected_cost(double q, std::span<const double> costs, std::size_t batch_size) {
  const auto probs = exit_distribution(q, costs.size());
  double e = 0.0;
  for (std::size_t k = 0; k < costs.size(); ++k) e += probs[k] * costs[k];
  return static_cast<double>(batch_size) * e;
}

const char* clamp_name(BudgetClamp clamp) {
  switch (clamp) {
    case BudgetClamp::None: return "none";
    case BudgetClamp::AllExitFirst: return "all-exit-first";
    case BudgetClamp::MaxDepth: return "max-depth";
  }
  return "?";
}

BudgetSolution solve_budget(std::span<const double> costs, std::size_t batch_size, double budget, double rel_tol,
                            int max_iterations) {
  if (costs.empty()) throw ConfigError("budget solve needs at least one classifier cost");
  if (!(budget > 0.0)) throw InputError("budget must be positive");
  for (std::size_t k = 1; k < costs.size(); ++k) {
    if (costs[k] < costs[k - 1]) throw ConfigError("classifier costs must be nondecreasing");
  }
  BudgetSolution sol;
  if (budget <= expected_cost(1.0, costs, batch_size)) {
    sol.q = 1.0;
    sol.clamp = BudgetClamp::AllExitFirst;
    return sol;
  }
  if (budget >= expected_cost(kMinExitProbability, costs, batch_size)) {
    sol.q = kMinExitProbability;
    sol.clamp = BudgetClamp::MaxDepth;
    return sol;
  }
  // expected_cost(lo) > budget > expected_cost(hi)
  double lo = kMinExitProbability, hi = 1.0;
  double mid = 0.5 * (lo + hi);
  for (int it = 1; it <= max_iterations; ++it) {
    mid = 0.5 * (lo + hi);
    sol.iterations = it;
    const double e = expected_cost(mid, costs, batch_size);
    if (std::abs(e - budget) <= rel_tol * budget) break;
    if (e > budget) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  sol.q = mid;
  return sol;
}

void ConfidenceProfile::add_sample(std::vector<double> confidences, std::vector<bool> correct) {
  if (num_classifiers_ == 0) num_classifiers_ = confidences.size();
  if (confidences.size() != num_classifiers_ || correct.size() != num_classifiers_) {
    throw InputError("confidence profile row must have " + std::to_string(num_classifiers_) + " entries");
  }
  for (double c : confidences) {
    if (!std::isfinite(c)) throw InputError("confidence profile contains a non-finite value");
  }
  confidence_.push_back(std::move(confidences));
  correct_.push_back(std::move(correct));
}

void ConfidenceProfile::write_csv(std::ostream& os) const {
  os << "sample_id,classifier,confidence,correct\n";
  const auto old = os.precision(std::numeric_limits<double>::max_digits10);
  for (std::size_t i = 0; i < size(); ++i) {
    for (std::size_t k = 0; k < num_classifiers_; ++k) {
      os << i << ',' << k + 1 << ',' << confidence_[i][k] << ',' << (correct_[i][k] ? 1 : 0) << '\n';
    }
  }
  os.precision(old);
}

ConfidenceProfile ConfidenceProfile::read_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line.rfind("sample_id,classifier,confidence,correct", 0) != 0) {
    throw InputError("confidence profile CSV is missing its header");
  }
  struct Row {
    std::size_t sample, k;
    double conf;
    bool correct;
  };
  std::vector<Row> rows;
  std::size_t max_sample = 0, max_k = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    Row r{};
    char c1 = 0, c2 = 0, c3 = 0;
    int corr = 0;
    if (!(ls >> r.sample >> c1 >> r.k >> c2 >> r.conf >> c3 >> corr) || c1 != ',' || c2 != ',' || c3 != ',' ||
        r.k == 0) {
      throw InputError("malformed confidence profile row: " + line);
    }
    r.correct = corr != 0;
    max_sample = std::max(max_sample, r.sample);
    max_k = std::max(max_k, r.k);
    rows.push_back(r);
  }
  if (rows.empty()) return ConfidenceProfile{};
  std::vector<std::vector<double>> conf(max_sample + 1, std::vector<double>(max_k, std::nan("")));
  std::vector<std::vector<bool>> corr(max_sample + 1, std::vector<bool>(max_k, false));
  for (const auto& r : rows) {
    conf[r.sample][r.k - 1] = r.conf;
    corr[r.sample][r.k - 1] = r.correct;
  }
  ConfidenceProfile profile(max_k);
  for (std::size_t i = 0; i <= max_sample; ++i) profile.add_sample(conf[i], corr[i]);
  return profile;
}

Calibration calibrate_thresholds(const ConfidenceProfile& profile, std::span<const double> exit_probs,
                                 std::size_t dataset_size) {
  const std::size_t K = exit_probs.size();
  if (profile.size() == 0) throw InputError("calibration needs at least one validation sample");
  if (K == 0 || profile.num_classifiers() != K) {
    throw ConfigError("exit distribution has " + std::to_string(K) + " entries but the profile has " +
                      std::to_string(profile.num_classifiers()) + " classifiers");
  }
  const std::size_t n_total = dataset_size ? dataset_size : profile.size();
  Calibration cal;
  cal.thresholds.assign(K, 0.0);
  cal.target_exits.assign(K, 0);
  cal.exit_counts.assign(K, 0);

  std::vector<std::size_t> alive(profile.size());
  for (std::size_t i = 0; i < alive.size(); ++i) alive[i] = i;
  std::size_t assigned = 0;
  for (std::size_t k = 0; k + 1 < K; ++k) {
    const auto n_k = static_cast<std::size_t>(std::llround(static_cast<double>(n_total) * exit_probs[k]));
    cal.target_exits[k] = n_k;
    assigned += n_k;
    double theta = never_exit_threshold();
    if (n_k > 0 && !alive.empty()) {
      std::vector<double> conf;
      conf.reserve(alive.size());
      for (auto i : alive) conf.push_back(profile.confidence(i, k));
      if (n_k >= conf.size()) {
        if (n_k > conf.size()) {
          cal.warnings.push_back("classifier " + std::to_string(k + 1) + ": wanted " + std::to_string(n_k) +
                                 " exits but only " + std::to_string(conf.size()) + " samples remain");
        }
        theta = *std::min_element(conf.begin(), conf.end());
      } else {
        std::nth_element(conf.begin(), conf.begin() + static_cast<long>(n_k - 1), conf.end(), std::greater<>());
        theta = conf[n_k - 1];
      }
    } else if (n_k > 0) {
      cal.warnings.push_back("classifier " + std::to_string(k + 1) + ": no samples remain to exit");
    }
    cal.thresholds[k] = theta;
    std::vector<std::size_t> still;
    for (auto i : alive) {
      if (profile.confidence(i, k) >= theta) {
        ++cal.exit_counts[k];
      } else {
        still.push_back(i);
      }
    }
    alive.swap(still);
  }
  cal.thresholds[K - 1] = 0.0;
  cal.target_exits[K - 1] = n_total >= assigned ? n_total - assigned : 0;
  cal.exit_counts[K - 1] = alive.size();
  return cal;
}

std::size_t exit_index(std::span<const double> confidences, std::span<const double> thresholds) {
  const std::size_t K = thresholds.size();
  for (std::size_t k = 0; k + 1 < K; ++k) {
    if (confidences[k] >= thresholds[k]) return k + 1;
  }
  return K;
}

nlohmann::json to_json(const ExitPlan& plan) {
  return nlohmann::json{
      {"q", plan.q},
      {"exit_probs", plan.exit_probs},
      {"thresholds", plan.thresholds},
      {"costs", plan.costs},
      {"budget", plan.budget},
      {"batch_size", plan.batch_size},
      {"clamp", plan.clamp},
      {"config_hash", plan.config_hash},
  };
}

ExitPlan exit_plan_from_json(const nlohmann::json& j) {
  ExitPlan p;
  try {
    p.q = j.at("q").get<double>();
    p.exit_probs = j.at("exit_probs").get<std::vector<double>>();
    p.thresholds = j.at("thresholds").get<std::vector<double>>();
    p.costs = j.at("costs").get<std::vector<double>>();
    p.budget = j.at("budget").get<double>();
    p.batch_size = j.at("batch_size").get<std::size_t>();
    p.clamp = j.value("clamp", std::string("none"));
    p.config_hash = j.value("config_hash", std::string());
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed exit plan: ") + e.what());
  }
  const std::size_t K = p.thresholds.size();
  if (K == 0 || p.exit_probs.size() != K || p.costs.size() != K) {
    throw InputError("exit plan arrays must all have K entries");
  }
  if (p.thresholds.back() != 0.0) throw InputError("exit plan: the final threshold must be 0");
  return p;
}

}  // namespace msdnet
