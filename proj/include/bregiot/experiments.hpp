#pragma once

#include "bregiot/constraint_sets.hpp"
#include "bregiot/generator.hpp"
#include "bregiot/iot_bcd.hpp"
#include "bregiot/types.hpp"

#include <json.hpp>

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace bregiot {

using Rng = std::mt19937_64;

// splitmix64 finalizer; sub_seed(seed, i) is the seed of trial i.
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t index);

// Entries i.i.d. uniform(0.1, 1), normalized to sum to one.
Vector sample_marginal(Rng& rng, Eigen::Index n);

// Ground-truth cost in `set`: sh draws the upper triangle uniform(0, 1) and
// mirrors it; ed takes squared distances of n points uniform in [0, 1]^3.
Matrix sample_cost(Rng& rng, Eigen::Index n, SetKind set);

// Log-spaced grid of `count` points from lo to hi inclusive.
std::vector<double> log_grid(double lo, double hi, int count);

struct ExperimentConfig {
  std::string experiment;
  int n = 10;
  int trials = 10;
  std::vector<double> gammas{1.0};
  std::vector<double> lambdas{1e-8};
  std::string generator = "entropy";
  std::string set = "sh";
  std::uint64_t seed = 0;
  std::string out;
  int threads = 1;
  int max_iters = 100;
  double kkt_tol = 1e-6;
  CostStep cost_step = CostStep::newton;
  // Multiplies the sampled ground-truth cost (0 gives the product plan).
  double cost_scale = 1.0;
  // Perturbation size for the stability sweep: delta = noise_level / |N|_inf.
  double noise_level = 0.01;
  // Floor added inside phi' by the stability bound.
  double epsilon = 1e-20;
  // Sweep cap for every forward solve the experiment performs. Small gamma
  // (0.01 in the stability sweep) can need more than the solver default.
  int forward_max_sweeps = 100000;

  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& cfg);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);

// Reports carry {experiment, config, seed, versions, trials, aggregates}.
// Wall-clock fields are the only entries that differ between identical runs.
nlohmann::json exp_random_marginals(const ExperimentConfig& cfg);
nlohmann::json exp_stability(const ExperimentConfig& cfg);
nlohmann::json exp_lambda_sweep(const ExperimentConfig& cfg);

// One exp_random_marginals trial from its recorded sub-seed.
nlohmann::json random_marginals_trial(const ExperimentConfig& cfg, std::uint64_t trial_seed);

struct MatchingDataset {
  Matrix features_men;    // d x n_types (U0)
  Matrix features_women;  // d x n_types (V0)
  Matrix matching;        // n_types x n_types counts
  // Optional raw data for the clustering path. Rows of `individuals` are
  // (id, sex, features...) with sex 0 for men and 1 for women; rows of `pairs`
  // are (man_id, woman_id).
  Matrix individuals;
  Matrix pairs;

  bool has_individuals() const { return individuals.size() > 0 && pairs.size() > 0; }
  void validate() const;
};

// Reads types_men.csv, types_women.csv and matching.csv from `dir`, plus
// individuals.csv and pairs.csv when both exist. Schema problems raise
// DataError naming the file, row and column.
MatchingDataset load_matching_dataset(const std::string& dir);
void save_matching_dataset(const std::string& dir, const MatchingDataset& ds);

struct SyntheticMatchingConfig {
  int d = 11;
  int n_types = 50;
  double gamma = 1.0;
  // Number of sampled couples; ignored when noiseless.
  long long total_pairs = 200000;
  // Counts equal total_pairs * X exactly (fractional).
  bool noiseless = false;
  // Standard deviation of the log-normal factor applied to X before sampling.
  double multiplicative_noise = 0.0;
  // Also emit one individual per person and the couple list.
  bool individuals = false;
  // Feature jitter of individuals around their type vector.
  double individual_jitter = 0.05;
  std::uint64_t seed = 0;
};

struct SyntheticMatching {
  MatchingDataset dataset;
  Matrix planted_a;
  Matrix plan;  // F(-U0^T A V0) on the sampled marginals
  Vector mu;
  Vector nu;
};

// Features i.i.d. N(0, 1/d), A i.i.d. N(0, 1), marginals as sample_marginal.
SyntheticMatching generate_synthetic_matching(const SyntheticMatchingConfig& cfg);

struct MatchingConfig {
  int folds = 5;
  double gamma = 1.0;
  double lambda = 0.0;
  int max_iters = 100;
  double kkt_tol = 1e-6;
  // When > 0 and the dataset has individuals, types are re-derived by k-means
  // with this many clusters per sex.
  int k_cluster = 0;
  std::uint64_t seed = 0;
  int threads = 1;
};

nlohmann::json to_json(const MatchingConfig& cfg);

// Assigns every couple (expanded from integer counts) to one of `folds` folds
// after a seeded shuffle. folds == 1 puts everything in fold 0.
std::vector<Matrix> split_matching_folds(const Matrix& counts, int folds, std::uint64_t seed);

// Lloyd's algorithm with k-means++ seeding on the rows of `points`. Ties in
// the assignment go to the lowest cluster index.
struct KMeansResult {
  std::vector<int> labels;
  Matrix centroids;  // k x dim
  int rounds = 0;
};
KMeansResult kmeans(const Matrix& points, int k, std::uint64_t seed, int max_rounds = 300);

// Five-fold (or in-sample for folds == 1) evaluation of the affine-set inverse
// against the product-plan baseline.
nlohmann::json exp_matching(const MatchingDataset& ds, const MatchingConfig& cfg);

nlohmann::json version_info();

}  // namespace bregiot
