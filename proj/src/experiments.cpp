#include "bregiot/experiments.hpp"

#include "bregiot/closed_form.hpp"
#include "bregiot/errors.hpp"
#include "bregiot/io.hpp"
#include "bregiot/transport.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <filesystem>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <thread>

#ifndef BREGIOT_VERSION
#define BREGIOT_VERSION "0.0.0"
#endif

namespace bregiot {

namespace {

using nlohmann::json;

template <class Fn>
void parallel_for(int count, int threads, Fn&& fn) {
  threads = std::clamp(threads, 1, std::max(count, 1));
  if (threads == 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  pool.reserve(std::size_t(threads));
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (int i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

SetKind sampled_set_kind(const std::string& id) {
  if (id == "sh") return SetKind::sh;
  if (id == "ed") return SetKind::ed;
  throw DomainError("ground-truth costs can be sampled for sets sh and ed only, got " + id);
}

double mean_of(const std::vector<double>& xs) {
  if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(xs.begin(), xs.end(), 0.0) / double(xs.size());
}

std::vector<double> ranks(const std::vector<double>& xs) {
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return xs[a] < xs[b]; });
  std::vector<double> r(xs.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && xs[order[j + 1]] == xs[order[i]]) ++j;
    const double avg = 0.5 * double(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  const auto ra = ranks(a);
  const auto rb = ranks(b);
  const double ma = mean_of(ra);
  const double mb = mean_of(rb);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  return saa > 0.0 && sbb > 0.0 ? sab / std::sqrt(saa * sbb)
                                : std::numeric_limits<double>::quiet_NaN();
}

// NaN and inf are not representable in JSON; they are emitted as null.
json num(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

json report_skeleton(const std::string& experiment, const json& config, std::uint64_t seed) {
  return {{"experiment", experiment},
          {"config", config},
          {"seed", seed},
          {"versions", version_info()}};
}

BcdConfig bcd_from(const ExperimentConfig& cfg) {
  BcdConfig bcd;
  bcd.max_iters = cfg.max_iters;
  bcd.kkt_tol = cfg.kkt_tol;
  bcd.cost_step = cfg.cost_step;
  return bcd;
}

Matrix forward_plan(const Matrix& cost, const Vector& mu, const Vector& nu, double gamma,
                    const Generator& gen, int max_sweeps = SolverConfig{}.max_sweeps) {
  SolverConfig sc;
  sc.max_sweeps = max_sweeps;
  return solve_forward(TransportProblem{cost, mu, nu, gamma, gen}, sc).plan;
}

double relative_or_absolute(const Matrix& truth, const Matrix& estimate, bool& absolute) {
  const double denom = truth.norm();
  absolute = denom < 1e-12;
  return absolute ? (truth - estimate).norm() : (truth - estimate).norm() / denom;
}

// --- matching helpers -------------------------------------------------------

struct Couple {
  int man_type;
  int woman_type;
};

std::vector<Couple> expand_counts(const Matrix& counts) {
  std::vector<Couple> out;
  for (Eigen::Index i = 0; i < counts.rows(); ++i) {
    for (Eigen::Index j = 0; j < counts.cols(); ++j) {
      const double c = counts(i, j);
      const double r = std::round(c);
      if (std::abs(c - r) > 1e-9) {
        throw DataError("matching.csv row " + std::to_string(i + 1) + ", column " +
                        std::to_string(j + 1) +
                        ": fold splitting needs integer counts, got " + std::to_string(c));
      }
      for (long long k = 0; k < static_cast<long long>(r); ++k) {
        out.push_back({int(i), int(j)});
      }
    }
  }
  return out;
}

std::vector<Matrix> split_couples(std::vector<Couple> couples, Eigen::Index rows,
                                  Eigen::Index cols, int folds, std::uint64_t seed) {
  if (folds < 1) throw DomainError("folds must be at least 1");
  Rng rng(sub_seed(seed, 0xf01d));
  std::shuffle(couples.begin(), couples.end(), rng);
  std::vector<Matrix> out(std::size_t(folds), Matrix::Zero(rows, cols));
  for (std::size_t k = 0; k < couples.size(); ++k) {
    out[k % std::size_t(folds)](couples[k].man_type, couples[k].woman_type) += 1.0;
  }
  return out;
}

std::vector<Eigen::Index> positive_indices(const Vector& x) {
  std::vector<Eigen::Index> idx;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (x(i) > 0.0) idx.push_back(i);
  }
  return idx;
}

Matrix take_cols(const Matrix& m, const std::vector<Eigen::Index>& idx) {
  Matrix out(m.rows(), Eigen::Index(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) out.col(Eigen::Index(k)) = m.col(idx[k]);
  return out;
}

Matrix take_block(const Matrix& m, const std::vector<Eigen::Index>& r,
                  const std::vector<Eigen::Index>& c) {
  Matrix out(Eigen::Index(r.size()), Eigen::Index(c.size()));
  for (std::size_t i = 0; i < r.size(); ++i) {
    for (std::size_t j = 0; j < c.size(); ++j) out(Eigen::Index(i), Eigen::Index(j)) = m(r[i], c[j]);
  }
  return out;
}

Vector take(const Vector& v, const std::vector<Eigen::Index>& idx) {
  Vector out(Eigen::Index(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) out(Eigen::Index(k)) = v(idx[k]);
  return out;
}

double rmse(const Matrix& a, const Matrix& b) {
  return std::sqrt((a - b).squaredNorm() / double(a.size()));
}

double mae(const Matrix& a, const Matrix& b) { return (a - b).cwiseAbs().sum() / double(a.size()); }

struct TypedData {
  Matrix u0;
  Matrix v0;
  std::vector<Couple> couples;  // empty when counts are used directly
  Matrix counts;
  json clustering;
};

TypedData clustered_types(const MatchingDataset& ds, const MatchingConfig& cfg) {
  const Eigen::Index dim = ds.individuals.cols() - 2;
  std::vector<Eigen::Index> men_rows, women_rows;
  for (Eigen::Index r = 0; r < ds.individuals.rows(); ++r) {
    (ds.individuals(r, 1) == 0.0 ? men_rows : women_rows).push_back(r);
  }
  auto features = [&](const std::vector<Eigen::Index>& rows) {
    Matrix f(Eigen::Index(rows.size()), dim);
    for (std::size_t k = 0; k < rows.size(); ++k) {
      f.row(Eigen::Index(k)) = ds.individuals.row(rows[k]).tail(dim);
    }
    return f;
  };
  const KMeansResult km_men = kmeans(features(men_rows), cfg.k_cluster, sub_seed(cfg.seed, 1));
  const KMeansResult km_women =
      kmeans(features(women_rows), cfg.k_cluster, sub_seed(cfg.seed, 2));

  std::map<long long, int> man_type, woman_type;
  for (std::size_t k = 0; k < men_rows.size(); ++k) {
    man_type[std::llround(ds.individuals(men_rows[k], 0))] = km_men.labels[k];
  }
  for (std::size_t k = 0; k < women_rows.size(); ++k) {
    woman_type[std::llround(ds.individuals(women_rows[k], 0))] = km_women.labels[k];
  }

  TypedData out;
  out.u0 = km_men.centroids.transpose();
  out.v0 = km_women.centroids.transpose();
  out.counts = Matrix::Zero(cfg.k_cluster, cfg.k_cluster);
  for (Eigen::Index r = 0; r < ds.pairs.rows(); ++r) {
    const Couple c{man_type.at(std::llround(ds.pairs(r, 0))),
                   woman_type.at(std::llround(ds.pairs(r, 1)))};
    out.couples.push_back(c);
    out.counts(c.man_type, c.woman_type) += 1.0;
  }
  out.clustering = {{"k_cluster", cfg.k_cluster},
                    {"rounds_men", km_men.rounds},
                    {"rounds_women", km_women.rounds}};
  return out;
}

json evaluate_fold(const TypedData& data, const Matrix& train_counts, const Matrix& test_counts,
                   const MatchingConfig& cfg) {
  const Generator gen = Generator::entropy();
  const Matrix x_train = train_counts / train_counts.sum();
  const auto rows_tr = positive_indices(x_train.rowwise().sum());
  const auto cols_tr = positive_indices(x_train.colwise().sum().transpose());
  const Matrix x_sub = take_block(x_train, rows_tr, cols_tr);
  const Matrix u_tr = take_cols(data.u0, rows_tr);
  const Matrix v_tr = take_cols(data.v0, cols_tr);

  BcdConfig bcd;
  bcd.max_iters = cfg.max_iters;
  bcd.kkt_tol = cfg.kkt_tol;
  bcd.allow_zero_entries = true;
  const IotSolution sol =
      solve_iot(x_sub, x_sub.rowwise().sum(), x_sub.colwise().sum().transpose(), cfg.gamma,
                cfg.lambda, ConstraintSet::affine(u_tr, v_tr), gen, bcd);
  // Learned interaction matrix, so the cost extends to types absent from training.
  const Matrix a_hat = -pseudoinverse(u_tr.transpose()) * sol.cost * pseudoinverse(v_tr);

  const Matrix x_test = test_counts / test_counts.sum();
  const Vector mu_te = x_test.rowwise().sum();
  const Vector nu_te = x_test.colwise().sum().transpose();
  const auto rows_te = positive_indices(mu_te);
  const auto cols_te = positive_indices(nu_te);
  const Matrix c_pred = -take_cols(data.u0, rows_te).transpose() * a_hat *
                        take_cols(data.v0, cols_te);
  Vector mu_sub = take(mu_te, rows_te);
  Vector nu_sub = take(nu_te, cols_te);
  mu_sub /= mu_sub.sum();
  nu_sub /= nu_sub.sum();
  const Matrix plan_sub = forward_plan(c_pred, mu_sub, nu_sub, cfg.gamma, gen);
  Matrix pred = Matrix::Zero(x_test.rows(), x_test.cols());
  for (std::size_t i = 0; i < rows_te.size(); ++i) {
    for (std::size_t j = 0; j < cols_te.size(); ++j) {
      pred(rows_te[i], cols_te[j]) = plan_sub(Eigen::Index(i), Eigen::Index(j));
    }
  }
  const Matrix baseline = mu_te * nu_te.transpose();

  return {{"train_couples", train_counts.sum()},
          {"test_couples", test_counts.sum()},
          {"rmse", rmse(pred, x_test)},
          {"mae", mae(pred, x_test)},
          {"random_rmse", rmse(baseline, x_test)},
          {"random_mae", mae(baseline, x_test)},
          {"iterations", sol.report.iterations},
          {"final_residual", sol.report.residual.back()},
          {"termination", to_string(sol.report.reason)},
          {"wall_seconds", sol.report.wall_seconds},
          {"plan_in_target_set", target_set_contains(gen, plan_sub, mu_sub, nu_sub, 1e-8)}};
}

void require_matrix_entries(const Matrix& m, const std::string& file, bool nonnegative) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const double x = m(i, j);
      if (!std::isfinite(x) || (nonnegative && x < 0.0)) {
        throw DataError(file + " row " + std::to_string(i + 1) + ", column " +
                        std::to_string(j + 1) + ": invalid entry " + std::to_string(x));
      }
    }
  }
}

}  // namespace

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(seed ^ splitmix64(index));
}

Vector sample_marginal(Rng& rng, Eigen::Index n) {
  std::uniform_real_distribution<double> unif(0.1, 1.0);
  Vector m(n);
  for (Eigen::Index i = 0; i < n; ++i) m(i) = unif(rng);
  return m / m.sum();
}

Matrix sample_cost(Rng& rng, Eigen::Index n, SetKind set) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Matrix c = Matrix::Zero(n, n);
  switch (set) {
    case SetKind::sh:
      for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) c(i, j) = c(j, i) = unif(rng);
      }
      return c;
    case SetKind::ed: {
      Matrix pts(n, 3);
      for (Eigen::Index i = 0; i < n; ++i) {
        for (int k = 0; k < 3; ++k) pts(i, k) = unif(rng);
      }
      for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
          c(i, j) = c(j, i) = (pts.row(i) - pts.row(j)).squaredNorm();
        }
      }
      return c;
    }
    default:
      throw DomainError("sample_cost supports sh and ed");
  }
}

std::vector<double> log_grid(double lo, double hi, int count) {
  if (!(lo > 0.0 && hi >= lo) || count < 1) throw DomainError("log_grid: need 0 < lo <= hi");
  std::vector<double> g(static_cast<std::size_t>(count));
  if (count == 1) {
    g[0] = lo;
    return g;
  }
  const double a = std::log10(lo), b = std::log10(hi);
  for (int k = 0; k < count; ++k) g[std::size_t(k)] = std::pow(10.0, a + (b - a) * k / (count - 1));
  g.back() = hi;
  return g;
}

void ExperimentConfig::validate() const {
  if (n < 2) throw DomainError("experiment config: n must be at least 2");
  if (trials < 1) throw DomainError("experiment config: trials must be at least 1");
  if (gammas.empty() || lambdas.empty()) throw DomainError("experiment config: empty grid");
  for (double g : gammas) {
    if (!(g > 0.0)) throw DomainError("experiment config: every gamma must be positive");
  }
  for (double l : lambdas) {
    if (!(l >= 0.0)) throw DomainError("experiment config: every lambda must be nonnegative");
  }
  if (threads < 1) throw DomainError("experiment config: threads must be at least 1");
  if (forward_max_sweeps < 1) {
    throw DomainError("experiment config: forward_max_sweeps must be at least 1");
  }
  Generator::parse(generator);
}

json to_json(const ExperimentConfig& cfg) {
  return {{"experiment", cfg.experiment},
          {"n", cfg.n},
          {"trials", cfg.trials},
          {"gammas", cfg.gammas},
          {"lambdas", cfg.lambdas},
          {"generator", cfg.generator},
          {"set", cfg.set},
          {"seed", cfg.seed},
          {"out", cfg.out},
          {"threads", cfg.threads},
          {"max_iters", cfg.max_iters},
          {"kkt_tol", cfg.kkt_tol},
          {"c_mode", cfg.cost_step == CostStep::newton ? "newton" : "pg"},
          {"cost_scale", cfg.cost_scale},
          {"noise_level", cfg.noise_level},
          {"epsilon", cfg.epsilon},
          {"forward_max_sweeps", cfg.forward_max_sweeps}};
}

ExperimentConfig experiment_config_from_json(const json& j) {
  // Only "experiment" is required; every other key defaults.
  ExperimentConfig cfg;
  cfg.experiment = j.at("experiment").get<std::string>();
  cfg.n = j.value("n", cfg.n);
  cfg.trials = j.value("trials", cfg.trials);
  cfg.gammas = j.value("gammas", cfg.gammas);
  cfg.lambdas = j.value("lambdas", cfg.lambdas);
  cfg.generator = j.value("generator", cfg.generator);
  cfg.set = j.value("set", cfg.set);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.out = j.value("out", cfg.out);
  cfg.threads = j.value("threads", cfg.threads);
  cfg.max_iters = j.value("max_iters", cfg.max_iters);
  cfg.kkt_tol = j.value("kkt_tol", cfg.kkt_tol);
  cfg.cost_step = j.value("c_mode", std::string("newton")) == "pg" ? CostStep::projected_gradient
                                                                   : CostStep::newton;
  cfg.cost_scale = j.value("cost_scale", cfg.cost_scale);
  cfg.noise_level = j.value("noise_level", cfg.noise_level);
  cfg.epsilon = j.value("epsilon", cfg.epsilon);
  cfg.forward_max_sweeps = j.value("forward_max_sweeps", cfg.forward_max_sweeps);
  return cfg;
}

json version_info() {
  return {{"bregiot", BREGIOT_VERSION},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                        "." + std::to_string(EIGEN_MINOR_VERSION)},
          {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
          {"cxx", long(__cplusplus)}};
}

// --- random marginals -------------------------------------------------------

json random_marginals_trial(const ExperimentConfig& cfg, std::uint64_t trial_seed) {
  json rec = {{"seed", trial_seed}};
  try {
    const Generator gen = Generator::parse(cfg.generator);
    const SetKind kind = sampled_set_kind(cfg.set);
    const ConstraintSet set = kind == SetKind::sh ? ConstraintSet::sh() : ConstraintSet::ed();
    const double gamma = cfg.gammas.front();
    const double lambda = cfg.lambdas.front();

    Rng rng(trial_seed);
    const Vector mu = sample_marginal(rng, cfg.n);
    const Vector nu = sample_marginal(rng, cfg.n);
    const Matrix cost = cfg.cost_scale * sample_cost(rng, cfg.n, kind);

    const Matrix x = forward_plan(cost, mu, nu, gamma, gen, cfg.forward_max_sweeps);
    const IotSolution sol = solve_iot(x, mu, nu, gamma, lambda, set, gen, bcd_from(cfg));
    const Matrix x_rec = forward_plan(sol.cost, mu, nu, gamma, gen, cfg.forward_max_sweeps);

    bool absolute = false;
    const double c_err = relative_or_absolute(cost, sol.cost, absolute);
    rec["ok"] = true;
    rec["c_err"] = c_err;
    rec["c_err_absolute"] = absolute;
    rec["x_err"] = (x - x_rec).norm() / x.norm();
    rec["iterations"] = sol.report.iterations;
    rec["final_residual"] = sol.report.residual.back();
    rec["termination"] = to_string(sol.report.reason);
    rec["monotone"] = sol.monotone;
    rec["plans_in_target_set"] = target_set_contains(gen, x, mu, nu, 1e-8) &&
                                 target_set_contains(gen, x_rec, mu, nu, 1e-8);
    rec["wall_seconds"] = sol.report.wall_seconds;
  } catch (const Error& e) {
    rec["ok"] = false;
    rec["error"] = e.what();
  }
  return rec;
}

json exp_random_marginals(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.gammas.size() != 1 || cfg.lambdas.size() != 1) {
    throw DomainError("exp-random takes a single gamma and a single lambda");
  }
  sampled_set_kind(cfg.set);

  std::vector<json> trials(static_cast<std::size_t>(cfg.trials));
  parallel_for(cfg.trials, cfg.threads, [&](int t) {
    trials[std::size_t(t)] = random_marginals_trial(cfg, sub_seed(cfg.seed, std::uint64_t(t)));
  });

  std::vector<double> c_err, x_err, wall;
  int failed = 0;
  for (const auto& t : trials) {
    if (!t["ok"].get<bool>()) {
      ++failed;
      continue;
    }
    c_err.push_back(t["c_err"].get<double>());
    x_err.push_back(t["x_err"].get<double>());
    wall.push_back(t["wall_seconds"].get<double>());
  }
  json rep = report_skeleton("exp-random", to_json(cfg), cfg.seed);
  rep["trials"] = trials;
  rep["aggregates"] = {{"mean_c_err", num(mean_of(c_err))},
                       {"mean_x_err", num(mean_of(x_err))},
                       {"mean_wall_seconds", num(mean_of(wall))},
                       {"failed_trials", failed}};
  rep["sampling"] = {{"marginals", "uniform(0.1, 1) entries, normalized"},
                     {"cost", cfg.set == "sh" ? "uniform(0, 1) upper triangle, symmetrized"
                                              : "squared distances of uniform points in [0, 1]^3"}};
  return rep;
}

// --- stability --------------------------------------------------------------

json exp_stability(const ExperimentConfig& cfg) {
  cfg.validate();
  const Generator gen = Generator::parse(cfg.generator);
  if (!gen.zero_limit_is_infinite()) {
    throw GeneratorError("exp-stability needs phi'_0 = -inf, got " + gen.id());
  }
  const int per_gamma = cfg.trials;
  const int total = int(cfg.gammas.size()) * per_gamma;

  std::vector<json> trials(static_cast<std::size_t>(total));
  parallel_for(total, cfg.threads, [&](int idx) {
    const std::uint64_t seed = sub_seed(cfg.seed, std::uint64_t(idx));
    const double gamma = cfg.gammas[std::size_t(idx / per_gamma)];
    json rec = {{"seed", seed}, {"gamma", gamma}};
    try {
      Rng rng(seed);
      const Vector mu = sample_marginal(rng, cfg.n);
      const Vector nu = sample_marginal(rng, cfg.n);
      const Matrix cost = sample_cost(rng, cfg.n, SetKind::sh);
      std::normal_distribution<double> normal(0.0, 1.0);
      Matrix noise(cfg.n, cfg.n);
      for (Eigen::Index k = 0; k < noise.size(); ++k) noise.data()[k] = normal(rng);
      const double delta = cfg.noise_level / max_abs(noise);
      const Matrix cost_pert = ConstraintSet::sh().project(cost + delta * noise);

      const Matrix x = forward_plan(cost, mu, nu, gamma, gen, cfg.forward_max_sweeps);
      const Matrix x_pert = forward_plan(cost_pert, mu, nu, gamma, gen, cfg.forward_max_sweeps);
      const double lhs = max_abs(cost_pert - cost);
      const double rhs = stability_rhs(gen, x_pert, x, gamma, cfg.epsilon);
      rec["ok"] = true;
      rec["lhs"] = lhs;
      rec["rhs"] = rhs;
      rec["pass"] = lhs <= rhs + 1e-9;
      rec["ratio"] = num(lhs > 0.0 ? rhs / lhs : std::numeric_limits<double>::infinity());
    } catch (const Error& e) {
      rec["ok"] = false;
      rec["pass"] = false;
      rec["error"] = e.what();
    }
    trials[std::size_t(idx)] = std::move(rec);
  });

  json buckets = json::array();
  std::vector<double> mean_ratios;
  int passed_all = 0, failed = 0;
  for (std::size_t g = 0; g < cfg.gammas.size(); ++g) {
    int passed = 0;
    std::vector<double> ratios;
    for (int t = 0; t < per_gamma; ++t) {
      const json& rec = trials[g * std::size_t(per_gamma) + std::size_t(t)];
      if (!rec["ok"].get<bool>()) ++failed;
      if (rec["pass"].get<bool>()) ++passed;
      if (rec.contains("ratio") && rec["ratio"].is_number()) ratios.push_back(rec["ratio"]);
    }
    passed_all += passed;
    const double mean_ratio = mean_of(ratios);
    mean_ratios.push_back(mean_ratio);
    buckets.push_back(
        {{"gamma", cfg.gammas[g]},
         {"pass_rate", double(passed) / per_gamma},
         {"min_ratio", num(ratios.empty() ? NAN : *std::min_element(ratios.begin(), ratios.end()))},
         {"mean_ratio", num(mean_ratio)},
         {"max_ratio", num(ratios.empty() ? NAN : *std::max_element(ratios.begin(), ratios.end()))}});
  }

  json rep = report_skeleton("exp-stability", to_json(cfg), cfg.seed);
  rep["trials"] = trials;
  rep["per_gamma"] = buckets;
  rep["aggregates"] = {{"pass_rate", double(passed_all) / total},
                       {"failed_trials", failed},
                       {"spearman_mean_ratio_vs_gamma", num(spearman(cfg.gammas, mean_ratios))}};
  return rep;
}

// --- lambda sweep -----------------------------------------------------------

json exp_lambda_sweep(const ExperimentConfig& cfg) {
  cfg.validate();
  const Generator gen = Generator::parse(cfg.generator);
  const SetKind kind = sampled_set_kind(cfg.set);
  const ConstraintSet set = kind == SetKind::sh ? ConstraintSet::sh() : ConstraintSet::ed();
  const double gamma = cfg.gammas.front();
  const std::uint64_t instance_seed = sub_seed(cfg.seed, 0);

  Rng rng(instance_seed);
  const Vector mu = sample_marginal(rng, cfg.n);
  const Vector nu = sample_marginal(rng, cfg.n);
  const Matrix cost = cfg.cost_scale * sample_cost(rng, cfg.n, kind);
  const Matrix x = forward_plan(cost, mu, nu, gamma, gen, cfg.forward_max_sweeps);

  const int count = int(cfg.lambdas.size());
  std::vector<json> points(static_cast<std::size_t>(count));
  parallel_for(count, cfg.threads, [&](int k) {
    const double lambda = cfg.lambdas[std::size_t(k)];
    json rec = {{"lambda", lambda}};
    try {
      const IotSolution sol = solve_iot(x, mu, nu, gamma, lambda, set, gen, bcd_from(cfg));
      const Matrix x_rec = forward_plan(sol.cost, mu, nu, gamma, gen, cfg.forward_max_sweeps);
      bool absolute = false;
      rec["ok"] = true;
      rec["c_err"] = relative_or_absolute(cost, sol.cost, absolute);
      rec["x_err"] = (x - x_rec).norm() / x.norm();
      rec["objective"] = sol.report.objective.back();
      rec["iterations"] = sol.report.iterations;
      rec["final_residual"] = sol.report.residual.back();
      rec["termination"] = to_string(sol.report.reason);
      rec["wall_seconds"] = sol.report.wall_seconds;
    } catch (const Error& e) {
      rec["ok"] = false;
      rec["error"] = e.what();
    }
    points[std::size_t(k)] = std::move(rec);
  });

  std::vector<json> c_err, x_err;
  for (const auto& p : points) {
    c_err.push_back(p["ok"].get<bool>() ? p["c_err"] : json(nullptr));
    x_err.push_back(p["ok"].get<bool>() ? p["x_err"] : json(nullptr));
  }
  json rep = report_skeleton("exp-lambda", to_json(cfg), cfg.seed);
  rep["instance_seed"] = instance_seed;
  rep["trials"] = points;
  rep["aggregates"] = {{"lambdas", cfg.lambdas}, {"c_err", c_err}, {"x_err", x_err}};
  return rep;
}

// --- matching ---------------------------------------------------------------

void MatchingDataset::validate() const {
  const Eigen::Index d = features_men.rows();
  const Eigen::Index n = features_men.cols();
  if (d == 0 || n == 0) throw DataError("types_men.csv: empty feature matrix");
  if (features_women.rows() != d) {
    throw DataError("types_women.csv: has " + std::to_string(features_women.rows()) +
                    " rows, types_men.csv has " + std::to_string(d));
  }
  if (matching.rows() != n || matching.cols() != features_women.cols()) {
    throw DataError("matching.csv: expected " + std::to_string(n) + "x" +
                    std::to_string(features_women.cols()) + ", got " +
                    std::to_string(matching.rows()) + "x" + std::to_string(matching.cols()));
  }
  require_matrix_entries(features_men, "types_men.csv", false);
  require_matrix_entries(features_women, "types_women.csv", false);
  require_matrix_entries(matching, "matching.csv", true);
  for (Eigen::Index i = 0; i < matching.rows(); ++i) {
    if (!(matching.row(i).sum() > 0.0)) {
      throw DataError("matching.csv row " + std::to_string(i + 1) + ": row sum is zero");
    }
  }
  for (Eigen::Index j = 0; j < matching.cols(); ++j) {
    if (!(matching.col(j).sum() > 0.0)) {
      throw DataError("matching.csv column " + std::to_string(j + 1) + ": column sum is zero");
    }
  }

  if (individuals.size() == 0 && pairs.size() == 0) return;
  if (individuals.cols() != 2 + d) {
    throw DataError("individuals.csv: expected " + std::to_string(2 + d) + " columns, got " +
                    std::to_string(individuals.cols()));
  }
  if (pairs.cols() != 2) throw DataError("pairs.csv: expected 2 columns");
  std::map<long long, double> sex_of;
  for (Eigen::Index r = 0; r < individuals.rows(); ++r) {
    const double sex = individuals(r, 1);
    if (sex != 0.0 && sex != 1.0) {
      throw DataError("individuals.csv row " + std::to_string(r + 1) +
                      ", column 2: sex must be 0 or 1");
    }
    if (!sex_of.emplace(std::llround(individuals(r, 0)), sex).second) {
      throw DataError("individuals.csv row " + std::to_string(r + 1) + ", column 1: duplicate id");
    }
  }
  require_matrix_entries(individuals, "individuals.csv", false);
  for (Eigen::Index r = 0; r < pairs.rows(); ++r) {
    for (int c = 0; c < 2; ++c) {
      const auto it = sex_of.find(std::llround(pairs(r, c)));
      if (it == sex_of.end() || it->second != double(c)) {
        throw DataError("pairs.csv row " + std::to_string(r + 1) + ", column " +
                        std::to_string(c + 1) + ": unknown " + (c == 0 ? "man" : "woman") +
                        " id");
      }
    }
  }
}

MatchingDataset load_matching_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  MatchingDataset ds;
  ds.features_men = read_matrix((root / "types_men.csv").string());
  ds.features_women = read_matrix((root / "types_women.csv").string());
  ds.matching = read_matrix((root / "matching.csv").string());
  const fs::path ind = root / "individuals.csv";
  const fs::path prs = root / "pairs.csv";
  if (fs::exists(ind) && fs::exists(prs)) {
    ds.individuals = read_matrix(ind.string());
    ds.pairs = read_matrix(prs.string());
  }
  ds.validate();
  return ds;
}

void save_matching_dataset(const std::string& dir, const MatchingDataset& ds) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
  write_matrix((root / "types_men.csv").string(), ds.features_men);
  write_matrix((root / "types_women.csv").string(), ds.features_women);
  write_matrix((root / "matching.csv").string(), ds.matching);
  if (ds.has_individuals()) {
    write_matrix((root / "individuals.csv").string(), ds.individuals);
    write_matrix((root / "pairs.csv").string(), ds.pairs);
  }
}

SyntheticMatching generate_synthetic_matching(const SyntheticMatchingConfig& cfg) {
  if (cfg.d < 1 || cfg.n_types < 2) throw DomainError("synthetic matching: need d >= 1, n >= 2");
  if (cfg.individuals && cfg.noiseless) {
    throw DomainError("synthetic matching: individuals need sampled (integer) counts");
  }
  if (!cfg.noiseless && cfg.total_pairs < 1) {
    throw DomainError("synthetic matching: total_pairs must be positive");
  }
  Rng rng(cfg.seed);
  std::normal_distribution<double> feature(0.0, 1.0 / std::sqrt(double(cfg.d)));
  std::normal_distribution<double> standard(0.0, 1.0);

  SyntheticMatching out;
  MatchingDataset& ds = out.dataset;
  ds.features_men.resize(cfg.d, cfg.n_types);
  ds.features_women.resize(cfg.d, cfg.n_types);
  for (Eigen::Index k = 0; k < ds.features_men.size(); ++k) ds.features_men.data()[k] = feature(rng);
  for (Eigen::Index k = 0; k < ds.features_women.size(); ++k) {
    ds.features_women.data()[k] = feature(rng);
  }
  out.planted_a.resize(cfg.d, cfg.d);
  for (Eigen::Index k = 0; k < out.planted_a.size(); ++k) out.planted_a.data()[k] = standard(rng);
  out.mu = sample_marginal(rng, cfg.n_types);
  out.nu = sample_marginal(rng, cfg.n_types);
  const Matrix cost = -ds.features_men.transpose() * out.planted_a * ds.features_women;
  out.plan = forward_plan(cost, out.mu, out.nu, cfg.gamma, Generator::entropy());

  if (cfg.noiseless) {
    ds.matching = out.plan * double(cfg.total_pairs);
    return out;
  }

  Matrix weights = out.plan;
  if (cfg.multiplicative_noise > 0.0) {
    for (Eigen::Index k = 0; k < weights.size(); ++k) {
      weights.data()[k] *= std::exp(cfg.multiplicative_noise * standard(rng));
    }
  }
  std::discrete_distribution<Eigen::Index> cell(weights.data(), weights.data() + weights.size());
  ds.matching = Matrix::Zero(cfg.n_types, cfg.n_types);
  const Eigen::Index n = cfg.n_types;
  std::vector<Couple> couples;
  couples.reserve(std::size_t(cfg.total_pairs));
  for (long long k = 0; k < cfg.total_pairs; ++k) {
    const Eigen::Index idx = cell(rng);  // column-major: row = idx % n
    ds.matching.data()[idx] += 1.0;
    if (cfg.individuals) couples.push_back({int(idx % n), int(idx / n)});
  }

  if (cfg.individuals) {
    std::normal_distribution<double> jitter(0.0, cfg.individual_jitter / std::sqrt(double(cfg.d)));
    const auto people = Eigen::Index(couples.size());
    ds.individuals.resize(2 * people, 2 + cfg.d);
    ds.pairs.resize(people, 2);
    for (Eigen::Index k = 0; k < people; ++k) {
      const auto& c = couples[std::size_t(k)];
      const Eigen::Index man = 2 * k, woman = 2 * k + 1;
      ds.individuals(man, 0) = double(man);
      ds.individuals(man, 1) = 0.0;
      ds.individuals(woman, 0) = double(woman);
      ds.individuals(woman, 1) = 1.0;
      for (int f = 0; f < cfg.d; ++f) {
        ds.individuals(man, 2 + f) = ds.features_men(f, c.man_type) + jitter(rng);
        ds.individuals(woman, 2 + f) = ds.features_women(f, c.woman_type) + jitter(rng);
      }
      ds.pairs(k, 0) = double(man);
      ds.pairs(k, 1) = double(woman);
    }
  }
  return out;
}

json to_json(const MatchingConfig& cfg) {
  return {{"folds", cfg.folds},         {"gamma", cfg.gamma},   {"lambda", cfg.lambda},
          {"max_iters", cfg.max_iters}, {"kkt_tol", cfg.kkt_tol}, {"k_cluster", cfg.k_cluster},
          {"seed", cfg.seed},           {"threads", cfg.threads}};
}

std::vector<Matrix> split_matching_folds(const Matrix& counts, int folds, std::uint64_t seed) {
  if (folds == 1) return {counts};
  return split_couples(expand_counts(counts), counts.rows(), counts.cols(), folds, seed);
}

KMeansResult kmeans(const Matrix& points, int k, std::uint64_t seed, int max_rounds) {
  const Eigen::Index n = points.rows();
  if (k < 1 || Eigen::Index(k) > n) throw DomainError("kmeans: need 1 <= k <= number of points");
  Rng rng(seed);

  // k-means++ seeding.
  KMeansResult res;
  res.centroids.resize(k, points.cols());
  std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
  res.centroids.row(0) = points.row(first(rng));
  Vector dist2 = (points.rowwise() - res.centroids.row(0)).rowwise().squaredNorm();
  for (int c = 1; c < k; ++c) {
    Eigen::Index pick = 0;
    if (dist2.sum() > 0.0) {
      std::discrete_distribution<Eigen::Index> draw(dist2.data(), dist2.data() + n);
      pick = draw(rng);
    }
    res.centroids.row(c) = points.row(pick);
    dist2 = dist2.cwiseMin((points.rowwise() - res.centroids.row(c)).rowwise().squaredNorm());
  }

  res.labels.assign(std::size_t(n), -1);
  for (res.rounds = 1; res.rounds <= max_rounds; ++res.rounds) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double best_d = (points.row(i) - res.centroids.row(0)).squaredNorm();
      for (int c = 1; c < k; ++c) {
        const double dc = (points.row(i) - res.centroids.row(c)).squaredNorm();
        if (dc < best_d) {
          best_d = dc;
          best = c;
        }
      }
      if (res.labels[std::size_t(i)] != best) {
        res.labels[std::size_t(i)] = best;
        changed = true;
      }
    }
    if (!changed) break;
    Matrix sums = Matrix::Zero(k, points.cols());
    std::vector<int> sizes(std::size_t(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(res.labels[std::size_t(i)]) += points.row(i);
      ++sizes[std::size_t(res.labels[std::size_t(i)])];
    }
    for (int c = 0; c < k; ++c) {
      if (sizes[std::size_t(c)] > 0) res.centroids.row(c) = sums.row(c) / sizes[std::size_t(c)];
    }
  }
  res.rounds = std::min(res.rounds, max_rounds);
  return res;
}

json exp_matching(const MatchingDataset& ds, const MatchingConfig& cfg) {
  ds.validate();
  if (cfg.folds < 1) throw DomainError("exp-matching: folds must be at least 1");
  if (!(cfg.gamma > 0.0)) throw DomainError("exp-matching: gamma must be positive");

  TypedData data;
  std::vector<Matrix> folds;
  if (cfg.k_cluster > 0) {
    if (!ds.has_individuals()) {
      throw DataError("exp-matching: k_cluster needs individuals.csv and pairs.csv");
    }
    data = clustered_types(ds, cfg);
    folds = cfg.folds == 1 ? std::vector<Matrix>{data.counts}
                           : split_couples(data.couples, data.counts.rows(), data.counts.cols(),
                                           cfg.folds, cfg.seed);
  } else {
    data.u0 = ds.features_men;
    data.v0 = ds.features_women;
    data.counts = ds.matching;
    folds = split_matching_folds(ds.matching, cfg.folds, cfg.seed);
  }
  if (data.u0.rows() > data.counts.rows() || data.v0.rows() > data.counts.cols()) {
    throw DataError("exp-matching: feature dimension " + std::to_string(data.u0.rows()) +
                    " exceeds the number of types " + std::to_string(data.counts.rows()));
  }

  Matrix reassembled = Matrix::Zero(data.counts.rows(), data.counts.cols());
  json fold_sizes = json::array();
  for (const auto& f : folds) {
    reassembled += f;
    fold_sizes.push_back(f.sum());
  }
  const bool partition_ok = cfg.folds == 1 || max_abs(reassembled - data.counts) == 0.0;

  std::vector<json> results(folds.size());
  parallel_for(int(folds.size()), cfg.threads, [&](int f) {
    const Matrix& test = folds[std::size_t(f)];
    const Matrix train = cfg.folds == 1 ? test : Matrix(data.counts - test);
    json rec = {{"fold", f}};
    try {
      rec.update(evaluate_fold(data, train, test, cfg));
      rec["ok"] = true;
    } catch (const Error& e) {
      rec["ok"] = false;
      rec["error"] = e.what();
    }
    results[std::size_t(f)] = std::move(rec);
  });

  std::vector<double> r, m, rr, rm;
  bool beats_random = true;
  for (const auto& rec : results) {
    if (!rec["ok"].get<bool>()) {
      beats_random = false;
      continue;
    }
    r.push_back(rec["rmse"]);
    m.push_back(rec["mae"]);
    rr.push_back(rec["random_rmse"]);
    rm.push_back(rec["random_mae"]);
    if (!(rec["rmse"].get<double>() < rec["random_rmse"].get<double>())) beats_random = false;
  }

  json rep = report_skeleton("exp-matching", to_json(cfg), cfg.seed);
  rep["dataset"] = {{"d", ds.features_men.rows()},
                    {"n_types", data.counts.rows()},
                    {"couples", data.counts.sum()}};
  if (!data.clustering.is_null()) rep["clustering"] = data.clustering;
  rep["fold_sizes"] = fold_sizes;
  rep["partition_ok"] = partition_ok;
  rep["trials"] = results;
  rep["aggregates"] = {{"mean_rmse", num(mean_of(r))},
                       {"mean_mae", num(mean_of(m))},
                       {"random_mean_rmse", num(mean_of(rr))},
                       {"random_mean_mae", num(mean_of(rm))},
                       {"solver_beats_random_every_fold", beats_random}};
  return rep;
}

}  // namespace bregiot
