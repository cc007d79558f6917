#pragma once

// Exact-enumeration tools for small discrete distributions: model
// posteriors, conditional total correlation, the KL chain rule, the
// Pythagorean inequality on geometric-mixture families, and a report that
// compares teacher and student trajectory joints.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "t3d/denoiser.hpp"
#include "t3d/types.hpp"

namespace t3d {

struct ExactDistribution {
  std::vector<Tokens> support;
  std::vector<double> probs;

  // Non-negative, sums to 1 within tol, distinct support entries.
  void validate(double tol = 1e-10) const;
  double mass() const;
};

// KL(p || q) over tuples. 0 log 0 = 0; p > 0 with q = 0 raises DomainError.
double kl_divergence(const ExactDistribution& p, const ExactDistribution& q);

// Product distribution of the per-position categoricals (full vocabulary)
// read from one forward pass on xt. CapacityError if |V|^k > capacity.
ExactDistribution enumerate_posterior(const DenoiserParams& params, const Tokens& xt,
                                      const std::vector<std::size_t>& positions, double capacity = 1e6);

// Joints over pairs are stored as concatenated tuples: the first `x_len`
// tokens are x (the variable whose dependence is measured) and the rest is
// the conditioning variable y.
//
// E_y[ KL( p(x|y) || prod_i p(x_i|y) ) ]. Conditioning values of zero
// probability are skipped.
double conditional_tc(const ExactDistribution& joint, std::size_t x_len);

struct KlDecomposition {
  double lhs = 0.0;       // KL(P(x,y) || Q(x,y))
  double marginal = 0.0;  // KL(P(y) || Q(y))
  double expected_conditional = 0.0;
  double rhs = 0.0;  // marginal + expected_conditional
  double residual = 0.0;
};

KlDecomposition kl_decomposition_check(const ExactDistribution& p, const ExactDistribution& q, std::size_t x_len);

// Geometric-mixture segment q_l ∝ q0^(1-l) q1^l, l in [0, 1].
std::vector<double> geometric_mixture(const std::vector<double>& q0, const std::vector<double>& q1, double l);

double kl_vectors(const std::vector<double>& p, const std::vector<double>& q);

struct PythagoreanCheck {
  double lambda_star = 0.0;  // M-projection of p onto the segment
  double lambda_r = 0.0;
  double kl_p_r = 0.0;
  double kl_p_qstar = 0.0;
  double kl_qstar_r = 0.0;
  double slack = 0.0;  // kl_p_r - kl_p_qstar - kl_qstar_r, >= 0 up to rounding
};

// q* = argmin_l KL(p || q_l) by a dense grid followed by bisection on the
// stationarity condition; r = q_{lambda_r}.
PythagoreanCheck pythagorean_check(const std::vector<double>& p, const std::vector<double>& q0,
                                   const std::vector<double>& q1, double lambda_r, std::size_t grid = 2001);

// One path of the low-confidence decoding tree over a single generation
// block: its probability and the state after each step (states[0] is the
// starting state).
struct DecodePath {
  double prob = 1.0;
  std::vector<Tokens> states;
};

// Every path of the decoder that commits `tokens_per_step` most confident
// positions per step and samples them independently at `temperature`
// (> 0) with the mask token excluded. CapacityError beyond max_leaves.
std::vector<DecodePath> enumerate_decode_paths(const DenoiserParams& params, const Tokens& prompt,
                                               std::size_t gen_len, std::size_t tokens_per_step,
                                               double temperature, double max_leaves = 1e6);

struct TcReportOptions {
  std::size_t gen_len = 3;  // one generation block
  std::size_t teacher_tokens_per_step = 1;
  std::size_t student_tokens_per_step = 3;
  double temperature = 1.0;
  double max_leaves = 1e6;
  std::size_t fallback_rollouts = 10000;  // per prompt when the tree is too large
  std::uint64_t seed = 0;
};

struct TcRow {
  std::string quantity;
  double value = 0.0;
  double std_err = 0.0;
  std::size_t n_samples = 0;
};

struct TcReport {
  double teacher_tc = 0.0;  // E_t TC(x0 | xt) under the teacher trajectory joint
  double teacher_se = 0.0;
  double student_tc = 0.0;  // same under the student's schedule
  double student_se = 0.0;
  double tc_xt_given_xT = 0.0;  // shared marginal term
  double tc_xt_given_xT_se = 0.0;
  double gap = 0.0;  // teacher - student
  double gap_se = 0.0;
  std::size_t n_prompts = 0;
  bool exact = true;  // false if any prompt fell back to sampling
  std::vector<TcRow> rows;
};

// E_t[TC] per prompt for teacher and student, averaged over `prompts`;
// standard errors from the spread across prompts.
TcReport tc_reduction_report(const DenoiserParams& teacher, const DenoiserParams& student,
                             const std::vector<Tokens>& prompts, const TcReportOptions& opts = {});

std::string tc_report_csv(const TcReport& report);
void write_tc_report(const std::filesystem::path& path, const TcReport& report);

}  // namespace t3d
