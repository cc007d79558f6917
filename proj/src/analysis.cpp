#include "t3d/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "t3d/decoder.hpp"
#include "t3d/errors.hpp"

namespace t3d {

void ExactDistribution::validate(double tol) const {
  if (support.size() != probs.size()) throw DimensionError("distribution: support and probs differ in length");
  std::set<Tokens> seen;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (!(probs[i] >= 0.0)) throw DomainError("distribution: negative or NaN probability");
    if (!seen.insert(support[i]).second) throw DomainError("distribution: duplicate support entry");
  }
  if (std::abs(mass() - 1.0) > tol) throw DomainError("distribution: probabilities do not sum to 1");
}

double ExactDistribution::mass() const { return std::accumulate(probs.begin(), probs.end(), 0.0); }

namespace {

std::map<Tokens, double> as_map(const ExactDistribution& d) {
  std::map<Tokens, double> m;
  for (std::size_t i = 0; i < d.probs.size(); ++i) m[d.support[i]] += d.probs[i];
  return m;
}

double kl_maps(const std::map<Tokens, double>& p, const std::map<Tokens, double>& q) {
  double kl = 0.0;
  for (const auto& [x, px] : p) {
    if (px <= 0.0) continue;
    auto it = q.find(x);
    const double qx = it == q.end() ? 0.0 : it->second;
    if (qx <= 0.0) throw DomainError("KL: p has mass where q has none (absolute continuity violated)");
    kl += px * std::log(px / qx);
  }
  return kl;
}

// y -> (P(y), x -> P(x|y))
using Conditionals = std::map<Tokens, std::pair<double, std::map<Tokens, double>>>;

Conditionals split_joint(const ExactDistribution& joint, std::size_t x_len) {
  Conditionals out;
  for (std::size_t i = 0; i < joint.probs.size(); ++i) {
    const auto& tup = joint.support[i];
    if (tup.size() < x_len) throw DimensionError("joint: tuple shorter than x_len");
    Tokens x(tup.begin(), tup.begin() + static_cast<std::ptrdiff_t>(x_len));
    Tokens y(tup.begin() + static_cast<std::ptrdiff_t>(x_len), tup.end());
    auto& slot = out[y];
    slot.first += joint.probs[i];
    slot.second[x] += joint.probs[i];
  }
  for (auto& [y, slot] : out) {
    if (slot.first <= 0.0) continue;
    for (auto& [x, p] : slot.second) p /= slot.first;
  }
  return out;
}

}  // namespace

double kl_divergence(const ExactDistribution& p, const ExactDistribution& q) { return kl_maps(as_map(p), as_map(q)); }

ExactDistribution enumerate_posterior(const DenoiserParams& params, const Tokens& xt,
                                      const std::vector<std::size_t>& positions, double capacity) {
  const auto V = static_cast<std::size_t>(params.config.vocab_size);
  if (std::pow(static_cast<double>(V), static_cast<double>(positions.size())) > capacity) {
    throw CapacityError("enumerate_posterior: |V|^k exceeds the enumeration guard");
  }
  ExactDistribution d;
  if (positions.empty()) {
    d.support.push_back({});
    d.probs.push_back(1.0);
    return d;
  }
  numcore::Tape tape(false);
  auto lp = numcore::log_softmax_rows(tape, forward_logits(tape, params, xt));
  std::vector<std::size_t> idx(positions.size(), 0);
  for (;;) {
    Tokens tup(positions.size());
    double logp = 0.0;
    for (std::size_t k = 0; k < positions.size(); ++k) {
      tup[k] = static_cast<Token>(idx[k]);
      logp += lp.at(positions[k], idx[k]);
    }
    d.support.push_back(std::move(tup));
    d.probs.push_back(std::exp(logp));
    std::size_t k = positions.size();
    while (k > 0 && ++idx[k - 1] == V) idx[--k] = 0;
    if (k == 0) break;
  }
  return d;
}

double conditional_tc(const ExactDistribution& joint, std::size_t x_len) {
  double tc = 0.0;
  for (const auto& [y, slot] : split_joint(joint, x_len)) {
    if (slot.first <= 0.0) continue;
    std::vector<std::map<Token, double>> marg(x_len);
    for (const auto& [x, p] : slot.second) {
      for (std::size_t i = 0; i < x_len; ++i) marg[i][x[i]] += p;
    }
    double kl = 0.0;
    for (const auto& [x, p] : slot.second) {
      if (p <= 0.0) continue;
      double logq = 0.0;
      for (std::size_t i = 0; i < x_len; ++i) logq += std::log(marg[i][x[i]]);
      kl += p * (std::log(p) - logq);
    }
    tc += slot.first * std::max(0.0, kl);  // KL >= 0; drop rounding below zero
  }
  return tc;
}

KlDecomposition kl_decomposition_check(const ExactDistribution& p, const ExactDistribution& q, std::size_t x_len) {
  KlDecomposition r;
  r.lhs = kl_divergence(p, q);
  auto cp = split_joint(p, x_len);
  auto cq = split_joint(q, x_len);
  std::map<Tokens, double> py, qy;
  for (const auto& [y, slot] : cp) py[y] = slot.first;
  for (const auto& [y, slot] : cq) qy[y] = slot.first;
  r.marginal = kl_maps(py, qy);
  for (const auto& [y, slot] : cp) {
    if (slot.first <= 0.0) continue;
    r.expected_conditional += slot.first * kl_maps(slot.second, cq.at(y).second);
  }
  r.rhs = r.marginal + r.expected_conditional;
  r.residual = std::abs(r.lhs - r.rhs);
  return r;
}

std::vector<double> geometric_mixture(const std::vector<double>& q0, const std::vector<double>& q1, double l) {
  if (q0.size() != q1.size()) throw DimensionError("geometric_mixture: size mismatch");
  std::vector<double> lg(q0.size());
  double mx = -INFINITY;
  for (std::size_t i = 0; i < q0.size(); ++i) {
    if (!(q0[i] > 0.0 && q1[i] > 0.0)) throw DomainError("geometric_mixture: endpoints must be strictly positive");
    lg[i] = (1.0 - l) * std::log(q0[i]) + l * std::log(q1[i]);
    mx = std::max(mx, lg[i]);
  }
  double z = 0.0;
  for (double& v : lg) z += (v = std::exp(v - mx));
  for (double& v : lg) v /= z;
  return lg;
}

double kl_vectors(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw DimensionError("KL: size mismatch");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    if (q[i] <= 0.0) throw DomainError("KL: p has mass where q has none (absolute continuity violated)");
    kl += p[i] * std::log(p[i] / q[i]);
  }
  return kl;
}

PythagoreanCheck pythagorean_check(const std::vector<double>& p, const std::vector<double>& q0,
                                   const std::vector<double>& q1, double lambda_r, std::size_t grid) {
  if (grid < 2) throw ConfigError("pythagorean_check: grid needs at least two points");
  if (!(lambda_r >= 0.0 && lambda_r <= 1.0)) throw DomainError("pythagorean_check: lambda_r outside [0, 1]");
  std::vector<double> f(p.size());
  double ep = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    f[i] = std::log(q1[i]) - std::log(q0[i]);
    ep += p[i] * f[i];
  }
  // d/dl KL(p || q_l) = E_{q_l} f - E_p f, non-decreasing in l.
  auto slope = [&](double l) {
    auto q = geometric_mixture(q0, q1, l);
    double eq = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) eq += q[i] * f[i];
    return eq - ep;
  };

  std::size_t best = 0;
  double best_kl = INFINITY;
  for (std::size_t g = 0; g < grid; ++g) {
    const double l = static_cast<double>(g) / static_cast<double>(grid - 1);
    const double kl = kl_vectors(p, geometric_mixture(q0, q1, l));
    if (kl < best_kl) {
      best_kl = kl;
      best = g;
    }
  }
  const double step = 1.0 / static_cast<double>(grid - 1);
  double lo = std::max(0.0, (static_cast<double>(best) - 1.0) * step);
  double hi = std::min(1.0, (static_cast<double>(best) + 1.0) * step);
  double l_star;
  if (slope(lo) >= 0.0) {
    l_star = lo;
  } else if (slope(hi) <= 0.0) {
    l_star = hi;
  } else {
    for (int it = 0; it < 200 && hi - lo > 1e-17; ++it) {
      const double mid = 0.5 * (lo + hi);
      (slope(mid) < 0.0 ? lo : hi) = mid;
    }
    l_star = 0.5 * (lo + hi);
  }

  PythagoreanCheck r;
  r.lambda_star = l_star;
  r.lambda_r = lambda_r;
  const auto qs = geometric_mixture(q0, q1, l_star);
  const auto rr = geometric_mixture(q0, q1, lambda_r);
  r.kl_p_r = kl_vectors(p, rr);
  r.kl_p_qstar = kl_vectors(p, qs);
  r.kl_qstar_r = kl_vectors(qs, rr);
  r.slack = r.kl_p_r - r.kl_p_qstar - r.kl_qstar_r;
  return r;
}

std::vector<DecodePath> enumerate_decode_paths(const DenoiserParams& params, const Tokens& prompt, std::size_t gen_len,
                                               std::size_t tokens_per_step, double temperature, double max_leaves) {
  if (!(temperature > 0.0)) throw ConfigError("enumerate_decode_paths: temperature must be > 0");
  if (tokens_per_step < 1 || gen_len % tokens_per_step != 0) {
    throw ConfigError("enumerate_decode_paths: tokens_per_step must divide gen_len");
  }
  const auto V = static_cast<double>(params.config.vocab_size - 1);
  if (std::pow(V, static_cast<double>(gen_len)) > max_leaves) {
    throw CapacityError("enumerate_decode_paths: decoding tree exceeds the enumeration guard");
  }
  const Token mask = static_cast<Token>(params.config.mask_id);
  const std::size_t P = prompt.size();
  Tokens start = prompt;
  start.resize(P + gen_len, mask);

  std::vector<DecodePath> done;
  std::vector<DecodePath> frontier{{1.0, {start}}};
  while (!frontier.empty()) {
    std::vector<DecodePath> next;
    for (auto& path : frontier) {
      const Tokens& x = path.states.back();
      numcore::Tape tape(false);
      auto logits = forward_logits(tape, params, x);
      const std::size_t cols = logits.cols();
      std::vector<std::size_t> masked;
      std::vector<std::vector<double>> dists;
      std::vector<double> conf;
      for (std::size_t i = P; i < x.size(); ++i) {
        if (x[i] != mask) continue;
        masked.push_back(i);
        dists.push_back(decoding_distribution(logits.values().subspan(i * cols, cols), temperature, mask));
        conf.push_back(*std::max_element(dists.back().begin(), dists.back().end()));
      }
      std::vector<std::size_t> rank(masked.size());
      std::iota(rank.begin(), rank.end(), 0);
      std::stable_sort(rank.begin(), rank.end(), [&](std::size_t a, std::size_t b) { return conf[a] > conf[b]; });
      std::vector<std::size_t> chosen(rank.begin(), rank.begin() + static_cast<std::ptrdiff_t>(tokens_per_step));
      std::sort(chosen.begin(), chosen.end());

      // Odometer over token assignments of the chosen positions.
      std::vector<std::size_t> tok(chosen.size(), 0);
      for (;;) {
        double pr = path.prob;
        Tokens y = x;
        for (std::size_t k = 0; k < chosen.size(); ++k) {
          pr *= dists[chosen[k]][tok[k]];
          y[masked[chosen[k]]] = static_cast<Token>(tok[k]);
        }
        if (pr > 0.0) {
          DecodePath child{pr, path.states};
          child.states.push_back(std::move(y));
          (masked.size() == tokens_per_step ? done : next).push_back(std::move(child));
        }
        std::size_t k = chosen.size();
        while (k > 0 && ++tok[k - 1] == cols) tok[--k] = 0;
        if (k == 0) break;
      }
    }
    frontier = std::move(next);
  }
  return done;
}

namespace {

Tokens region(const Tokens& s, std::size_t P) { return Tokens(s.begin() + static_cast<std::ptrdiff_t>(P), s.end()); }

Tokens concat(const Tokens& a, const Tokens& b) {
  Tokens r = a;
  r.insert(r.end(), b.begin(), b.end());
  return r;
}

struct PromptTc {
  double x0_given_xt = 0.0;
  double xt_given_xT = 0.0;
  bool exact = true;
};

// Weighted paths, either enumerated or sampled.
std::vector<DecodePath> decode_paths(const DenoiserParams& params, const Tokens& prompt, std::size_t k,
                                     const TcReportOptions& opts, Rng& rng, bool& exact) {
  try {
    exact = true;
    return enumerate_decode_paths(params, prompt, opts.gen_len, k, opts.temperature, opts.max_leaves);
  } catch (const CapacityError&) {
    exact = false;
  }
  DecodeConfig cfg;
  cfg.block_size = static_cast<int>(opts.gen_len);
  cfg.max_new_tokens = static_cast<int>(opts.gen_len);
  cfg.temperature = opts.temperature;
  cfg.mode = k == 1 ? DecodeMode::Full : DecodeMode::Static;
  cfg.steps_per_block = static_cast<int>(opts.gen_len / k);
  std::vector<DecodePath> out;
  const double w = 1.0 / static_cast<double>(opts.fallback_rollouts);
  for (std::size_t n = 0; n < opts.fallback_rollouts; ++n) {
    auto traj = decode(params, prompt, cfg, rng, {.record_states = true});
    out.push_back({w, traj.states});
  }
  return out;
}

PromptTc prompt_tc(const DenoiserParams& params, const Tokens& prompt, std::size_t k, const TcReportOptions& opts,
                   Rng& rng) {
  PromptTc r;
  auto paths = decode_paths(params, prompt, k, opts, rng, r.exact);
  const std::size_t P = prompt.size();
  const std::size_t steps = opts.gen_len / k;
  for (std::size_t t = 0; t < steps; ++t) {
    std::map<Tokens, double> j0, jT;
    for (const auto& path : paths) {
      const Tokens xt = region(path.states[t], P);
      j0[concat(region(path.states.back(), P), xt)] += path.prob;
      jT[concat(xt, region(path.states.front(), P))] += path.prob;
    }
    auto to_dist = [](const std::map<Tokens, double>& m) {
      ExactDistribution d;
      for (const auto& [x, p] : m) {
        d.support.push_back(x);
        d.probs.push_back(p);
      }
      return d;
    };
    r.x0_given_xt += conditional_tc(to_dist(j0), opts.gen_len) / static_cast<double>(steps);
    r.xt_given_xT += conditional_tc(to_dist(jT), opts.gen_len) / static_cast<double>(steps);
  }
  return r;
}

std::pair<double, double> mean_se(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / n;
  if (v.size() < 2) return {m, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / (n - 1.0) / n)};
}

}  // namespace

TcReport tc_reduction_report(const DenoiserParams& teacher, const DenoiserParams& student,
                             const std::vector<Tokens>& prompts, const TcReportOptions& opts) {
  if (prompts.empty()) throw ConfigError("tc report: no prompts");
  if (!(teacher.config == student.config)) throw ConfigError("tc report: teacher and student configs differ");
  Rng rng(opts.seed);
  std::vector<double> tv, sv, xv, gv;
  TcReport rep;
  for (const auto& prompt : prompts) {
    auto t = prompt_tc(teacher, prompt, opts.teacher_tokens_per_step, opts, rng);
    auto s = prompt_tc(student, prompt, opts.student_tokens_per_step, opts, rng);
    rep.exact = rep.exact && t.exact && s.exact;
    tv.push_back(t.x0_given_xt);
    sv.push_back(s.x0_given_xt);
    // The x_t | x_T term is not optimised by distillation; both sides use the teacher's.
    xv.push_back(t.xt_given_xT);
    gv.push_back(t.x0_given_xt - s.x0_given_xt);
  }
  std::tie(rep.teacher_tc, rep.teacher_se) = mean_se(tv);
  std::tie(rep.student_tc, rep.student_se) = mean_se(sv);
  std::tie(rep.tc_xt_given_xT, rep.tc_xt_given_xT_se) = mean_se(xv);
  std::tie(rep.gap, rep.gap_se) = mean_se(gv);
  rep.n_prompts = prompts.size();
  const std::size_t n = prompts.size();
  rep.rows = {
      {"teacher_tc_x0_given_xt", rep.teacher_tc, rep.teacher_se, n},
      {"student_tc_x0_given_xt", rep.student_tc, rep.student_se, n},
      {"tc_xt_given_xT", rep.tc_xt_given_xT, rep.tc_xt_given_xT_se, n},
      {"teacher_tc_total", rep.teacher_tc + rep.tc_xt_given_xT, rep.teacher_se, n},
      {"student_tc_total", rep.student_tc + rep.tc_xt_given_xT, rep.student_se, n},
      {"tc_gap", rep.gap, rep.gap_se, n},
  };
  return rep;
}

std::string tc_report_csv(const TcReport& report) {
  std::ostringstream os;
  os.precision(12);
  os << "quantity,value,std_err,n_samples\n";
  for (const auto& r : report.rows) os << r.quantity << ',' << r.value << ',' << r.std_err << ',' << r.n_samples << '\n';
  return os.str();
}

void write_tc_report(const std::filesystem::path& path, const TcReport& report) {
  std::ofstream os(path);
  if (!os) throw StateError("cannot open " + path.string() + " for writing");
  os << tc_report_csv(report);
}

}  // namespace t3d
