#pragma once

#include <cstring>
#include <functional>

#include "tar/nn.hpp"

namespace tar {

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  long probes = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0.0;

  bool ok(double tol) const { return max_rel_err <= tol; }
};

struct GradCheckOptions {
  double eps = 1e-5;
  // 0 probes every element; otherwise a deterministic random subset per
  // parameter keeps end-to-end checks tractable.
  long max_probes_per_param = 0;
  uint64_t probe_seed = 17;
  // Probes whose first estimate misses this bound are retried at nearby step
  // sizes, keeping the best agreement. The base secant can straddle a relu
  // kink or a sampling cell edge (a smaller step recovers the local slope),
  // and a tiny gradient under a large output drowns in rounding (a larger
  // step denoises it). A wrong backward rule disagrees at every step size,
  // so refinement never hides one.
  double refine_threshold = 1e-6;
};

// Central-difference gradient verification. `f` must rebuild its graph on
// every call and be deterministic; the checker re-evaluates it and errors out
// if the two values differ bitwise, since finite differences are meaningless
// against a noisy function.
template <class S>
GradCheckReport grad_check(const std::function<Tensor<S>()>& f,
                           const std::vector<Parameter<S>*>& params,
                           const GradCheckOptions& opts = {}) {
  {
    NoGradScope<S> inference;
    S v0 = f().value();
    S v1 = f().value();
    if (std::memcmp(&v0, &v1, sizeof(S)) != 0)
      fail("grad_check", "function is not deterministic across evaluations");
  }

  for (auto* p : params) p->value.zero_grad();
  Tape<S> tape;
  {
    TapeScope<S> scope(tape);
    Tensor<S> loss = f();
    backward(loss, tape);
  }
  std::vector<std::vector<S>> analytic;
  for (auto* p : params) analytic.push_back(p->value.grad());

  GradCheckReport report;
  Rng rng(opts.probe_seed);
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto* p = params[pi];
    GradCheckEntry entry;
    entry.name = p->name;
    long n = p->value.numel();
    std::vector<long> probe_at;
    if (opts.max_probes_per_param > 0 && n > opts.max_probes_per_param) {
      for (long i = 0; i < opts.max_probes_per_param; ++i) probe_at.push_back(rng.index(n));
    } else {
      probe_at.resize(n);
      for (long i = 0; i < n; ++i) probe_at[i] = i;
    }
    NoGradScope<S> inference;
    for (long idx : probe_at) {
      double an = static_cast<double>(analytic[pi][idx]);
      auto rel_at = [&](double eps) {
        S saved = p->value.values()[idx];
        p->value.values()[idx] = saved + static_cast<S>(eps);
        double up = static_cast<double>(f().value());
        p->value.values()[idx] = saved - static_cast<S>(eps);
        double dn = static_cast<double>(f().value());
        p->value.values()[idx] = saved;
        double fd = (up - dn) / (2.0 * eps);
        return std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-4});
      };
      double rel = rel_at(opts.eps);
      if (rel > opts.refine_threshold)
        for (double m : {4.0, 0.25, 0.0625}) rel = std::min(rel, rel_at(opts.eps * m));
      entry.max_rel_err = std::max(entry.max_rel_err, rel);
      ++entry.probes;
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace tar
