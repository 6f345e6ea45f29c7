#include "peft/cli/checks.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "peft/adapters/boft.hpp"
#include "peft/adapters/hybrid.hpp"
#include "peft/adapters/lora.hpp"
#include "peft/adapters/unitary.hpp"
#include "peft/harness/train.hpp"
#include "peft/model/gradcheck.hpp"
#include "peft/numerics/fft.hpp"
#include "peft/numerics/linalg.hpp"

namespace peft {
namespace {

Matrix gaussian(std::mt19937_64& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Matrix m(r, c);
  for (auto& x : m.data()) x = nd(rng);
  return m;
}

CMatrix gaussian_c(std::mt19937_64& rng, std::size_t r, std::size_t c) {
  std::normal_distribution<double> nd;
  CMatrix m(r, c);
  for (auto& x : m.data()) x = {nd(rng), nd(rng)};
  return m;
}

CVector gaussian_cvec(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<double> nd;
  CVector v(n);
  for (auto& x : v) x = {nd(rng), nd(rng)};
  return v;
}

Matrix skew(std::mt19937_64& rng, std::size_t n) {
  auto g = gaussian(rng, n, n);
  Matrix q(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) q(i, j) = 0.5 * (g(i, j) - g(j, i));
  return q;
}

std::size_t random_dim(std::mt19937_64& rng) { return std::uniform_int_distribution<std::size_t>(2, 64)(rng); }

std::size_t random_pow2(std::mt19937_64& rng) { return std::size_t{1} << std::uniform_int_distribution<int>(1, 6)(rng); }

// Worst residual over `trials` instances.
template <typename F>
double worst(std::size_t trials, F&& f) {
  double r = 0.0;
  for (std::size_t k = 0; k < trials; ++k) r = std::max(r, f());
  return r;
}

void randomize_adapters(ModelWeights& w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> ud(-0.5, 0.5);
  auto jiggle_boft = [&](BoftState& st) {
    for (auto& l : st.levels)
      for (auto& a : l.angles) a = ud(rng);
    if (st.form == BoftForm::cayley) {
      for (auto& x : st.q.generator()) x = ud(rng);
      st.r_cache = cayley_orthonormal(st.q.dense(), st.eta);
    }
  };
  auto jiggle_lora = [&](LoraAdapter& ad) {
    for (auto* m : {&ad.a, &ad.b})
      for (auto& x : m->data()) x = 0.3 * ud(rng);
  };
  for (auto& layer : w.layers)
    for (auto& s : layer.slots) {
      if (auto* ad = std::get_if<LoraAdapter>(&s.adapter)) jiggle_lora(*ad);
      if (auto* st = std::get_if<BoftState>(&s.adapter)) jiggle_boft(*st);
      if (auto* h = std::get_if<HybridState>(&s.adapter)) {
        jiggle_lora(h->lora);
        jiggle_boft(h->boft);
        h->lambda_last = 0.3;
      }
      if (auto* p = std::get_if<UnitaryParam>(&s.adapter)) {
        for (auto* th : {&p->d1, &p->d2, &p->d3})
          for (auto& x : *th) x = 3.0 * ud(rng);
        p->u = unitary_compose(*p);
      }
    }
}

double gradcheck_residual(Method method, BoftForm form) {
  ModelConfig mc;
  mc.n_layers = 1;
  mc.d_model = 8;
  mc.n_heads = 2;
  mc.d_ff = 16;
  mc.vocab = 6;
  mc.seq_len = 4;
  mc.adapter_targets = {Target::attn_q, Target::attn_v, Target::attn_o};
  if (method == Method::lora || method == Method::hybrid) mc.adapter_targets.insert(Target::ff_in);
  TrainConfig tc;
  tc.method = method;
  tc.rank = 2;
  tc.alpha = 4.0;
  tc.m = 2;
  tc.boft_form = form;
  tc.eta_boft = 0.4;
  std::mt19937_64 rng(11);
  auto w = base_model(mc, 11);
  attach_method(w, tc, rng);
  randomize_adapters(w, rng);
  std::uniform_int_distribution<int> tok(0, int(mc.vocab) - 1);
  Batch b{2, mc.seq_len, {}, {}};
  for (std::size_t k = 0; k < b.size * b.len; ++k) {
    b.tokens.push_back(tok(rng));
    b.targets.push_back(tok(rng));
  }
  return gradient_check(w, b).max_rel_error();
}

double growth_factor(const std::vector<double>& ops) {
  double g = 0.0;
  for (std::size_t k = 1; k < ops.size(); ++k) g = std::max(g, ops[k] / ops[k - 1]);
  return g;
}

}  // namespace

std::vector<PropertyResult> run_property_suite(const CheckOptions& opts) {
  std::vector<PropertyResult> out;
  auto add = [&](std::string name, double residual, double threshold) {
    out.push_back({std::move(name), residual, threshold, residual <= threshold});
  };
  std::mt19937_64 rng(20240601);

  add("cayley_orthonormal", worst(100, [&] {
        const auto n = random_dim(rng);
        auto r = cayley_orthonormal(skew(rng, n), 0.5);
        if (opts.fault_cayley) r(0, 0) += 1e-6;
        return orthogonality_residual(r);
      }),
      1e-10);

  add("butterfly_compose_orthogonal", worst(100, [&] {
        const auto n = std::max<std::size_t>(2, random_pow2(rng));
        auto st = BoftState::butterfly_identity(n, log2_exact(n), 0.1);
        std::uniform_real_distribution<double> ang(-M_PI, M_PI);
        for (auto& l : st.levels)
          for (auto& a : l.angles) a = ang(rng);
        return orthogonality_residual(butterfly_compose(st));
      }),
      1e-10);

  add("unitary_compose_unitary", worst(100, [&] {
        auto p = UnitaryParam::identity_like(random_pow2(rng), rng);
        std::uniform_real_distribution<double> ph(-M_PI, M_PI);
        for (auto* th : {&p.d1, &p.d2, &p.d3})
          for (auto& x : *th) x = ph(rng);
        return orthogonality_residual(unitary_compose(p));
      }),
      1e-10);

  add("polar_project_orthogonal", worst(100, [&] {
        const auto n = random_dim(rng);
        return orthogonality_residual(polar_project(gaussian(rng, n, n)));
      }),
      1e-10);

  add("matrix_exp_skew_hermitian_unitary", worst(20, [&] {
        const auto n = std::uniform_int_distribution<std::size_t>(2, 24)(rng);
        auto g = gaussian_c(rng, n, n);
        CMatrix b(n, n);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < n; ++j) b(i, j) = 0.5 * (g(i, j) - std::conj(g(j, i)));
        return orthogonality_residual(matrix_exp(b));
      }),
      1e-10);

  add("fft_norm_preserving", worst(50, [&] {
        const auto n = random_pow2(rng);
        const auto x = gaussian_cvec(rng, n);
        const auto y = fft_apply(x);
        const auto back = ifft_apply(y);
        double d = std::abs(norm2(y) - norm2(x)) / norm2(x);
        for (std::size_t k = 0; k < n; ++k) d = std::max(d, std::abs(back[k] - x[k]));
        return d;
      }),
      1e-12);

  add("unitary_exp_drift_1000_steps", [&] {
        std::mt19937_64 r2(7);
        auto u = unitary_compose(UnitaryParam::identity_like(16, r2));
        for (int step = 1; step <= 1000; ++step) {
          auto b = skew_hermitian_grad(gaussian_c(r2, 16, 16), u);
          u = unitary_exp_update(u, b, -0.05);
          if (step % 50 == 0) u = unitary_renormalize(u);
        }
        return orthogonality_residual(u);
      }(),
      1e-8);

  add("svd_reconstruction", worst(30, [&] {
        const auto r = random_dim(rng), c = random_dim(rng);
        auto g = gaussian(rng, r, c);
        auto f = svd(g);
        auto diff = reconstruct(f) - g;
        return frobenius_norm(diff) / frobenius_norm(g);
      }),
      1e-10);

  add("lora_ga_eckart_young", worst(50, [&] {
        auto g = gaussian(rng, 6, 4);
        const auto s = svd(g).s;
        double err = 0.0;
        for (std::size_t r = 1; r <= 3; ++r) {
          auto f = lora_ga_init(g, r);
          const double got = std::pow(frobenius_norm(g - matmul(f.a0, f.b0)), 2);
          double tail = 0.0;
          for (std::size_t k = r; k < s.size(); ++k) tail += s[k] * s[k];
          err = std::max(err, std::abs(got - tail) / std::max(tail, 1e-300));
        }
        return err;
      }),
      1e-8);

  add("hybrid_lambda_in_unit_interval", worst(1000, [&] {
        std::exponential_distribution<double> e(1.0);
        const double gl = e(rng) * (rng() % 4 == 0 ? 0.0 : 1.0), gb = e(rng) * (rng() % 4 == 0 ? 0.0 : 1.0);
        const double lam = hybrid_lambda(gl, gb);
        if (!std::isfinite(lam)) return 1.0;
        return std::max({0.0, -lam, lam - 1.0});
      }),
      0.0);

  add("gradcheck_full", gradcheck_residual(Method::full, BoftForm::cayley), 1e-4);
  add("gradcheck_lora", gradcheck_residual(Method::lora, BoftForm::cayley), 1e-4);
  add("gradcheck_boft_butterfly", gradcheck_residual(Method::boft, BoftForm::butterfly), 1e-4);
  add("gradcheck_boft_cayley", gradcheck_residual(Method::boft, BoftForm::cayley), 1e-4);
  add("gradcheck_urnn", gradcheck_residual(Method::urnn, BoftForm::cayley), 1e-4);
  add("gradcheck_hybrid", gradcheck_residual(Method::hybrid, BoftForm::cayley), 1e-4);

  add("unitary_stack_norm_isometry", [&] {
        std::mt19937_64 r2(3);
        constexpr std::size_t n = 16;
        std::vector<CMatrix> us;
        for (int k = 0; k < 32; ++k) us.push_back(unitary_compose(UnitaryParam::identity_like(n, r2)));
        auto v = gaussian_cvec(r2, n);
        const double n0 = norm2(v);
        for (auto it = us.rbegin(); it != us.rend(); ++it) v = matvec(it->adjoint(), std::span<const Complex>(v));
        return std::abs(norm2(v) - n0) / n0;
      }(),
      1e-6);

  std::vector<double> bops, uops;
  for (std::size_t n = 8; n <= 256; n *= 2) {
    std::mt19937_64 r2(n);
    // Default depth m = 3; a full log2(n)-level stack grows as n·log n.
    auto st = BoftState::butterfly_identity(n, 3, 0.1);
    OpCounter cb, cu;
    Vector x(n, 1.0);
    butterfly_matvec(st, x, &cb);
    auto p = UnitaryParam::identity_like(n, r2);
    CVector z(n, Complex{1.0, 0.0});
    unitary_matvec(p, z, &cu);
    bops.push_back(double(cb.ops));
    uops.push_back(double(cu.ops));
  }
  add("butterfly_matvec_cost_growth", growth_factor(bops), 2.5);
  add("unitary_matvec_cost_growth", growth_factor(uops), 2.5);
  return out;
}

}  // namespace peft
