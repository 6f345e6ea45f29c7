#include "peft/model/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace peft {

double GradCheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& c : classes) m = std::max(m, c.max_rel_error);
  return m;
}

namespace {

using Pointers = std::function<std::vector<double*>(ModelWeights&)>;
using Refresh = std::function<void(ModelWeights&)>;

struct Probe {
  std::string name;
  Pointers params;
  Refresh refresh;
  Vector analytic;
};

std::vector<double*> matrix_ptrs(Matrix& m) {
  std::vector<double*> p;
  for (auto& x : m.data()) p.push_back(&x);
  return p;
}

Vector scaled(std::span<const double> v, double s) {
  Vector out(v.begin(), v.end());
  for (auto& x : out) x *= s;
  return out;
}

Vector skew_generator_grad(const Matrix& g) {
  Vector out;
  for (std::size_t i = 0; i < g.rows(); ++i)
    for (std::size_t j = i + 1; j < g.cols(); ++j) out.push_back(g(i, j) - g(j, i));
  return out;
}

void refresh_cayley(BoftState& st) { st.r_cache = cayley_orthonormal(st.q.dense(), st.eta); }

}  // namespace

GradCheckReport gradient_check(const ModelWeights& w, const Batch& batch, double eps, double floor) {
  const auto lg = loss_and_grad(w, batch);
  const auto& g = lg.grads;
  std::vector<Probe> probes;
  const Refresh none = [](ModelWeights&) {};

  if (w.full_ft) {
    probes.push_back({"tok_emb", [](ModelWeights& m) { return matrix_ptrs(m.tok_emb); }, none, g.tok_emb->values()});
    probes.push_back({"pos_emb", [](ModelWeights& m) { return matrix_ptrs(m.pos_emb); }, none, g.pos_emb->values()});
    probes.push_back({"unembed", [](ModelWeights& m) { return matrix_ptrs(m.unembed); }, none, g.unembed->values()});
  }

  for (std::size_t l = 0; l < w.layers.size(); ++l)
    for (auto t : kAllTargets) {
      const auto& sg = g.layers[l][static_cast<std::size_t>(t)];
      if (!sg) continue;
      const std::string p = "layers." + std::to_string(l) + "." + std::string(target_name(t)) + ".";
      const auto& slot = w.layers[l].slot(t);
      auto slot_of = [l, t](ModelWeights& m) -> TargetSlot& { return m.layers[l].slot(t); };

      if (w.full_ft) {
        probes.push_back({p + "w0", [=](ModelWeights& m) { return matrix_ptrs(slot_of(m).w0); }, none,
                          sg->w_eff.values()});
        continue;
      }
      if (const auto* ad = std::get_if<LoraAdapter>(&slot.adapter)) {
        (void)ad;
        probes.push_back({p + "lora_a", [=](ModelWeights& m) { return matrix_ptrs(std::get<LoraAdapter>(slot_of(m).adapter).a); },
                          none, sg->lora->a.values()});
        probes.push_back({p + "lora_b", [=](ModelWeights& m) { return matrix_ptrs(std::get<LoraAdapter>(slot_of(m).adapter).b); },
                          none, sg->lora->b.values()});
      } else if (const auto* st = std::get_if<BoftState>(&slot.adapter)) {
        if (st->form == BoftForm::butterfly) {
          for (std::size_t k = 0; k < st->levels.size(); ++k) {
            probes.push_back({p + "boft_level" + std::to_string(k),
                              [=](ModelWeights& m) {
                                std::vector<double*> ptrs;
                                for (auto& a : std::get<BoftState>(slot_of(m).adapter).levels[k].angles) ptrs.push_back(&a);
                                return ptrs;
                              },
                              none, sg->angles[k]});
          }
        } else {
          probes.push_back({p + "boft_q",
                            [=](ModelWeights& m) {
                              std::vector<double*> ptrs;
                              for (auto& x : std::get<BoftState>(slot_of(m).adapter).q.generator()) ptrs.push_back(&x);
                              return ptrs;
                            },
                            [=](ModelWeights& m) { refresh_cayley(std::get<BoftState>(slot_of(m).adapter)); },
                            skew_generator_grad(*sg->q)});
        }
      } else if (const auto* hy = std::get_if<HybridState>(&slot.adapter)) {
        const double lam = hy->lambda_last;
        probes.push_back({p + "lora_a",
                          [=](ModelWeights& m) { return matrix_ptrs(std::get<HybridState>(slot_of(m).adapter).lora.a); },
                          none, scaled(sg->lora->a.data(), lam)});
        probes.push_back({p + "lora_b",
                          [=](ModelWeights& m) { return matrix_ptrs(std::get<HybridState>(slot_of(m).adapter).lora.b); },
                          none, scaled(sg->lora->b.data(), lam)});
        probes.push_back({p + "boft_q",
                          [=](ModelWeights& m) {
                            std::vector<double*> ptrs;
                            for (auto& x : std::get<HybridState>(slot_of(m).adapter).boft.q.generator()) ptrs.push_back(&x);
                            return ptrs;
                          },
                          [=](ModelWeights& m) { refresh_cayley(std::get<HybridState>(slot_of(m).adapter).boft); },
                          scaled(skew_generator_grad(*sg->q), 1.0 - lam)});
      } else if (const auto* up = std::get_if<UnitaryParam>(&slot.adapter)) {
        const auto pg = unitary_param_grad(*up, *sg->u);
        auto refresh_u = [=](ModelWeights& m) {
          auto& u = std::get<UnitaryParam>(slot_of(m).adapter);
          u.u = unitary_compose(u);
        };
        auto phases = [=](Vector UnitaryParam::*field) {
          return [=](ModelWeights& m) {
            std::vector<double*> ptrs;
            for (auto& x : std::get<UnitaryParam>(slot_of(m).adapter).*field) ptrs.push_back(&x);
            return ptrs;
          };
        };
        auto reflector = [=](CVector UnitaryParam::*field) {
          return [=](ModelWeights& m) {
            std::vector<double*> ptrs;
            for (auto& z : std::get<UnitaryParam>(slot_of(m).adapter).*field) {
              auto* parts = reinterpret_cast<double*>(&z);
              ptrs.push_back(parts);
              ptrs.push_back(parts + 1);
            }
            return ptrs;
          };
        };
        auto split = [](const CVector& v) {
          Vector out;
          for (auto z : v) {
            out.push_back(z.real());
            out.push_back(z.imag());
          }
          return out;
        };
        probes.push_back({p + "unitary_d1", phases(&UnitaryParam::d1), refresh_u, pg.d1});
        probes.push_back({p + "unitary_d2", phases(&UnitaryParam::d2), refresh_u, pg.d2});
        probes.push_back({p + "unitary_d3", phases(&UnitaryParam::d3), refresh_u, pg.d3});
        probes.push_back({p + "unitary_r1", reflector(&UnitaryParam::r1), refresh_u, split(pg.r1)});
        probes.push_back({p + "unitary_r2", reflector(&UnitaryParam::r2), refresh_u, split(pg.r2)});
      }
    }

  GradCheckReport report;
  ModelWeights work = w;
  auto eval = [&] { return loss(forward(work, batch).logits, batch.targets); };
  for (const auto& probe : probes) {
    auto ptrs = probe.params(work);
    ParamClassCheck c{probe.name, ptrs.size(), 0.0};
    for (std::size_t k = 0; k < ptrs.size(); ++k) {
      const double orig = *ptrs[k];
      *ptrs[k] = orig + eps;
      probe.refresh(work);
      const double lp = eval();
      *ptrs[k] = orig - eps;
      probe.refresh(work);
      const double lm = eval();
      *ptrs[k] = orig;
      probe.refresh(work);
      const double numeric = (lp - lm) / (2.0 * eps);
      const double a = probe.analytic[k];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      c.max_rel_error = std::max(c.max_rel_error, err);
    }
    report.classes.push_back(std::move(c));
  }
  return report;
}

}  // namespace peft
