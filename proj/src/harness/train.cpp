#include "peft/harness/train.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "peft/adapters/hybrid.hpp"
#include "peft/numerics/errors.hpp"

namespace peft {

std::string_view method_name(Method m) {
  switch (m) {
    case Method::full:
      return "full";
    case Method::lora:
      return "lora";
    case Method::boft:
      return "boft";
    case Method::lora_ga:
      return "lora_ga";
    case Method::urnn:
      return "urnn";
    case Method::hybrid:
      return "hybrid";
  }
  return "?";
}

std::optional<Method> parse_method(std::string_view name) {
  for (auto m : kAllMethods)
    if (method_name(m) == name) return m;
  return std::nullopt;
}

void TrainConfig::validate(const ModelConfig& mc) const {
  for (double eta : {eta_lora, eta_boft, eta_full, eta_unitary})
    if (!(eta > 0.0)) throw InvalidInput("train config: learning rates must be positive");
  if (batch_size == 0) throw InvalidInput("train config: batch_size must be positive");
  if (rank == 0) throw InvalidInput("train config: rank must be at least 1");
  if (!(alpha > 0.0)) throw InvalidInput("train config: alpha must be positive");
  if (renorm_interval == 0) throw InvalidInput("train config: renorm_interval must be positive");
  if (lambda_ema && (*lambda_ema < 0.0 || *lambda_ema >= 1.0)) {
    throw InvalidInput("train config: lambda_ema must be in [0, 1)");
  }
  if (clamp_lambda && !(*clamp_lambda > 0.0)) throw InvalidInput("train config: clamp_lambda must be positive");
  mc.validate(method == Method::urnn);
  for (auto t : mc.adapter_targets) {
    const auto [o, i] = mc.target_shape(t);
    if ((method == Method::lora || method == Method::lora_ga || method == Method::hybrid) && rank > std::min(o, i)) {
      throw InvalidInput("train config: rank " + std::to_string(rank) + " exceeds target " +
                         std::string(target_name(t)));
    }
    if (method == Method::boft && boft_form == BoftForm::butterfly) {
      if (!is_power_of_two(o) || m == 0 || m > log2_exact(o)) {
        throw InvalidInput("train config: m = " + std::to_string(m) + " levels invalid for target " +
                           std::string(target_name(t)) + " of size " + std::to_string(o));
      }
    }
  }
}

namespace {

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t id) {
  std::seed_seq seq{seed, id};
  return std::mt19937_64(seq);
}

constexpr std::uint64_t kBaseStream = 0x62617365;
constexpr std::uint64_t kAdapterStream = 0x61647074;
constexpr std::uint64_t kShuffleStream = 0x73687566;

double sq(double x) { return x * x; }

struct LayerNorms {
  double lora = 0.0, boft = 0.0, total = 0.0;  // sums of per-step norms
};

void zero_forced(SlotGradient& g, ForceZero fz) {
  if (fz == ForceZero::lora && g.lora) {
    g.lora->a *= 0.0;
    g.lora->b *= 0.0;
  }
  if (fz == ForceZero::boft) {
    if (g.q) *g.q *= 0.0;
    for (auto& v : g.angles) std::fill(v.begin(), v.end(), 0.0);
  }
}

std::optional<std::size_t> offending_layer(const ModelWeights& w, const ForwardCache& cache) {
  for (std::size_t l = 0; l < w.layers.size(); ++l)
    for (auto t : kAllTargets)
      if (!effective_weight(w.layers[l], t).all_finite()) return l;
  for (std::size_t l = 0; l < cache.layers.size(); ++l) {
    const auto& lc = cache.layers[l];
    if (!lc.x_mid.all_finite() || !lc.h_act.all_finite()) return l;
  }
  return std::nullopt;
}

void inject_nan(ModelWeights& w) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (auto t : kAllTargets) {
    auto& s = w.layers[0].slot(t);
    if (w.full_ft || s.has_adapter()) {
      if (auto* u = std::get_if<UnitaryParam>(&s.adapter)) {
        u->u(0, 0) = nan;
      } else {
        s.w0(0, 0) = nan;
      }
      return;
    }
  }
}

// LoRA-GA: factors from −∇W₀ scaled so that the initial delta is
// −ga_scale · (rank-r part of ∇W₀). A zero gradient keeps the plain init.
void lora_ga_reinit(LoraAdapter& ad, const Matrix& grad_w0, double ga_scale) {
  if (frobenius_norm(grad_w0) == 0.0) return;
  auto f = lora_ga_init(-1.0 * grad_w0, ad.rank());
  const double c = std::sqrt(ga_scale / ad.scaling());
  ad.a = f.a0 * c;
  ad.b = f.b0 * c;
}

}  // namespace

ModelWeights base_model(const ModelConfig& mc, std::uint64_t seed) {
  auto rng = stream(seed, kBaseStream);
  return ModelWeights::random_init(mc, rng);
}

void attach_method(ModelWeights& w, const TrainConfig& cfg, std::mt19937_64& rng) {
  if (cfg.method == Method::full) {
    w.full_ft = true;
    return;
  }
  for (auto& layer : w.layers)
    for (auto t : w.cfg.adapter_targets) {
      auto& s = layer.slot(t);
      const std::size_t o = s.w0.rows(), i = s.w0.cols();
      auto make_lora = [&] {
        auto ad = LoraAdapter::zero_delta(o, i, cfg.rank, cfg.alpha, rng, cfg.lora_init_scale);
        ad.clamp_lambda = cfg.clamp_lambda;
        return ad;
      };
      switch (cfg.method) {
        case Method::lora:
        case Method::lora_ga:
          s.adapter = make_lora();
          break;
        case Method::boft:
          s.adapter = cfg.boft_form == BoftForm::butterfly ? BoftState::butterfly_identity(o, cfg.m, cfg.eta_boft)
                                                           : BoftState::cayley_identity(o, cfg.eta_boft);
          break;
        case Method::urnn:
          s.adapter = UnitaryParam::identity_like(o / 2, rng);
          break;
        case Method::hybrid:
          s.adapter = HybridState{make_lora(), BoftState::cayley_identity(o, cfg.eta_boft), 0.5, cfg.eta_lora};
          break;
        case Method::full:
          break;
      }
    }
}

std::size_t closed_form_parameter_count(const ModelConfig& mc, const TrainConfig& cfg) {
  if (cfg.method == Method::full) {
    return 2 * mc.vocab * mc.d_model + mc.seq_len * mc.d_model +
           mc.n_layers * (4 * mc.d_model * mc.d_model + 2 * mc.d_model * mc.d_ff);
  }
  std::size_t per_layer = 0;
  for (auto t : mc.adapter_targets) {
    const auto [o, i] = mc.target_shape(t);
    const std::size_t lora = cfg.rank * (o + i);
    const std::size_t cayley = o * (o - 1) / 2;
    switch (cfg.method) {
      case Method::lora:
      case Method::lora_ga:
        per_layer += lora;
        break;
      case Method::boft:
        per_layer += cfg.boft_form == BoftForm::butterfly ? cfg.m * o / 2 : cayley;
        break;
      case Method::urnn:
        per_layer += (o / 2) * (o / 2);
        break;
      case Method::hybrid:
        per_layer += lora + cayley;
        break;
      case Method::full:
        break;
    }
  }
  return mc.n_layers * per_layer;
}

TrainResult train(const TrainConfig& cfg, const ModelConfig& mc, const TaskData& data, std::uint64_t seed) {
  cfg.validate(mc);
  if (data.train.empty() || data.val.empty()) throw InvalidInput("train: empty dataset");
  if (data.train.front().tokens.size() > mc.seq_len) throw InvalidInput("train: task sequences exceed seq_len");

  TrainResult result;
  result.weights = base_model(mc, seed);
  auto& w = result.weights;
  result.initial_val_loss = evaluate(w, data.val);
  if (cfg.epochs == 0) return result;

  auto adapter_rng = stream(seed, kAdapterStream);
  auto shuffle_rng = stream(seed, kShuffleStream);
  attach_method(w, cfg, adapter_rng);
  const std::size_t params = trainable_parameter_count(w);
  const std::size_t n_layers = w.layers.size();

  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), shuffle_rng);

  // Gradient-dependent initialization from the first training batch.
  if (cfg.method == Method::lora_ga || cfg.method == Method::hybrid) {
    const auto first = make_batch(data.train, order, 0, std::min(cfg.batch_size, order.size()));
    auto init = loss_and_grad(w, first);
    for (std::size_t l = 0; l < n_layers; ++l) {
      double gl2 = 0.0, gb2 = 0.0;
      for (auto t : mc.adapter_targets) {
        auto& sg = *init.grads.layers[l][std::size_t(t)];
        zero_forced(sg, cfg.force_zero_grad);
        auto& s = w.layers[l].slot(t);
        if (auto* ad = std::get_if<LoraAdapter>(&s.adapter)) {
          lora_ga_reinit(*ad, sg.w_eff, cfg.ga_scale);
        } else if (auto* hy = std::get_if<HybridState>(&s.adapter)) {
          gl2 += sq(sg.lora->norm());
          gb2 += sq(frobenius_norm(*sg.q));
          lora_ga_reinit(hy->lora, sg.w_eff, cfg.ga_scale);
        }
      }
      if (cfg.method == Method::hybrid) {
        const double lam = hybrid_lambda(std::sqrt(gl2), std::sqrt(gb2));
        for (auto t : mc.adapter_targets) std::get<HybridState>(w.layers[l].slot(t).adapter).lambda_last = lam;
      }
    }
  }

  std::size_t global_step = 0;
  std::size_t epoch = 1;
  try {
    for (; epoch <= cfg.epochs; ++epoch) {
      const auto t0 = std::chrono::steady_clock::now();
      if (epoch > 1) std::shuffle(order.begin(), order.end(), shuffle_rng);
      std::vector<LayerNorms> acc(n_layers);
      double loss_sum = 0.0, norm_sum = 0.0, lora_sum = 0.0, boft_sum = 0.0;
      std::size_t steps = 0;

      for (std::size_t b = 0; b < order.size(); b += cfg.batch_size, ++global_step, ++steps) {
        if (cfg.inject_nan_step && *cfg.inject_nan_step == global_step) inject_nan(w);
        const auto batch = make_batch(data.train, order, b, std::min(order.size(), b + cfg.batch_size));
        auto fr = forward(w, batch);
        const double step_loss = loss(fr.logits, batch.targets);
        if (!std::isfinite(step_loss)) {
          result.abort = AbortInfo{cfg.method, epoch, offending_layer(w, fr.cache),
                                   "non-finite training loss at step " + std::to_string(global_step)};
          return result;
        }
        auto grads = backward(fr.cache, w, loss_grad(fr.logits, batch.targets));
        loss_sum += step_loss;
        StepTrace trace{step_loss, {}};

        double step_total2 = 0.0, step_lora2 = 0.0, step_boft2 = 0.0;
        for (std::size_t l = 0; l < n_layers; ++l) {
          double gl2 = 0.0, gb2 = 0.0, total2 = 0.0;
          double lam_used = 0.0;
          for (auto t : kAllTargets) {
            auto& opt = grads.layers[l][std::size_t(t)];
            if (!opt) continue;
            auto& sg = *opt;
            zero_forced(sg, cfg.force_zero_grad);
            auto& s = w.layers[l].slot(t);

            if (w.full_ft) {
              total2 += sq(frobenius_norm(sg.w_eff));
              s.w0 -= cfg.eta_full * sg.w_eff;
            } else if (auto* ad = std::get_if<LoraAdapter>(&s.adapter)) {
              gl2 += sq(sg.lora->norm());
              *ad = lora_grad_step(*ad, *sg.lora, cfg.eta_lora, s.w0).adapter;
            } else if (auto* st = std::get_if<BoftState>(&s.adapter)) {
              if (st->form == BoftForm::butterfly) {
                for (const auto& v : sg.angles) gb2 += sq(norm2(v));
                *st = butterfly_step_project(*st, sg.angles, cfg.eta_boft);
              } else {
                gb2 += sq(frobenius_norm(*sg.q));
                *st = boft_q_step(*st, *sg.q, cfg.eta_boft);
              }
            } else if (auto* up = std::get_if<UnitaryParam>(&s.adapter)) {
              total2 += sq(frobenius_norm(*sg.u));
              const auto bmat = skew_hermitian_grad(*sg.u, up->u);
              up->u = unitary_exp_update(up->u, bmat, -cfg.eta_unitary);
              if ((global_step + 1) % cfg.renorm_interval == 0) up->u = unitary_renormalize(up->u);
            } else if (auto* hy = std::get_if<HybridState>(&s.adapter)) {
              const double gl = sg.lora->norm(), gb = frobenius_norm(*sg.q);
              gl2 += sq(gl);
              gb2 += sq(gb);
              lam_used = hy->lambda_last;
              total2 += sq(lam_used * gl) + sq((1.0 - lam_used) * gb);
              const LoraGrads mixed{lam_used * sg.lora->a, lam_used * sg.lora->b};
              hy->lora = lora_grad_step(hy->lora, mixed, hy->eta_lora, s.w0).adapter;
              hy->boft = boft_q_step(hy->boft, (1.0 - lam_used) * *sg.q, cfg.eta_boft);
            }
          }
          if (cfg.method == Method::lora || cfg.method == Method::lora_ga) total2 = gl2;
          if (cfg.method == Method::boft) total2 = gb2;
          acc[l].lora += std::sqrt(gl2);
          acc[l].boft += std::sqrt(gb2);
          acc[l].total += std::sqrt(total2);
          step_total2 += total2;
          step_lora2 += gl2;
          step_boft2 += gb2;

          if (cfg.method == Method::hybrid) {
            double lam = hybrid_lambda(std::sqrt(gl2), std::sqrt(gb2));
            if (cfg.lambda_ema) lam = *cfg.lambda_ema * lam_used + (1.0 - *cfg.lambda_ema) * lam;
            for (auto t : mc.adapter_targets) std::get<HybridState>(w.layers[l].slot(t).adapter).lambda_last = lam;
            trace.lambda.push_back(lam);
          }
        }
        if (w.full_ft) {
          for (auto [param, grad] : {std::pair{&w.tok_emb, &*grads.tok_emb}, std::pair{&w.pos_emb, &*grads.pos_emb},
                                     std::pair{&w.unembed, &*grads.unembed}}) {
            step_total2 += sq(frobenius_norm(*grad));
            *param -= cfg.eta_full * *grad;
          }
        }
        norm_sum += std::sqrt(step_total2);
        lora_sum += std::sqrt(step_lora2);
        boft_sum += std::sqrt(step_boft2);
        result.steps.push_back(std::move(trace));
      }

      MetricsRecord rec;
      rec.epoch = epoch;
      rec.method = cfg.method;
      rec.param_count = params;
      rec.train_loss = loss_sum / double(steps);
      rec.grad_norm = norm_sum / double(steps);
      rec.val_loss = evaluate(w, data.val);
      const bool has_lora = cfg.method == Method::lora || cfg.method == Method::lora_ga || cfg.method == Method::hybrid;
      const bool has_boft = cfg.method == Method::boft || cfg.method == Method::hybrid;
      if (has_lora) rec.g_lora = lora_sum / double(steps);
      if (has_boft) rec.g_boft = boft_sum / double(steps);
      for (std::size_t l = 0; l < n_layers; ++l) {
        LayerMetrics lm;
        lm.grad_norm = acc[l].total / double(steps);
        if (has_lora) lm.g_lora = acc[l].lora / double(steps);
        if (has_boft) lm.g_boft = acc[l].boft / double(steps);
        if (cfg.method == Method::hybrid) {
          for (auto t : mc.adapter_targets) {
            lm.lambda = std::get<HybridState>(w.layers[l].slot(t).adapter).lambda_last;
            break;
          }
        }
        rec.layers.push_back(lm);
      }
      if (cfg.record_wall_time) {
        rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      }
      result.records.push_back(std::move(rec));
      if (!std::isfinite(result.records.back().val_loss)) {
        result.abort = AbortInfo{cfg.method, epoch, std::nullopt, "non-finite validation loss"};
        return result;
      }
    }
  } catch (const NumericalFailure& e) {
    result.abort = AbortInfo{cfg.method, epoch, std::nullopt, e.what()};
  }
  return result;
}

}  // namespace peft
