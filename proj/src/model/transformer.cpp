#include "peft/model/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "peft/numerics/errors.hpp"

namespace peft {

namespace {

constexpr std::array<std::string_view, kAllTargets.size()> kTargetNames{"attn_q", "attn_k", "attn_v",
                                                                        "attn_o", "ff_in",  "ff_out"};

std::size_t idx(Target t) { return static_cast<std::size_t>(t); }

Matrix random_normal(std::mt19937_64& rng, std::size_t r, std::size_t c, double sd) {
  std::normal_distribution<double> nd(0.0, sd);
  Matrix m(r, c);
  for (auto& x : m.data()) x = nd(rng);
  return m;
}

// x · wᵀ through an explicit transpose so the inner loop is contiguous.
Matrix apply_linear(const Matrix& x, const Matrix& w) { return matmul(x, w.transpose()); }

constexpr double kGeluC = 0.7978845608028654;  // √(2/π)
constexpr double kGeluA = 0.044715;

double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); }

double gelu_prime(double x) {
  const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

}  // namespace

std::string_view target_name(Target t) { return kTargetNames[idx(t)]; }

std::optional<Target> parse_target(std::string_view name) {
  for (std::size_t i = 0; i < kTargetNames.size(); ++i)
    if (kTargetNames[i] == name) return kAllTargets[i];
  return std::nullopt;
}

std::pair<std::size_t, std::size_t> ModelConfig::target_shape(Target t) const {
  switch (t) {
    case Target::ff_in:
      return {d_ff, d_model};
    case Target::ff_out:
      return {d_model, d_ff};
    default:
      return {d_model, d_model};
  }
}

void ModelConfig::validate(bool unitary) const {
  if (n_layers == 0 || d_model == 0 || n_heads == 0 || d_ff == 0 || vocab == 0 || seq_len == 0) {
    throw InvalidInput("model config: all sizes must be positive");
  }
  if (d_model % n_heads != 0) {
    throw InvalidInput("model config: d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                       std::to_string(n_heads));
  }
  if (unitary) {
    if (d_model < 2 || !is_power_of_two(d_model)) {
      throw InvalidInput("model config: unitary targets need d_model a power of two");
    }
    for (auto t : adapter_targets) {
      auto [o, i] = target_shape(t);
      if (o != i) throw InvalidInput("model config: unitary target " + std::string(target_name(t)) + " is not square");
    }
  }
}

ModelWeights ModelWeights::random_init(const ModelConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  ModelWeights w;
  w.cfg = cfg;
  w.tok_emb = random_normal(rng, cfg.vocab, cfg.d_model, 1.0);
  w.pos_emb = random_normal(rng, cfg.seq_len, cfg.d_model, 1.0);
  w.unembed = random_normal(rng, cfg.vocab, cfg.d_model, 1.0 / std::sqrt(double(cfg.d_model)));
  w.layers.resize(cfg.n_layers);
  for (auto& layer : w.layers)
    for (auto t : kAllTargets) {
      auto [o, i] = cfg.target_shape(t);
      layer.slot(t).w0 = random_normal(rng, o, i, 1.0 / std::sqrt(double(i)));
    }
  return w;
}

std::size_t ModelWeights::base_parameter_count() const {
  std::size_t n = tok_emb.size() + pos_emb.size() + unembed.size();
  for (const auto& layer : layers)
    for (const auto& s : layer.slots) n += s.w0.size();
  return n;
}

Matrix effective_weight(const LayerWeights& lw, Target t) {
  const auto& s = lw.slot(t);
  if (s.w0.size() == 0) throw InvalidInput("effective_weight: target " + std::string(target_name(t)) + " missing");
  return std::visit(
      [&](const auto& ad) -> Matrix {
        using T = std::decay_t<decltype(ad)>;
        if constexpr (std::is_same_v<T, std::monostate>) {
          return s.w0;
        } else if constexpr (std::is_same_v<T, LoraAdapter>) {
          return s.w0 + lora_delta(ad);
        } else if constexpr (std::is_same_v<T, BoftState>) {
          return s.w0 + boft_weight_delta(ad, s.w0);
        } else if constexpr (std::is_same_v<T, HybridState>) {
          return s.w0 + hybrid_delta(ad.lambda_last, lora_delta(ad.lora), boft_weight_delta(ad.boft, s.w0));
        } else {
          return realify(ad.u);
        }
      },
      s.adapter);
}

ForwardResult forward(const ModelWeights& w, const Batch& batch) {
  const auto& cfg = w.cfg;
  const std::size_t bsz = batch.size, len = batch.len, n = batch.rows();
  if (len == 0 || len > cfg.seq_len) throw InvalidInput("forward: sequence length outside [1, seq_len]");
  if (batch.tokens.size() != n) throw InvalidInput("forward: token count does not match batch shape");
  const std::size_t d = cfg.d_model, heads = cfg.n_heads, dh = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(double(dh));

  ForwardResult out;
  auto& cache = out.cache;
  cache.batch = bsz;
  cache.len = len;
  cache.tokens = batch.tokens;

  Matrix x(n, d);
  for (std::size_t r = 0; r < n; ++r) {
    const int tok = batch.tokens[r];
    if (tok < 0 || std::size_t(tok) >= cfg.vocab) {
      throw InvalidInput("forward: token " + std::to_string(tok) + " at row " + std::to_string(r) + " outside vocab");
    }
    const auto e = w.tok_emb.row(std::size_t(tok));
    const auto p = w.pos_emb.row(r % len);
    auto xr = x.row(r);
    for (std::size_t j = 0; j < d; ++j) xr[j] = e[j] + p[j];
  }

  cache.layers.resize(w.layers.size());
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    auto& lc = cache.layers[l];
    for (auto t : kAllTargets) lc.w[idx(t)] = effective_weight(w.layers[l], t);
    lc.x_in = x;
    lc.q = apply_linear(x, lc.w[idx(Target::attn_q)]);
    lc.k = apply_linear(x, lc.w[idx(Target::attn_k)]);
    lc.v = apply_linear(x, lc.w[idx(Target::attn_v)]);
    lc.probs.assign(bsz * heads * len * len, 0.0);
    lc.attn = Matrix(n, d);
    for (std::size_t b = 0; b < bsz; ++b)
      for (std::size_t h = 0; h < heads; ++h) {
        double* pr = &lc.probs[((b * heads) + h) * len * len];
        const std::size_t c0 = h * dh;
        for (std::size_t i = 0; i < len; ++i) {
          const double* qi = &lc.q(b * len + i, c0);
          double mx = -std::numeric_limits<double>::infinity();
          for (std::size_t j = 0; j < len; ++j) {
            const double* kj = &lc.k(b * len + j, c0);
            double s = 0.0;
            for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
            pr[i * len + j] = s * scale;
            mx = std::max(mx, pr[i * len + j]);
          }
          double z = 0.0;
          for (std::size_t j = 0; j < len; ++j) z += (pr[i * len + j] = std::exp(pr[i * len + j] - mx));
          for (std::size_t j = 0; j < len; ++j) pr[i * len + j] /= z;
          double* oi = &lc.attn(b * len + i, c0);
          for (std::size_t j = 0; j < len; ++j) {
            const double pij = pr[i * len + j];
            const double* vj = &lc.v(b * len + j, c0);
            for (std::size_t c = 0; c < dh; ++c) oi[c] += pij * vj[c];
          }
        }
      }
    lc.x_mid = x + apply_linear(lc.attn, lc.w[idx(Target::attn_o)]);
    lc.h_pre = apply_linear(lc.x_mid, lc.w[idx(Target::ff_in)]);
    lc.h_act = lc.h_pre;
    for (auto& v : lc.h_act.data()) v = gelu(v);
    x = lc.x_mid + apply_linear(lc.h_act, lc.w[idx(Target::ff_out)]);
  }
  out.logits = apply_linear(x, w.unembed);
  cache.x_out = std::move(x);
  return out;
}

namespace {

// Row softmax of logits into p; returns the number of counted positions.
std::size_t softmax_rows(const Matrix& logits, std::span<const int> targets, Matrix& p) {
  if (targets.size() != logits.rows()) throw InvalidInput("loss: target count does not match logits");
  p = logits;
  std::size_t counted = 0;
  for (std::size_t r = 0; r < p.rows(); ++r) {
    auto row = p.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (auto& v : row) z += (v = std::exp(v - mx));
    for (auto& v : row) v /= z;
    if (targets[r] >= 0) {
      if (std::size_t(targets[r]) >= p.cols()) throw InvalidInput("loss: target outside vocab");
      ++counted;
    }
  }
  return counted;
}

}  // namespace

double loss(const Matrix& logits, std::span<const int> targets) {
  if (targets.size() != logits.rows()) throw InvalidInput("loss: target count does not match logits");
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    if (targets[r] < 0) continue;
    if (std::size_t(targets[r]) >= logits.cols()) throw InvalidInput("loss: target outside vocab");
    const auto row = logits.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    total += std::log(z) + mx - row[std::size_t(targets[r])];
    ++counted;
  }
  return counted ? total / double(counted) : 0.0;
}

Matrix loss_grad(const Matrix& logits, std::span<const int> targets) {
  Matrix p;
  const std::size_t counted = softmax_rows(logits, targets, p);
  const double inv = counted ? 1.0 / double(counted) : 0.0;
  for (std::size_t r = 0; r < p.rows(); ++r) {
    auto row = p.row(r);
    if (targets[r] < 0) {
      std::fill(row.begin(), row.end(), 0.0);
      continue;
    }
    row[std::size_t(targets[r])] -= 1.0;
    for (auto& v : row) v *= inv;
  }
  return p;
}

namespace {

SlotGradient slot_gradient(const TargetSlot& s, Matrix g) {
  SlotGradient out;
  std::visit(
      [&](const auto& ad) {
        using T = std::decay_t<decltype(ad)>;
        if constexpr (std::is_same_v<T, LoraAdapter>) {
          out.lora = lora_backward(ad, g);
        } else if constexpr (std::is_same_v<T, BoftState>) {
          if (ad.form == BoftForm::butterfly) {
            out.angles = butterfly_backward(ad, s.w0, g);
          } else {
            out.q = cayley_backward(ad.q.dense(), ad.eta, matmul_a_bt(g, s.w0));
          }
        } else if constexpr (std::is_same_v<T, HybridState>) {
          out.lora = lora_backward(ad.lora, g);
          out.q = cayley_backward(ad.boft.q.dense(), ad.boft.eta, matmul_a_bt(g, s.w0));
        } else if constexpr (std::is_same_v<T, UnitaryParam>) {
          out.u = complex_grad_from_realified(g);
        }
      },
      s.adapter);
  out.w_eff = std::move(g);
  return out;
}

}  // namespace

GradientSet backward(const ForwardCache& cache, const ModelWeights& w, const Matrix& grad_logits) {
  const auto& cfg = w.cfg;
  const std::size_t bsz = cache.batch, len = cache.len, n = bsz * len;
  const std::size_t d = cfg.d_model, heads = cfg.n_heads, dh = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(double(dh));
  if (grad_logits.rows() != n || grad_logits.cols() != cfg.vocab) throw InvalidInput("backward: gradient shape mismatch");
  if (cache.layers.size() != w.layers.size()) throw InvalidInput("backward: cache does not match weights");

  GradientSet gs;
  gs.layers.resize(w.layers.size());
  if (w.full_ft) gs.unembed = matmul_at_b(grad_logits, cache.x_out);
  Matrix dx = matmul(grad_logits, w.unembed);

  auto trainable = [&](std::size_t l, Target t) { return w.full_ft || w.layers[l].slot(t).has_adapter(); };
  auto record = [&](std::size_t l, Target t, const Matrix& dy, const Matrix& x) {
    if (trainable(l, t)) gs.layers[l][idx(t)] = slot_gradient(w.layers[l].slot(t), matmul_at_b(dy, x));
  };

  for (std::size_t l = w.layers.size(); l-- > 0;) {
    const auto& lc = cache.layers[l];
    // feed-forward block
    record(l, Target::ff_out, dx, lc.h_act);
    Matrix dh_pre = matmul(dx, lc.w[idx(Target::ff_out)]);
    for (std::size_t k = 0; k < dh_pre.size(); ++k) dh_pre.data()[k] *= gelu_prime(lc.h_pre.data()[k]);
    record(l, Target::ff_in, dh_pre, lc.x_mid);
    dx += matmul(dh_pre, lc.w[idx(Target::ff_in)]);

    // attention block
    record(l, Target::attn_o, dx, lc.attn);
    const Matrix dattn = matmul(dx, lc.w[idx(Target::attn_o)]);
    Matrix dq(n, d), dk(n, d), dv(n, d);
    std::vector<double> dp(len * len);
    for (std::size_t b = 0; b < bsz; ++b)
      for (std::size_t h = 0; h < heads; ++h) {
        const double* pr = &lc.probs[((b * heads) + h) * len * len];
        const std::size_t c0 = h * dh;
        for (std::size_t i = 0; i < len; ++i) {
          const double* doi = &dattn(b * len + i, c0);
          for (std::size_t j = 0; j < len; ++j) {
            const double* vj = &lc.v(b * len + j, c0);
            double* dvj = &dv(b * len + j, c0);
            double acc = 0.0;
            const double pij = pr[i * len + j];
            for (std::size_t c = 0; c < dh; ++c) {
              acc += doi[c] * vj[c];
              dvj[c] += pij * doi[c];
            }
            dp[i * len + j] = acc;
          }
          // softmax backward: dS = P ⊙ (dP − Σ_j dP⊙P), then the 1/√dh scale
          double dot = 0.0;
          for (std::size_t j = 0; j < len; ++j) dot += dp[i * len + j] * pr[i * len + j];
          const double* qi = &lc.q(b * len + i, c0);
          double* dqi = &dq(b * len + i, c0);
          for (std::size_t j = 0; j < len; ++j) {
            const double ds = pr[i * len + j] * (dp[i * len + j] - dot) * scale;
            if (ds == 0.0) continue;
            const double* kj = &lc.k(b * len + j, c0);
            double* dkj = &dk(b * len + j, c0);
            for (std::size_t c = 0; c < dh; ++c) {
              dqi[c] += ds * kj[c];
              dkj[c] += ds * qi[c];
            }
          }
        }
      }
    record(l, Target::attn_q, dq, lc.x_in);
    record(l, Target::attn_k, dk, lc.x_in);
    record(l, Target::attn_v, dv, lc.x_in);
    dx += matmul(dq, lc.w[idx(Target::attn_q)]);
    dx += matmul(dk, lc.w[idx(Target::attn_k)]);
    dx += matmul(dv, lc.w[idx(Target::attn_v)]);
  }

  if (w.full_ft) {
    Matrix dtok(cfg.vocab, d), dpos(cfg.seq_len, d);
    for (std::size_t r = 0; r < n; ++r) {
      const auto g = dx.row(r);
      auto te = dtok.row(std::size_t(cache.tokens[r]));
      auto pe = dpos.row(r % len);
      for (std::size_t j = 0; j < d; ++j) {
        te[j] += g[j];
        pe[j] += g[j];
      }
    }
    gs.tok_emb = std::move(dtok);
    gs.pos_emb = std::move(dpos);
  }
  return gs;
}

LossAndGrad loss_and_grad(const ModelWeights& w, const Batch& batch) {
  auto fr = forward(w, batch);
  LossAndGrad out;
  out.loss = loss(fr.logits, batch.targets);
  out.grads = backward(fr.cache, w, loss_grad(fr.logits, batch.targets));
  return out;
}

std::size_t trainable_parameter_count(const ModelWeights& w) {
  if (w.full_ft) return w.base_parameter_count();
  std::size_t n = 0;
  for (const auto& layer : w.layers)
    for (const auto& s : layer.slots)
      std::visit(
          [&](const auto& ad) {
            using T = std::decay_t<decltype(ad)>;
            if constexpr (std::is_same_v<T, UnitaryParam>) {
              n += ad.manifold_parameter_count();
            } else if constexpr (!std::is_same_v<T, std::monostate>) {
              n += ad.parameter_count();
            }
          },
          s.adapter);
  return n;
}

}  // namespace peft
