#include "peft/model/snapshot.hpp"

#include <bit>
#include <map>
#include <stdexcept>

#include "peft/numerics/errors.hpp"
#include "peft/util/atomic_file.hpp"

namespace peft {

namespace {

struct Tensor {
  std::vector<std::uint64_t> dims;
  std::vector<double> data;
};

using TensorMap = std::map<std::string, Tensor>;

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(std::uint8_t(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(std::uint8_t(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : b_(b) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(b_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(b_[pos_++]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(b_.begin() + std::ptrdiff_t(pos_), b_.begin() + std::ptrdiff_t(pos_ + n));
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) throw InvalidInput("snapshot: truncated");
  }
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

void put(TensorMap& m, const std::string& name, const Matrix& x) {
  m[name] = Tensor{{x.rows(), x.cols()}, x.values()};
}
void put(TensorMap& m, const std::string& name, const Vector& x) { m[name] = Tensor{{x.size()}, x}; }
void put(TensorMap& m, const std::string& name, double x) { m[name] = Tensor{{1}, {x}}; }
void put(TensorMap& m, const std::string& name, const CVector& x) {
  Tensor t{{x.size(), 2}, {}};
  for (auto z : x) {
    t.data.push_back(z.real());
    t.data.push_back(z.imag());
  }
  m[name] = std::move(t);
}
void put(TensorMap& m, const std::string& name, const CMatrix& x) {
  Tensor t{{x.rows(), x.cols(), 2}, {}};
  for (auto z : x.data()) {
    t.data.push_back(z.real());
    t.data.push_back(z.imag());
  }
  m[name] = std::move(t);
}

const Tensor& get(const TensorMap& m, const std::string& name) {
  auto it = m.find(name);
  if (it == m.end()) throw InvalidInput("snapshot: missing tensor " + name);
  return it->second;
}
Matrix get_matrix(const TensorMap& m, const std::string& name) {
  const auto& t = get(m, name);
  if (t.dims.size() != 2) throw InvalidInput("snapshot: " + name + " is not a matrix");
  return Matrix(t.dims[0], t.dims[1], t.data);
}
double get_scalar(const TensorMap& m, const std::string& name) {
  const auto& t = get(m, name);
  if (t.data.size() != 1) throw InvalidInput("snapshot: " + name + " is not a scalar");
  return t.data[0];
}
CVector get_cvector(const TensorMap& m, const std::string& name) {
  const auto& t = get(m, name);
  CVector v(t.data.size() / 2);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = Complex(t.data[2 * i], t.data[2 * i + 1]);
  return v;
}

void put_lora(TensorMap& m, const std::string& p, const LoraAdapter& ad) {
  put(m, p + "lora_a", ad.a);
  put(m, p + "lora_b", ad.b);
  put(m, p + "lora_alpha", ad.alpha);
  if (ad.clamp_lambda) put(m, p + "lora_clamp", *ad.clamp_lambda);
}

LoraAdapter get_lora(const TensorMap& m, const std::string& p) {
  LoraAdapter ad{get_matrix(m, p + "lora_a"), get_matrix(m, p + "lora_b"), get_scalar(m, p + "lora_alpha"),
                 std::nullopt};
  if (m.count(p + "lora_clamp")) ad.clamp_lambda = get_scalar(m, p + "lora_clamp");
  validate(ad);
  return ad;
}

void put_boft(TensorMap& m, const std::string& p, const BoftState& st) {
  put(m, p + "boft_eta", st.eta);
  if (st.form == BoftForm::cayley) {
    put(m, p + "boft_q", Vector(st.q.generator().begin(), st.q.generator().end()));
    put(m, p + "boft_r", st.r_cache);
  } else {
    Matrix angles(st.levels.size(), st.dim / 2);
    for (std::size_t k = 0; k < st.levels.size(); ++k)
      std::copy(st.levels[k].angles.begin(), st.levels[k].angles.end(), angles.row(k).begin());
    put(m, p + "boft_angles", angles);
  }
}

BoftState get_boft(const TensorMap& m, const std::string& p, std::size_t dim) {
  const double eta = get_scalar(m, p + "boft_eta");
  if (m.count(p + "boft_q")) {
    auto st = BoftState::cayley_identity(dim, eta);
    const auto& g = get(m, p + "boft_q").data;
    if (g.size() != st.q.parameter_count()) throw InvalidInput("snapshot: " + p + "boft_q has wrong size");
    std::copy(g.begin(), g.end(), st.q.generator().begin());
    st.r_cache = get_matrix(m, p + "boft_r");
    return st;
  }
  const auto angles = get_matrix(m, p + "boft_angles");
  auto st = BoftState::butterfly_identity(dim, angles.rows(), eta);
  for (std::size_t k = 0; k < angles.rows(); ++k) {
    auto row = angles.row(k);
    st.levels[k].angles.assign(row.begin(), row.end());
  }
  return st;
}

TensorMap to_tensors(const ModelWeights& w) {
  TensorMap m;
  put(m, "tok_emb", w.tok_emb);
  put(m, "pos_emb", w.pos_emb);
  put(m, "unembed", w.unembed);
  for (std::size_t l = 0; l < w.layers.size(); ++l)
    for (auto t : kAllTargets) {
      const auto& s = w.layers[l].slot(t);
      const std::string p = "layers." + std::to_string(l) + "." + std::string(target_name(t)) + ".";
      put(m, p + "w0", s.w0);
      std::visit(
          [&](const auto& ad) {
            using T = std::decay_t<decltype(ad)>;
            if constexpr (std::is_same_v<T, LoraAdapter>) {
              put_lora(m, p, ad);
            } else if constexpr (std::is_same_v<T, BoftState>) {
              put_boft(m, p, ad);
            } else if constexpr (std::is_same_v<T, HybridState>) {
              put_lora(m, p, ad.lora);
              put_boft(m, p, ad.boft);
              put(m, p + "hybrid_lambda", ad.lambda_last);
              put(m, p + "hybrid_eta_lora", ad.eta_lora);
            } else if constexpr (std::is_same_v<T, UnitaryParam>) {
              put(m, p + "unitary_d1", ad.d1);
              put(m, p + "unitary_d2", ad.d2);
              put(m, p + "unitary_d3", ad.d3);
              put(m, p + "unitary_r1", ad.r1);
              put(m, p + "unitary_r2", ad.r2);
              put(m, p + "unitary_perm", Vector(ad.perm.begin(), ad.perm.end()));
              put(m, p + "unitary_u", ad.u);
            }
          },
          s.adapter);
    }
  return m;
}

}  // namespace

std::vector<std::uint8_t> encode_snapshot(const ModelWeights& w) {
  Writer out;
  out.bytes("PFRG");
  out.u32(kSnapshotVersion);
  const auto& c = w.cfg;
  for (auto v : {c.n_layers, c.d_model, c.n_heads, c.d_ff, c.vocab, c.seq_len}) out.u32(std::uint32_t(v));
  std::uint32_t mask = 0;
  for (auto t : c.adapter_targets) mask |= 1u << static_cast<unsigned>(t);
  out.u32(mask);
  out.u32(w.full_ft ? 1 : 0);
  const auto tensors = to_tensors(w);
  out.u32(std::uint32_t(tensors.size()));
  for (const auto& [name, t] : tensors) {
    out.u32(std::uint32_t(name.size()));
    out.bytes(name);
    out.u32(std::uint32_t(t.dims.size()));
    for (auto d : t.dims) out.u64(d);
    for (double v : t.data) out.f64(v);
  }
  return out.take();
}

ModelWeights decode_snapshot(const std::vector<std::uint8_t>& bytes) {
  Reader in(bytes);
  if (in.str(4) != "PFRG") throw InvalidInput("snapshot: bad magic");
  if (const auto v = in.u32(); v != kSnapshotVersion) throw InvalidInput("snapshot: unsupported version " + std::to_string(v));
  ModelWeights w;
  auto& c = w.cfg;
  for (auto* f : {&c.n_layers, &c.d_model, &c.n_heads, &c.d_ff, &c.vocab, &c.seq_len}) *f = in.u32();
  const std::uint32_t mask = in.u32();
  c.adapter_targets.clear();
  for (auto t : kAllTargets)
    if (mask & (1u << static_cast<unsigned>(t))) c.adapter_targets.insert(t);
  w.full_ft = in.u32() != 0;
  c.validate();

  TensorMap m;
  const std::uint32_t count = in.u32();
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::string name = in.str(in.u32());
    Tensor t;
    t.dims.resize(in.u32());
    std::uint64_t total = 1;
    for (auto& d : t.dims) total *= (d = in.u64());
    if (total > bytes.size() / 8) throw InvalidInput("snapshot: tensor " + name + " larger than file");
    t.data.resize(total);
    for (auto& v : t.data) v = in.f64();
    m.emplace(name, std::move(t));
  }
  if (!in.done()) throw InvalidInput("snapshot: trailing bytes");

  auto expect_shape = [](const Matrix& x, std::size_t r, std::size_t cc, const std::string& name) {
    if (x.rows() != r || x.cols() != cc) throw InvalidInput("snapshot: " + name + " has wrong shape");
  };
  w.tok_emb = get_matrix(m, "tok_emb");
  w.pos_emb = get_matrix(m, "pos_emb");
  w.unembed = get_matrix(m, "unembed");
  expect_shape(w.tok_emb, c.vocab, c.d_model, "tok_emb");
  expect_shape(w.pos_emb, c.seq_len, c.d_model, "pos_emb");
  expect_shape(w.unembed, c.vocab, c.d_model, "unembed");
  w.layers.resize(c.n_layers);
  for (std::size_t l = 0; l < c.n_layers; ++l)
    for (auto t : kAllTargets) {
      auto& s = w.layers[l].slot(t);
      const std::string p = "layers." + std::to_string(l) + "." + std::string(target_name(t)) + ".";
      s.w0 = get_matrix(m, p + "w0");
      const auto [o, i] = c.target_shape(t);
      expect_shape(s.w0, o, i, p + "w0");
      if (m.count(p + "hybrid_lambda")) {
        s.adapter = HybridState{get_lora(m, p), get_boft(m, p, o), get_scalar(m, p + "hybrid_lambda"),
                                get_scalar(m, p + "hybrid_eta_lora")};
      } else if (m.count(p + "lora_a")) {
        s.adapter = get_lora(m, p);
      } else if (m.count(p + "boft_eta")) {
        s.adapter = get_boft(m, p, o);
      } else if (m.count(p + "unitary_u")) {
        UnitaryParam u;
        u.d1 = get(m, p + "unitary_d1").data;
        u.d2 = get(m, p + "unitary_d2").data;
        u.d3 = get(m, p + "unitary_d3").data;
        u.r1 = get_cvector(m, p + "unitary_r1");
        u.r2 = get_cvector(m, p + "unitary_r2");
        u.dim = u.d1.size();
        for (double v : get(m, p + "unitary_perm").data) u.perm.push_back(std::size_t(v));
        const auto& ut = get(m, p + "unitary_u");
        u.u = CMatrix(u.dim, u.dim);
        if (ut.data.size() != 2 * u.u.size()) throw InvalidInput("snapshot: " + p + "unitary_u has wrong size");
        for (std::size_t k = 0; k < u.u.size(); ++k) u.u.data()[k] = Complex(ut.data[2 * k], ut.data[2 * k + 1]);
        validate(u);
        s.adapter = std::move(u);
      }
    }
  return w;
}

void save_snapshot(const ModelWeights& w, const std::filesystem::path& path) {
  write_file_atomic(path, encode_snapshot(w));
}

ModelWeights load_snapshot(const std::filesystem::path& path) { return decode_snapshot(read_file_bytes(path)); }

}  // namespace peft
