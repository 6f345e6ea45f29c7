#include "peft/cli/config.hpp"

#include <charconv>
#include <functional>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "peft/numerics/errors.hpp"
#include "peft/numerics/fft.hpp"

namespace peft {

ConfigError::ConfigError(std::size_t line, std::string key, const std::string& message)
    : std::runtime_error(line ? fmt::format("line {}: key '{}': {}", line, key, message)
                              : fmt::format("key '{}': {}", key, message)),
      line_(line),
      key_(std::move(key)) {}

std::vector<Method> RunConfig::sweep_methods() const {
  return methods.empty() ? std::vector<Method>{train.method} : methods;
}

TrainConfig RunConfig::cell_config(Method m, std::uint64_t seed) const {
  TrainConfig c = train;
  c.method = m;
  if (inject_nan && inject_nan->method == m && inject_nan->seed == seed) c.inject_nan_step = inject_nan->step;
  return c;
}

namespace {

// Value parsers throw std::invalid_argument with a short description; the
// caller attaches the location.
struct BadValue : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(std::string_view v) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= v.size()) {
    const auto comma = v.find(',', start);
    auto item = trim(v.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (item.empty()) throw BadValue("empty list element");
    out.push_back(std::move(item));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::uint64_t parse_u64(std::string_view v) {
  std::uint64_t x = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || p != v.data() + v.size()) throw BadValue("expected a non-negative integer, got '" + std::string(v) + "'");
  return x;
}

std::size_t parse_count(std::string_view v) { return static_cast<std::size_t>(parse_u64(v)); }

std::size_t parse_positive(std::string_view v) {
  const auto x = parse_count(v);
  if (x == 0) throw BadValue("must be positive");
  return x;
}

double parse_real(std::string_view v) {
  double x = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || p != v.data() + v.size()) throw BadValue("expected a real number, got '" + std::string(v) + "'");
  return x;
}

double parse_rate(std::string_view v) {
  const double x = parse_real(v);
  if (!(x > 0.0) || !std::isfinite(x)) throw BadValue("must be a positive finite number");
  return x;
}

std::optional<double> parse_optional_real(std::string_view v) {
  if (v == "none") return std::nullopt;
  return parse_real(v);
}

bool parse_bool(std::string_view v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw BadValue("expected true or false, got '" + std::string(v) + "'");
}

Method parse_method_value(std::string_view v) {
  if (auto m = parse_method(v)) return *m;
  throw BadValue("unknown method '" + std::string(v) + "' (full, lora, boft, lora_ga, urnn, hybrid)");
}

std::string real(double x) { return fmt::format("{:.17g}", x); }
std::string opt_real(const std::optional<double>& x) { return x ? real(*x) : "none"; }

template <typename T, typename F>
std::string join(const T& items, F&& f) {
  std::string s;
  for (const auto& x : items) {
    if (!s.empty()) s += ",";
    s += f(x);
  }
  return s;
}

struct Field {
  std::string_view key;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"method", [](RunConfig& c, std::string_view v) { c.train.method = parse_method_value(v); },
       [](const RunConfig& c) { return std::string(method_name(c.train.method)); }},
      {"methods",
       [](RunConfig& c, std::string_view v) {
         c.methods.clear();
         for (const auto& s : split_list(v)) c.methods.push_back(parse_method_value(s));
       },
       [](const RunConfig& c) { return join(c.methods, [](Method m) { return std::string(method_name(m)); }); }},
      {"seeds",
       [](RunConfig& c, std::string_view v) {
         c.seeds.clear();
         for (const auto& s : split_list(v)) c.seeds.push_back(parse_u64(s));
       },
       [](const RunConfig& c) { return join(c.seeds, [](std::uint64_t s) { return std::to_string(s); }); }},
      {"out_dir",
       [](RunConfig& c, std::string_view v) {
         if (v.empty()) throw BadValue("must not be empty");
         c.out_dir = std::string(v);
       },
       [](const RunConfig& c) { return c.out_dir; }},
      {"n_layers", [](RunConfig& c, std::string_view v) { c.model.n_layers = parse_positive(v); },
       [](const RunConfig& c) { return std::to_string(c.model.n_layers); }},
      {"d_model", [](RunConfig& c, std::string_view v) { c.model.d_model = parse_positive(v); },
       [](const RunConfig& c) { return std::to_string(c.model.d_model); }},
      {"n_heads", [](RunConfig& c, std::string_view v) { c.model.n_heads = parse_positive(v); },
       [](const RunConfig& c) { return std::to_string(c.model.n_heads); }},
      {"d_ff", [](RunConfig& c, std::string_view v) { c.model.d_ff = parse_positive(v); },
       [](const RunConfig& c) { return std::to_string(c.model.d_ff); }},
      {"vocab", [](RunConfig& c, std::string_view v) { c.model.vocab = parse_positive(v); },
       [](const RunConfig& c) { return std::to_string(c.model.vocab); }},
      {"seq_len", [](RunConfig& c, std::string_view v) { c.model.seq_len = parse_positive(v); },
       [](const RunConfig& c) { return std::to_string(c.model.seq_len); }},
      {"targets",
       [](RunConfig& c, std::string_view v) {
         c.model.adapter_targets.clear();
         for (const auto& s : split_list(v)) {
           auto t = parse_target(s);
           if (!t) throw BadValue("unknown target '" + s + "' (attn_q, attn_k, attn_v, attn_o, ff_in, ff_out)");
           c.model.adapter_targets.insert(*t);
         }
       },
       [](const RunConfig& c) {
         return join(c.model.adapter_targets, [](Target t) { return std::string(target_name(t)); });
       }},
      {"task",
       [](RunConfig& c, std::string_view v) {
         auto k = parse_task(v);
         if (!k) throw BadValue("unknown task '" + std::string(v) + "' (copy, adding, classify)");
         c.task.kind = *k;
       },
       [](const RunConfig& c) { return std::string(task_name(c.task.kind)); }},
      {"train_size", [](RunConfig& c, std::string_view v) { c.task.train_size = parse_positive(v); },
       [](const RunConfig& c) { return std::to_string(c.task.train_size); }},
      {"val_size", [](RunConfig& c, std::string_view v) { c.task.val_size = parse_positive(v); },
       [](const RunConfig& c) { return std::to_string(c.task.val_size); }},
      {"epochs", [](RunConfig& c, std::string_view v) { c.train.epochs = parse_count(v); },
       [](const RunConfig& c) { return std::to_string(c.train.epochs); }},
      {"batch_size", [](RunConfig& c, std::string_view v) { c.train.batch_size = parse_positive(v); },
       [](const RunConfig& c) { return std::to_string(c.train.batch_size); }},
      {"eta_lora", [](RunConfig& c, std::string_view v) { c.train.eta_lora = parse_rate(v); },
       [](const RunConfig& c) { return real(c.train.eta_lora); }},
      {"eta_boft", [](RunConfig& c, std::string_view v) { c.train.eta_boft = parse_rate(v); },
       [](const RunConfig& c) { return real(c.train.eta_boft); }},
      {"eta_full", [](RunConfig& c, std::string_view v) { c.train.eta_full = parse_rate(v); },
       [](const RunConfig& c) { return real(c.train.eta_full); }},
      {"eta_unitary", [](RunConfig& c, std::string_view v) { c.train.eta_unitary = parse_rate(v); },
       [](const RunConfig& c) { return real(c.train.eta_unitary); }},
      {"rank", [](RunConfig& c, std::string_view v) { c.train.rank = parse_positive(v); },
       [](const RunConfig& c) { return std::to_string(c.train.rank); }},
      {"alpha", [](RunConfig& c, std::string_view v) { c.train.alpha = parse_rate(v); },
       [](const RunConfig& c) { return real(c.train.alpha); }},
      {"m", [](RunConfig& c, std::string_view v) { c.train.m = parse_positive(v); },
       [](const RunConfig& c) { return std::to_string(c.train.m); }},
      {"boft_form",
       [](RunConfig& c, std::string_view v) {
         if (v == "butterfly") {
           c.train.boft_form = BoftForm::butterfly;
         } else if (v == "cayley") {
           c.train.boft_form = BoftForm::cayley;
         } else {
           throw BadValue("expected butterfly or cayley, got '" + std::string(v) + "'");
         }
       },
       [](const RunConfig& c) { return std::string(c.train.boft_form == BoftForm::butterfly ? "butterfly" : "cayley"); }},
      {"clamp_lambda",
       [](RunConfig& c, std::string_view v) {
         c.train.clamp_lambda = parse_optional_real(v);
         if (c.train.clamp_lambda && !(*c.train.clamp_lambda > 0.0)) throw BadValue("must be positive or none");
       },
       [](const RunConfig& c) { return opt_real(c.train.clamp_lambda); }},
      {"renorm_interval", [](RunConfig& c, std::string_view v) { c.train.renorm_interval = parse_positive(v); },
       [](const RunConfig& c) { return std::to_string(c.train.renorm_interval); }},
      {"lambda_ema",
       [](RunConfig& c, std::string_view v) {
         c.train.lambda_ema = parse_optional_real(v);
         if (c.train.lambda_ema && (*c.train.lambda_ema < 0.0 || *c.train.lambda_ema >= 1.0)) {
           throw BadValue("must be in [0, 1) or none");
         }
       },
       [](const RunConfig& c) { return opt_real(c.train.lambda_ema); }},
      {"ga_scale", [](RunConfig& c, std::string_view v) { c.train.ga_scale = parse_rate(v); },
       [](const RunConfig& c) { return real(c.train.ga_scale); }},
      {"lora_init_scale", [](RunConfig& c, std::string_view v) { c.train.lora_init_scale = parse_rate(v); },
       [](const RunConfig& c) { return real(c.train.lora_init_scale); }},
      {"force_zero_grad",
       [](RunConfig& c, std::string_view v) {
         if (v == "none") {
           c.train.force_zero_grad = ForceZero::none;
         } else if (v == "lora") {
           c.train.force_zero_grad = ForceZero::lora;
         } else if (v == "boft") {
           c.train.force_zero_grad = ForceZero::boft;
         } else {
           throw BadValue("expected none, lora or boft, got '" + std::string(v) + "'");
         }
       },
       [](const RunConfig& c) {
         switch (c.train.force_zero_grad) {
           case ForceZero::lora:
             return std::string("lora");
           case ForceZero::boft:
             return std::string("boft");
           default:
             return std::string("none");
         }
       }},
      {"inject_nan",
       [](RunConfig& c, std::string_view v) {
         if (v == "none") {
           c.inject_nan.reset();
           return;
         }
         const auto a = v.find(':'), b = v.rfind(':');
         if (a == std::string_view::npos || a == b) throw BadValue("expected <method>:<seed>:<step> or none");
         c.inject_nan = NanFault{parse_method_value(v.substr(0, a)), parse_u64(v.substr(a + 1, b - a - 1)),
                                 parse_count(v.substr(b + 1))};
       },
       [](const RunConfig& c) {
         if (!c.inject_nan) return std::string("none");
         return fmt::format("{}:{}:{}", method_name(c.inject_nan->method), c.inject_nan->seed, c.inject_nan->step);
       }},
      {"record_wall_time", [](RunConfig& c, std::string_view v) { c.train.record_wall_time = parse_bool(v); },
       [](const RunConfig& c) { return std::string(c.train.record_wall_time ? "true" : "false"); }},
  };
  return table;
}

void check_constraints(const RunConfig& c, const std::map<std::string, std::size_t, std::less<>>& lines) {
  auto where = [&](std::string_view key) {
    auto it = lines.find(key);
    return it == lines.end() ? std::size_t{0} : it->second;
  };
  auto fail = [&](std::string_view key, const std::string& msg) { throw ConfigError(where(key), std::string(key), msg); };

  const auto& m = c.model;
  if (m.d_model % m.n_heads != 0) {
    fail("n_heads", fmt::format("d_model {} is not divisible by n_heads {}", m.d_model, m.n_heads));
  }
  if (c.seeds.empty()) fail("seeds", "at least one seed is required");
  const auto methods = c.sweep_methods();
  for (auto method : methods) {
    for (auto t : m.adapter_targets) {
      const auto [o, i] = m.target_shape(t);
      if (method == Method::urnn) {
        if (!is_power_of_two(m.d_model) || m.d_model < 2) {
          fail("d_model", fmt::format("d_model {} must be a power of two for method urnn", m.d_model));
        }
        if (o != i) fail("targets", fmt::format("urnn needs square targets, {} is {}x{}", target_name(t), o, i));
      }
      if ((method == Method::lora || method == Method::lora_ga || method == Method::hybrid) && c.train.rank > std::min(o, i)) {
        fail("rank", fmt::format("rank {} exceeds min dimension {} of target {}", c.train.rank, std::min(o, i), target_name(t)));
      }
      if (method == Method::boft && c.train.boft_form == BoftForm::butterfly) {
        if (!is_power_of_two(o)) fail("targets", fmt::format("butterfly needs power-of-two outputs, {} has {}", target_name(t), o));
        if (c.train.m > log2_exact(o)) {
          fail("m", fmt::format("m = {} exceeds log2({}) for target {}", c.train.m, o, target_name(t)));
        }
      }
    }
    if (c.task.kind == TaskKind::adding && m.vocab < 4) fail("vocab", "adding needs vocab >= 4");
    if (c.task.kind == TaskKind::adding && m.seq_len < 2) fail("seq_len", "adding needs seq_len >= 2");
    try {
      c.cell_config(method, c.seeds.front()).validate(m);
    } catch (const InvalidInput& e) {
      throw ConfigError(0, "config", e.what());
    }
  }
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::map<std::string, std::size_t, std::less<>> lines;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const auto line = trim(std::string_view(raw).substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(line_no, trim(line), "expected 'key = value'");
    const auto key = trim(std::string_view(line).substr(0, eq));
    const auto value = trim(std::string_view(line).substr(eq + 1));
    if (key.empty()) throw ConfigError(line_no, key, "missing key before '='");
    const auto& table = fields();
    auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return f.key == key; });
    if (it == table.end()) throw ConfigError(line_no, key, "unknown key");
    if (!lines.emplace(key, line_no).second) {
      throw ConfigError(line_no, key, fmt::format("repeated key (first set on line {})", lines.at(key)));
    }
    try {
      it->set(cfg, value);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(line_no, key, e.what());
    }
  }
  cfg.task.seq_len = cfg.model.seq_len;
  cfg.task.vocab = cfg.model.vocab;
  check_constraints(cfg, lines);
  return cfg;
}

std::string serialize_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) {
    if (f.key == "methods" && cfg.methods.empty()) continue;
    out += fmt::format("{} = {}\n", f.key, f.get(cfg));
  }
  return out;
}

}  // namespace peft
