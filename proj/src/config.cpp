#include "nbe/config.hpp"

#include <algorithm>
#include <charconv>
#include <functional>
#include <map>
#include <sstream>

#include "nbe/error.hpp"
#include "nbe/model_gauss.hpp"
#include "nbe/model_gh.hpp"
#include "nbe/model_gp.hpp"
#include "nbe/model_potts.hpp"

namespace nbe {

bool ExperimentConfig::operator==(const ExperimentConfig& o) const {
  if (test_size != o.test_size || seed != o.seed) return false;
  if (missingness.size() != o.missingness.size()) return false;
  for (std::size_t i = 0; i < missingness.size(); ++i) {
    if (missingness[i].name != o.missingness[i].name ||
        !(missingness[i].model == o.missingness[i].model))
      return false;
  }
  return true;
}

std::size_t levenshtein(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  return out;
}

// Shortest text that reads back to the same double.
std::string fmt(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

struct BadValue {
  std::string what;
};

double to_double(const std::string& s) {
  double v = 0.0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw BadValue{"expected a number, got '" + s + "'"};
  return v;
}

std::uint64_t to_uint(const std::string& s) {
  std::uint64_t v = 0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw BadValue{"expected a non-negative integer, got '" + s + "'"};
  return v;
}

int to_int(const std::string& s) {
  int v = 0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw BadValue{"expected an integer, got '" + s + "'"};
  return v;
}

std::string one_of(const std::string& s, std::initializer_list<const char*> options) {
  const std::string v = lower(s);
  std::string list;
  for (const char* o : options) {
    if (v == o) return v;
    if (!list.empty()) list += "|";
    list += o;
  }
  throw BadValue{"expected one of " + list + ", got '" + s + "'"};
}

// "0.2" or "0.1..0.9"
std::pair<double, double> parse_proportion(const std::string& s) {
  const auto dots = s.find("..");
  if (dots == std::string::npos) {
    const double q = to_double(s);
    return {q, q};
  }
  return {to_double(trim(s.substr(0, dots))), to_double(trim(s.substr(dots + 2)))};
}

std::string render_proportion(const MissingnessModel& m) {
  return m.lo == m.hi ? fmt(m.lo) : fmt(m.lo) + ".." + fmt(m.hi);
}

enum : unsigned { kGP = 1, kPotts = 2, kGH = 4, kGauss = 8, kAll = 15 };

unsigned kind_bit(const std::string& kind) {
  if (kind == "gp") return kGP;
  if (kind == "potts") return kPotts;
  if (kind == "gh") return kGH;
  if (kind == "gaussian-variance") return kGauss;
  return 0;
}

struct Key {
  const char* section;
  const char* name;
  unsigned kinds;  // model kinds the key applies to ([model] only)
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
  // Empty when the value is in range.
  std::function<std::string(const RunConfig&)> check;
};

std::string need(bool ok, const char* msg) { return ok ? std::string() : std::string(msg); }

const std::vector<Key>& keys() {
  static const std::vector<Key> table = [] {
    std::vector<Key> t;
    auto add = [&](const char* sec, const char* name, unsigned kinds, auto set, auto get,
                   auto check) { t.push_back({sec, name, kinds, set, get, check}); };
    auto none = [](const RunConfig&) { return std::string(); };

    // [model]
    add("model", "kind", kAll,
        [](RunConfig& c, const std::string& v) {
          c.model.kind = one_of(v, {"gp", "potts", "gh", "gaussian-variance"});
        },
        [](const RunConfig& c) { return c.model.kind; }, none);
    add("model", "height", kGP | kPotts,
        [](RunConfig& c, const std::string& v) { c.model.height = to_uint(v); },
        [](const RunConfig& c) { return std::to_string(c.model.height); },
        [](const RunConfig& c) { return need(c.model.height >= 2, "must be >= 2"); });
    add("model", "width", kGP | kPotts,
        [](RunConfig& c, const std::string& v) { c.model.width = to_uint(v); },
        [](const RunConfig& c) { return std::to_string(c.model.width); },
        [](const RunConfig& c) { return need(c.model.width >= 2, "must be >= 2"); });
    add("model", "nu", kGP, [](RunConfig& c, const std::string& v) { c.model.nu = to_double(v); },
        [](const RunConfig& c) { return fmt(c.model.nu); },
        [](const RunConfig& c) { return need(c.model.nu > 0.0 && c.model.nu < 1e3, "must be in (0, 1000)"); });
    add("model", "sigma2", kGP,
        [](RunConfig& c, const std::string& v) { c.model.sigma2 = to_double(v); },
        [](const RunConfig& c) { return fmt(c.model.sigma2); },
        [](const RunConfig& c) { return need(c.model.sigma2 > 0.0 && std::isfinite(c.model.sigma2), "must be > 0"); });
    add("model", "nugget", kGP,
        [](RunConfig& c, const std::string& v) { c.model.nugget = one_of(v, {"free", "fixed"}); },
        [](const RunConfig& c) { return c.model.nugget; }, none);
    add("model", "tau", kGP, [](RunConfig& c, const std::string& v) { c.model.tau = to_double(v); },
        [](const RunConfig& c) { return fmt(c.model.tau); },
        [](const RunConfig& c) { return need(c.model.tau >= 0.0 && std::isfinite(c.model.tau), "must be >= 0"); });
    add("model", "q", kPotts, [](RunConfig& c, const std::string& v) { c.model.q = to_int(v); },
        [](const RunConfig& c) { return std::to_string(c.model.q); },
        [](const RunConfig& c) { return need(c.model.q >= 2 && c.model.q <= 255, "must be in [2, 255]"); });
    add("model", "sw_sweeps", kPotts,
        [](RunConfig& c, const std::string& v) { c.model.sw_sweeps = to_int(v); },
        [](const RunConfig& c) { return std::to_string(c.model.sw_sweeps); },
        [](const RunConfig& c) { return need(c.model.sw_sweeps >= 1, "must be >= 1"); });
    add("model", "burn_in", kPotts,
        [](RunConfig& c, const std::string& v) { c.model.burn_in = to_int(v); },
        [](const RunConfig& c) { return std::to_string(c.model.burn_in); },
        [](const RunConfig& c) { return need(c.model.burn_in >= 0, "must be >= 0"); });
    add("model", "spacing", kPotts,
        [](RunConfig& c, const std::string& v) { c.model.spacing = to_int(v); },
        [](const RunConfig& c) { return std::to_string(c.model.spacing); },
        [](const RunConfig& c) { return need(c.model.spacing >= 1, "must be >= 1"); });
    add("model", "dim", kGH, [](RunConfig& c, const std::string& v) { c.model.dim = to_uint(v); },
        [](const RunConfig& c) { return std::to_string(c.model.dim); },
        [](const RunConfig& c) { return need(c.model.dim >= 2 && c.model.dim <= 64, "must be in [2, 64]"); });
    add("model", "rows", kGH, [](RunConfig& c, const std::string& v) { c.model.rows = to_uint(v); },
        [](const RunConfig& c) { return std::to_string(c.model.rows); },
        [](const RunConfig& c) { return need(c.model.rows >= 1, "must be >= 1"); });
    add("model", "n", kGauss, [](RunConfig& c, const std::string& v) { c.model.n = to_uint(v); },
        [](const RunConfig& c) { return std::to_string(c.model.n); },
        [](const RunConfig& c) { return need(c.model.n >= 1, "must be >= 1"); });

    // [loss]
    add("loss", "kind", kAll,
        [](RunConfig& c, const std::string& v) {
          c.loss.kind = parse_loss_kind(one_of(v, {"tanh", "power", "cauchy", "quadratic", "absolute"}));
        },
        [](const RunConfig& c) { return std::string(loss_name(c.loss.kind)); }, none);
    add("loss", "kappa", kAll, [](RunConfig& c, const std::string& v) { c.loss.kappa = to_double(v); },
        [](const RunConfig& c) { return fmt(c.loss.kappa); },
        [](const RunConfig& c) { return need(c.loss.kappa > 0.0 && std::isfinite(c.loss.kappa), "must be > 0"); });
    add("loss", "beta", kAll, [](RunConfig& c, const std::string& v) { c.loss.beta = to_double(v); },
        [](const RunConfig& c) { return fmt(c.loss.beta); },
        [](const RunConfig& c) { return need(c.loss.beta > 0.0 && std::isfinite(c.loss.beta), "must be > 0"); });
    add("loss", "delta", kAll, [](RunConfig& c, const std::string& v) { c.loss.delta = to_double(v); },
        [](const RunConfig& c) { return fmt(c.loss.delta); },
        [](const RunConfig& c) { return need(c.loss.delta >= 0.0 && std::isfinite(c.loss.delta), "must be >= 0"); });
    add("loss", "rho", kAll, [](RunConfig& c, const std::string& v) { c.loss.rho = to_double(v); },
        [](const RunConfig& c) { return fmt(c.loss.rho); },
        [](const RunConfig& c) { return need(c.loss.rho > 0.0 && std::isfinite(c.loss.rho), "must be > 0"); });
    add("loss", "alpha", kAll, [](RunConfig& c, const std::string& v) { c.loss.alpha = to_double(v); },
        [](const RunConfig& c) { return fmt(c.loss.alpha); },
        [](const RunConfig& c) { return need(c.loss.alpha > 0.0 && std::isfinite(c.loss.alpha), "must be > 0"); });
    add("loss", "norm", kAll,
        [](RunConfig& c, const std::string& v) {
          c.loss.norm = one_of(v, {"euclidean", "l1"}) == "l1" ? Norm::L1 : Norm::Euclidean;
        },
        [](const RunConfig& c) { return std::string(c.loss.norm == Norm::L1 ? "l1" : "euclidean"); },
        none);

    // [training]
    add("training", "variant", kAll,
        [](RunConfig& c, const std::string& v) { c.variant = one_of(v, {"masking", "map"}); },
        [](const RunConfig& c) { return c.variant; }, none);
    add("training", "K", kAll, [](RunConfig& c, const std::string& v) { c.training.K = to_uint(v); },
        [](const RunConfig& c) { return std::to_string(c.training.K); },
        [](const RunConfig& c) { return need(c.training.K >= 2, "must be >= 2"); });
    add("training", "batch", kAll,
        [](RunConfig& c, const std::string& v) { c.training.batch = to_uint(v); },
        [](const RunConfig& c) { return std::to_string(c.training.batch); },
        [](const RunConfig& c) { return need(c.training.batch >= 1, "must be >= 1"); });
    add("training", "learning_rate", kAll,
        [](RunConfig& c, const std::string& v) { c.training.learning_rate = to_double(v); },
        [](const RunConfig& c) { return fmt(c.training.learning_rate); },
        [](const RunConfig& c) {
          return need(c.training.learning_rate > 0.0 && c.training.learning_rate < 1.0, "must be in (0, 1)");
        });
    add("training", "optimizer", kAll,
        [](RunConfig& c, const std::string& v) { c.training.optimizer = one_of(v, {"adam"}); },
        [](const RunConfig& c) { return c.training.optimizer; }, none);
    add("training", "patience", kAll,
        [](RunConfig& c, const std::string& v) { c.training.patience = to_int(v); },
        [](const RunConfig& c) { return std::to_string(c.training.patience); },
        [](const RunConfig& c) { return need(c.training.patience >= 1, "must be >= 1"); });
    add("training", "max_epochs", kAll,
        [](RunConfig& c, const std::string& v) { c.training.max_epochs = to_int(v); },
        [](const RunConfig& c) { return std::to_string(c.training.max_epochs); },
        [](const RunConfig& c) { return need(c.training.max_epochs >= 1, "must be >= 1"); });
    add("training", "validation_fraction", kAll,
        [](RunConfig& c, const std::string& v) { c.training.validation_fraction = to_double(v); },
        [](const RunConfig& c) { return fmt(c.training.validation_fraction); },
        [](const RunConfig& c) {
          return need(c.training.validation_fraction > 0.0 && c.training.validation_fraction < 1.0,
                      "must be in (0, 1)");
        });
    add("training", "seed", kAll,
        [](RunConfig& c, const std::string& v) { c.training.seed = to_uint(v); },
        [](const RunConfig& c) { return std::to_string(c.training.seed); }, none);
    add("training", "width", kAll, [](RunConfig& c, const std::string& v) { c.width = to_uint(v); },
        [](const RunConfig& c) { return std::to_string(c.width); },
        [](const RunConfig& c) { return need(c.width <= 4096, "must be <= 4096 (0 = default)"); });

    // [em]
    add("em", "H", kAll, [](RunConfig& c, const std::string& v) { c.em.H = to_uint(v); },
        [](const RunConfig& c) { return std::to_string(c.em.H); },
        [](const RunConfig& c) { return need(c.em.H >= 1 && c.em.H <= 10000, "must be in [1, 10000]"); });
    add("em", "max_iterations", kAll,
        [](RunConfig& c, const std::string& v) { c.em.max_iterations = to_int(v); },
        [](const RunConfig& c) { return std::to_string(c.em.max_iterations); },
        [](const RunConfig& c) { return need(c.em.max_iterations >= 1, "must be >= 1"); });
    add("em", "tolerance", kAll,
        [](RunConfig& c, const std::string& v) { c.em.tolerance = to_double(v); },
        [](const RunConfig& c) { return fmt(c.em.tolerance); },
        [](const RunConfig& c) { return need(c.em.tolerance > 0.0 && std::isfinite(c.em.tolerance), "must be > 0"); });
    add("em", "hits", kAll, [](RunConfig& c, const std::string& v) { c.em.hits = to_int(v); },
        [](const RunConfig& c) { return std::to_string(c.em.hits); },
        [](const RunConfig& c) { return need(c.em.hits >= 1, "must be >= 1"); });
    add("em", "init", kAll,
        [](RunConfig& c, const std::string& v) {
          if (lower(v) == "prior-mean") {
            c.em.init.reset();
            return;
          }
          std::vector<double> x;
          for (const auto& part : split(v, ',')) x.push_back(to_double(part));
          c.em.init = x;
        },
        [](const RunConfig& c) {
          if (!c.em.init) return std::string("prior-mean");
          std::string s;
          for (double x : *c.em.init) s += (s.empty() ? "" : ", ") + fmt(x);
          return s;
        },
        none);

    // [missingness]
    add("missingness", "kind", kAll,
        [](RunConfig& c, const std::string& v) { c.missingness.kind = parse_missing_kind(one_of(v, {"mcar", "micb"})); },
        [](const RunConfig& c) { return std::string(missing_name(c.missingness.kind)); }, none);
    add("missingness", "proportion", kAll,
        [](RunConfig& c, const std::string& v) {
          std::tie(c.missingness.lo, c.missingness.hi) = parse_proportion(v);
        },
        [](const RunConfig& c) { return render_proportion(c.missingness); },
        [](const RunConfig& c) {
          return need(c.missingness.lo >= 0.0 && c.missingness.hi < 1.0 && c.missingness.lo <= c.missingness.hi,
                      "must satisfy 0 <= lo <= hi < 1");
        });

    // [experiment]
    add("experiment", "test_size", kAll,
        [](RunConfig& c, const std::string& v) { c.experiment.test_size = to_uint(v); },
        [](const RunConfig& c) { return std::to_string(c.experiment.test_size); },
        [](const RunConfig& c) { return need(c.experiment.test_size >= 1, "must be >= 1"); });
    add("experiment", "seed", kAll,
        [](RunConfig& c, const std::string& v) { c.experiment.seed = to_uint(v); },
        [](const RunConfig& c) { return std::to_string(c.experiment.seed); }, none);
    add("experiment", "missingness", kAll,
        [](RunConfig& c, const std::string& v) {
          std::vector<NamedMissingness> out;
          for (const auto& item : split(v, ',')) {
            const auto colon = item.find(':');
            if (colon == std::string::npos)
              throw BadValue{"expected KIND:proportion entries, got '" + item + "'"};
            const std::string kind = one_of(trim(item.substr(0, colon)), {"mcar", "micb"});
            const auto [lo, hi] = parse_proportion(trim(item.substr(colon + 1)));
            MissingnessModel m{parse_missing_kind(kind), lo, hi};
            std::string name = missing_name(m.kind);
            for (auto& ch : name) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
            out.push_back({name, m});
          }
          c.experiment.missingness = out;
        },
        [](const RunConfig& c) {
          std::string s;
          for (const auto& m : c.experiment.missingness)
            s += (s.empty() ? "" : ", ") + m.name + ":" +
                 render_proportion(m.model);
          return s;
        },
        [](const RunConfig& c) {
          for (const auto& m : c.experiment.missingness) {
            if (!(m.model.lo >= 0.0 && m.model.hi < 1.0 && m.model.lo <= m.model.hi))
              return std::string("proportions must satisfy 0 <= lo <= hi < 1");
          }
          return need(!c.experiment.missingness.empty(), "needs at least one entry");
        });

    // [bootstrap]
    add("bootstrap", "kind", kAll,
        [](RunConfig& c, const std::string& v) {
          c.bootstrap.kind = one_of(v, {"parametric", "nonparametric"});
        },
        [](const RunConfig& c) { return c.bootstrap.kind; }, none);
    add("bootstrap", "estimator", kAll,
        [](RunConfig& c, const std::string& v) { c.bootstrap.estimator = one_of(v, {"em", "masking"}); },
        [](const RunConfig& c) { return c.bootstrap.estimator; }, none);
    add("bootstrap", "B", kAll, [](RunConfig& c, const std::string& v) { c.bootstrap.B = to_uint(v); },
        [](const RunConfig& c) { return std::to_string(c.bootstrap.B); },
        [](const RunConfig& c) { return need(c.bootstrap.B >= 2, "must be >= 2"); });
    add("bootstrap", "seed", kAll,
        [](RunConfig& c, const std::string& v) { c.bootstrap.seed = to_uint(v); },
        [](const RunConfig& c) { return std::to_string(c.bootstrap.seed); }, none);

    // [paths]
    auto path = [&](const char* name, std::string PathsConfig::*m) {
      add("paths", name, kAll,
          [m](RunConfig& c, const std::string& v) {
            if (v.empty()) throw BadValue{"expected a path"};
            c.paths.*m = v;
          },
          [m](const RunConfig& c) { return c.paths.*m; }, none);
    };
    path("masking_checkpoint", &PathsConfig::masking_checkpoint);
    path("map_checkpoint", &PathsConfig::map_checkpoint);
    path("data", &PathsConfig::data);
    path("output", &PathsConfig::output);
    return t;
  }();
  return table;
}

const std::vector<std::string> kSections = {"model",      "prior",      "loss",
                                            "training",   "em",         "missingness",
                                            "experiment", "bootstrap",  "paths"};

std::string nearest(const std::string& word, const std::vector<std::string>& candidates) {
  std::string best;
  std::size_t best_d = std::string::npos;
  for (const auto& c : candidates) {
    const std::size_t d = levenshtein(lower(word), lower(c));
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  if (best.empty() || best_d > std::max<std::size_t>(2, word.size() / 3)) return "";
  return best;
}

PriorBlock parse_prior_block(const std::string& name, const std::string& text) {
  const auto open = text.find('(');
  const auto close = text.rfind(')');
  if (open == std::string::npos || close == std::string::npos || close < open ||
      trim(text.substr(close + 1)) != "")
    throw BadValue{"expected family(args), got '" + text + "'"};
  const std::string fam = lower(trim(text.substr(0, open)));
  PriorFamily family;
  try {
    family = parse_family(fam);
  } catch (const Error&) {
    throw BadValue{"unknown prior family '" + fam +
                   "' (uniform|beta|truncgauss|gamma|pareto|invgamma|lkj)"};
  }
  std::vector<std::string> args = split(text.substr(open + 1, close - open - 1), ',');
  const std::size_t want = family == PriorFamily::TruncGauss ? 4 : 2;
  if (args.size() != want)
    throw BadValue{std::string(family_name(family)) + " takes " + std::to_string(want) +
                   " arguments, got " + std::to_string(args.size())};
  switch (family) {
    case PriorFamily::Uniform: return PriorBlock::uniform(name, to_double(args[0]), to_double(args[1]));
    case PriorFamily::Beta: return PriorBlock::beta(name, to_double(args[0]), to_double(args[1]));
    case PriorFamily::TruncGauss:
      return PriorBlock::truncgauss(name, to_double(args[0]), to_double(args[1]),
                                    to_double(args[2]), to_double(args[3]));
    case PriorFamily::Gamma: return PriorBlock::gamma(name, to_double(args[0]), to_double(args[1]));
    case PriorFamily::Pareto: return PriorBlock::pareto(name, to_double(args[0]), to_double(args[1]));
    case PriorFamily::InvGamma:
      return PriorBlock::invgamma(name, to_double(args[0]), to_double(args[1]));
    case PriorFamily::Lkj: return PriorBlock::lkj(name, to_uint(args[0]), to_double(args[1]));
  }
  throw BadValue{"unsupported family"};
}

std::string render_prior_block(const PriorBlock& b) {
  std::string s = std::string(family_name(b.family)) + "(";
  switch (b.family) {
    case PriorFamily::TruncGauss:
      s += fmt(b.a) + ", " + fmt(b.b) + ", " + fmt(b.lo) + ", " + fmt(b.hi);
      break;
    case PriorFamily::Lkj: s += std::to_string(b.dim) + ", " + fmt(b.a); break;
    default: s += fmt(b.a) + ", " + fmt(b.b);
  }
  return s + ")";
}

std::vector<PriorBlock> default_prior(const ModelConfig& m) {
  if (m.kind == "gp") {
    auto blocks = GPSpec::matern(m.height, m.width).prior.blocks;
    if (m.nugget == "fixed") blocks.erase(blocks.begin());
    return blocks;
  }
  if (m.kind == "potts") return PottsSpec::ising(m.height, m.width).prior.blocks;
  if (m.kind == "gh") return GHModelSpec::preset(m.dim, m.rows).prior.blocks;
  const GaussVarianceSpec g;
  return {PriorBlock::invgamma("sigma2", g.prior_shape, g.prior_rate)};
}

struct Entry {
  std::string section;
  std::string key;
  std::string value;
  int line;
};

}  // namespace

std::unique_ptr<DataModel> make_model(const RunConfig& cfg) {
  const ModelConfig& m = cfg.model;
  PriorSpec prior{cfg.prior.empty() ? default_prior(m) : cfg.prior};
  if (m.kind == "gp") {
    GPSpec s;
    s.height = m.height;
    s.width = m.width;
    s.nu = m.nu;
    s.sigma2 = m.sigma2;
    s.free_nugget = m.nugget == "free";
    s.fixed_tau = m.tau;
    s.prior = prior;
    s.validate();
    return std::make_unique<GPModel>(s);
  }
  if (m.kind == "potts") {
    PottsSpec s;
    s.height = m.height;
    s.width = m.width;
    s.Q = m.q;
    s.sw_sweeps = m.sw_sweeps;
    s.burn_in = m.burn_in;
    s.spacing = m.spacing;
    s.prior = prior;
    s.validate();
    return std::make_unique<PottsModel>(s);
  }
  if (m.kind == "gh") {
    GHModelSpec s;
    s.dim = m.dim;
    s.rows = m.rows;
    s.prior = prior;
    s.validate();
    return std::make_unique<GHModel>(s);
  }
  if (m.kind == "gaussian-variance") {
    require(prior.blocks.size() == 1 && prior.blocks[0].family == PriorFamily::InvGamma,
            ErrorKind::Config, "gaussian-variance: prior must be a single invgamma block");
    GaussVarianceSpec s;
    s.n = m.n;
    s.prior_shape = prior.blocks[0].a;
    s.prior_rate = prior.blocks[0].b;
    s.validate();
    return std::make_unique<GaussVarianceModel>(s);
  }
  fail(ErrorKind::Config, "model.kind: unknown model '" + m.kind + "'");
}

RunConfig parse_config(const std::string& text, std::vector<std::string>& errors) {
  errors.clear();
  std::vector<Entry> entries;
  {
    std::istringstream in(text);
    std::string raw, section;
    int lineno = 0;
    while (std::getline(in, raw)) {
      ++lineno;
      const auto hash = raw.find('#');
      const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
      if (line.empty()) continue;
      const std::string at = "line " + std::to_string(lineno) + ": ";
      if (line.front() == '[') {
        if (line.back() != ']') {
          errors.push_back(at + "malformed section header '" + line + "'");
          section.clear();
          continue;
        }
        section = lower(trim(line.substr(1, line.size() - 2)));
        if (std::find(kSections.begin(), kSections.end(), section) == kSections.end()) {
          std::string msg = at + "unknown section [" + section + "]";
          const std::string hint = nearest(section, kSections);
          if (!hint.empty()) msg += " (did you mean [" + hint + "]?)";
          errors.push_back(msg);
          section = "?";
        }
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        errors.push_back(at + "expected 'key = value', got '" + line + "'");
        continue;
      }
      if (section.empty()) {
        errors.push_back(at + "key outside of any section");
        continue;
      }
      if (section == "?") continue;
      entries.push_back({section, trim(line.substr(0, eq)), trim(line.substr(eq + 1)), lineno});
    }
  }

  // Duplicates.
  {
    std::map<std::pair<std::string, std::string>, int> seen;
    for (const auto& e : entries) {
      auto [it, fresh] = seen.emplace(std::make_pair(e.section, e.key), e.line);
      if (!fresh)
        errors.push_back("line " + std::to_string(e.line) + ": " + e.section + "." + e.key +
                         ": duplicate key (first set on line " + std::to_string(it->second) + ")");
    }
  }

  RunConfig cfg;
  // The model kind decides which [model] keys are valid.
  for (const auto& e : entries) {
    if (e.section == "model" && e.key == "kind") {
      try {
        cfg.model.kind = one_of(e.value, {"gp", "potts", "gh", "gaussian-variance"});
      } catch (const BadValue& b) {
        errors.push_back("line " + std::to_string(e.line) + ": model.kind: " + b.what);
      }
    }
  }
  const unsigned kind = kind_bit(cfg.model.kind);

  std::vector<std::pair<PriorBlock, int>> prior;
  for (const auto& e : entries) {
    const std::string at = "line " + std::to_string(e.line) + ": " + e.section + "." + e.key + ": ";
    if (e.section == "prior") {
      try {
        prior.emplace_back(parse_prior_block(e.key, e.value), e.line);
      } catch (const BadValue& b) {
        errors.push_back(at + b.what);
      }
      continue;
    }
    const Key* key = nullptr;
    std::vector<std::string> names;
    for (const auto& k : keys()) {
      if (e.section != k.section) continue;
      names.emplace_back(k.name);
      if (e.key == k.name) key = &k;
    }
    if (!key) {
      std::string msg = at + "unknown key";
      const std::string hint = nearest(e.key, names);
      if (!hint.empty()) msg += " (did you mean '" + hint + "'?)";
      errors.push_back(msg);
      continue;
    }
    if (!(key->kinds & kind)) {
      errors.push_back(at + "not used by model kind '" + cfg.model.kind + "'");
      continue;
    }
    if (e.section == "model" && e.key == "kind") continue;
    try {
      key->set(cfg, e.value);
    } catch (const BadValue& b) {
      errors.push_back(at + b.what);
      continue;
    }
    const std::string bad = key->check(cfg);
    if (!bad.empty()) errors.push_back(at + bad + " (got " + e.value + ")");
  }

  for (const auto& [block, line] : prior) {
    try {
      block.validate();
      cfg.prior.push_back(block);
    } catch (const Error& err) {
      errors.push_back("line " + std::to_string(line) + ": prior." + block.name + ": " + err.what());
    }
  }
  if (!errors.empty()) return cfg;

  if (cfg.prior.empty()) cfg.prior = default_prior(cfg.model);
  // Cross-key checks that need a complete config.
  auto check = [&](const std::string& where, auto&& fn) {
    try {
      fn();
    } catch (const Error& err) {
      errors.push_back(where + ": " + err.what());
    }
  };
  check("model", [&] { make_model(cfg); });
  check("loss", [&] { cfg.loss.validate(); });
  check("training", [&] { cfg.training.validate(); });
  check("em", [&] {
    cfg.em.validate();
    if (cfg.em.init) {
      const std::size_t p = PriorSpec{cfg.prior}.dim();
      require(cfg.em.init->size() == p, ErrorKind::Config,
              "init has " + std::to_string(cfg.em.init->size()) + " values, the prior has " +
                  std::to_string(p) + " parameters");
    }
  });
  return cfg;
}

RunConfig parse_config(const std::string& text) {
  std::vector<std::string> errors;
  RunConfig cfg = parse_config(text, errors);
  if (!errors.empty()) {
    std::string msg = std::to_string(errors.size()) + " config error(s):";
    for (const auto& e : errors) msg += "\n  " + e;
    fail(ErrorKind::Config, msg);
  }
  return cfg;
}

std::string render_config(const RunConfig& cfg) {
  std::ostringstream out;
  const unsigned kind = kind_bit(cfg.model.kind);
  std::string section;
  auto open = [&](const std::string& s) {
    if (s == section) return;
    if (!section.empty()) out << "\n";
    out << "[" << s << "]\n";
    section = s;
  };
  for (const auto& k : keys()) {
    if (std::string(k.section) == "loss" && section == "model") {
      const auto blocks = cfg.prior.empty() ? default_prior(cfg.model) : cfg.prior;
      open("prior");
      for (const auto& b : blocks) out << b.name << " = " << render_prior_block(b) << "\n";
    }
    if (!(k.kinds & kind)) continue;
    open(k.section);
    out << k.name << " = " << k.get(cfg) << "\n";
  }
  return out.str();
}

}  // namespace nbe
