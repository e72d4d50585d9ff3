#include <random>
#include <string>

#include "doctest.h"
#include "nbe/config.hpp"
#include "nbe/error.hpp"

using namespace nbe;

namespace {

std::string errors_of(const std::string& text) {
  std::vector<std::string> errors;
  parse_config(text, errors);
  std::string all;
  for (const auto& e : errors) all += e + "\n";
  return all;
}

}  // namespace

TEST_CASE("minimal gp config gets defaults") {
  const RunConfig c = parse_config("[model]\nkind = gp\n");
  CHECK(c.model.kind == "gp");
  CHECK(c.em.H == 30);
  CHECK(c.loss.kind == LossKind::Tanh);
  CHECK(c.loss.kappa == 0.1);
  CHECK(c.training.patience == 5);
  REQUIRE(c.prior.size() == 2);
  CHECK(c.prior[0].name == "tau");
  CHECK(c.prior[1] == PriorBlock::uniform("rho", 0.0, 0.35));
  auto m = make_model(c);
  CHECK(m->name() == "gp");
  CHECK(m->prior().dim() == 2);
}

TEST_CASE("every violation is reported with its location") {
  const std::string text =
      "[model]\n"
      "kind = gp\n"
      "height = x\n"         // type mismatch
      "[loss]\n"
      "kappa = -1\n"         // range
      "kapa = 0.2\n"         // unknown, near kappa
      "[training]\n"
      "patience = 0\n"       // range
      "[em]\n"
      "hits = 2.5\n";        // not an integer
  const std::string errs = errors_of(text);
  CHECK(errs.find("line 3: model.height") != std::string::npos);
  CHECK(errs.find("line 5: loss.kappa: must be > 0") != std::string::npos);
  CHECK(errs.find("line 6: loss.kapa: unknown key (did you mean 'kappa'?)") != std::string::npos);
  CHECK(errs.find("line 8: training.patience") != std::string::npos);
  CHECK(errs.find("line 10: em.hits") != std::string::npos);
  try {
    parse_config(text);
    FAIL("expected a config error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Config);
    CHECK(std::string(e.what()).find("5 config error(s)") != std::string::npos);
  }
}

TEST_CASE("structural errors") {
  CHECK(errors_of("[modle]\nkind = gp\n").find("did you mean [model]") != std::string::npos);
  CHECK(errors_of("kind = gp\n").find("outside of any section") != std::string::npos);
  CHECK(errors_of("[model]\nkind gp\n").find("expected 'key = value'") != std::string::npos);
  CHECK(errors_of("[model]\nkind = gp\nkind = potts\n").find("duplicate") != std::string::npos);
  CHECK(errors_of("[model]\nkind = potts\nnu = 2\n").find("model.nu: not used by model kind 'potts'") !=
        std::string::npos);
  CHECK(errors_of("[model]\nkind = ising\n").find("model.kind: expected one of") != std::string::npos);
  CHECK(errors_of("[prior]\nrho = normal(0, 1)\n").find("unknown prior family") != std::string::npos);
  CHECK(errors_of("[prior]\nrho = uniform(1, 0)\n").find("prior.rho") != std::string::npos);
  CHECK(errors_of("[em]\ninit = 0.1\n").find("init has 1 values") != std::string::npos);
  CHECK(errors_of("[missingness]\nproportion = 0.5..0.2\n").find("missingness.proportion") !=
        std::string::npos);
  CHECK(errors_of("# only a comment\n[model] \n kind = gh # trailing\n").empty());
}

TEST_CASE("explicit sections parse") {
  const RunConfig c = parse_config(
      "[model]\nkind = potts\nheight = 8\nwidth = 12\nq = 3\n"
      "[prior]\nbeta = uniform(0, 1.2)\n"
      "[loss]\nkind = power\nbeta = 2\ndelta = 0.1\n"
      "[em]\ninit = 0.5\n"
      "[experiment]\nmissingness = MCAR:0.2, micb:0.1..0.3\n");
  CHECK(c.model.q == 3);
  CHECK(c.prior == std::vector<PriorBlock>{PriorBlock::uniform("beta", 0.0, 1.2)});
  CHECK(c.loss == LossSpec{LossKind::Power, 0.1, 2.0, 0.1});
  REQUIRE(c.em.init.has_value());
  CHECK(*c.em.init == std::vector<double>{0.5});
  REQUIRE(c.experiment.missingness.size() == 2);
  CHECK(c.experiment.missingness[1].name == "MICB");
  CHECK(c.experiment.missingness[1].model == MissingnessModel::range(MissingKind::MICB, 0.1, 0.3));
  auto m = make_model(c);
  CHECK(m->field_shape() == Shape{8, 12});
}

TEST_CASE("render round trips") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const char* kinds[] = {"gp", "potts", "gh", "gaussian-variance"};
  for (int trial = 0; trial < 200; ++trial) {
    RunConfig c;
    // only keys the kind uses; the others keep their defaults
    c.model.kind = kinds[trial % 4];
    if (c.model.kind == "gp" || c.model.kind == "potts") c.model.height = 4 + rng() % 30;
    if (c.model.kind == "gp") {
      c.model.nu = 0.1 + 3 * u(rng);
      c.model.sigma2 = u(rng) + 0.01;
      c.model.nugget = trial % 3 ? "free" : "fixed";
      c.model.tau = u(rng) / 3;
    }
    if (c.model.kind == "potts") c.model.q = 2 + rng() % 4;
    if (c.model.kind == "gh") c.model.dim = 2 + rng() % 3;
    if (c.model.kind == "gaussian-variance") c.model.n = 1 + rng() % 50;
    c.loss = trial % 2 ? LossSpec::tanh(u(rng) + 1e-3) : LossSpec::cauchy(u(rng) + 0.1, 1 + u(rng));
    c.loss.norm = trial % 5 ? Norm::Euclidean : Norm::L1;
    c.training.K = 100 + rng() % 10000;
    c.training.learning_rate = u(rng) * 1e-2 + 1e-6;
    c.training.seed = rng();
    c.variant = trial % 2 ? "map" : "masking";
    c.em.tolerance = u(rng) / 7;
    c.missingness = MissingnessModel::range(MissingKind::MICB, u(rng) / 3, 0.5 + u(rng) / 3);
    c.experiment.seed = rng();
    c.bootstrap.B = 2 + rng() % 500;
    c.paths.output = "out dir/" + std::to_string(trial);
    if (c.model.kind == "gaussian-variance") {
      c.prior = {PriorBlock::invgamma("sigma2", 1 + u(rng), u(rng) + 0.1)};
      c.em.init = std::vector<double>{u(rng)};
    } else if (c.model.kind == "potts") {
      c.prior = {PriorBlock::truncgauss("beta", u(rng), 0.3, 0.0, 1.5)};
    } else {
      // default prior filled in at parse time
      const RunConfig d = parse_config(render_config(c));
      c.prior = d.prior;
    }
    const std::string text = render_config(c);
    const RunConfig back = parse_config(text);
    CHECK_MESSAGE(back == c, text);
    CHECK(render_config(back) == text);
  }
}

TEST_CASE("levenshtein") {
  CHECK(levenshtein("", "") == 0);
  CHECK(levenshtein("kapa", "kappa") == 1);
  CHECK(levenshtein("kitten", "sitting") == 3);
  CHECK(levenshtein("abc", "") == 3);
}
