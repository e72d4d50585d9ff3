#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include <Eigen/Dense>
#include <zlib.h>

#include "doctest.h"
#include "nbe/error.hpp"
#include "nbe/nn.hpp"

using namespace nbe;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double sd = 1.0) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> n(0.0, sd);
  for (auto& v : t.values()) v = n(rng);
  return t;
}

bool close_rel(const std::vector<double>& a, const std::vector<double>& b, double tol) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::abs(a[i] - b[i]) > tol * std::max(1.0, std::abs(b[i]))) return false;
  }
  return true;
}

// Plain-loop MLP forward for vector_architecture with identity head.
std::vector<double> mlp_oracle(const EstimatorHandle& h, const std::vector<std::vector<double>>& set) {
  std::map<std::string, const Tensor*> w;
  for (const auto& p : h.weights) w[p->name] = &p->value;
  auto dense = [&](const std::vector<double>& x, const std::string& name, bool relu) {
    const Tensor& W = *w.at(name + ".w");
    const Tensor& b = *w.at(name + ".b");
    std::vector<double> y(W.dim(1));
    for (std::size_t j = 0; j < y.size(); ++j) {
      double acc = b[j];
      for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * W[i * W.dim(1) + j];
      y[j] = relu ? std::max(acc, 0.0) : acc;
    }
    return y;
  };
  std::vector<double> pooled;
  for (const auto& z : set) {
    std::vector<double> x = z;
    for (std::size_t l = 0; l < h.arch.summary.size(); ++l) x = dense(x, "psi" + std::to_string(l), true);
    if (pooled.empty()) pooled.assign(x.size(), 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) pooled[i] += x[i] / set.size();
  }
  for (std::size_t l = 0; l < h.arch.inference.size(); ++l) pooled = dense(pooled, "phi" + std::to_string(l), true);
  return dense(pooled, "out", false);
}

std::vector<HeadSegment> identity_head(std::size_t p) {
  return std::vector<HeadSegment>(p, HeadSegment{HeadKind::Identity});
}

void put_le(std::string& s, std::size_t at, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s[at + i] = static_cast<char>((v >> (8 * i)) & 0xff);
}

void refresh_crc(std::string& s) {
  const std::size_t body = s.size() - 4;
  put_le(s, body, static_cast<std::uint32_t>(crc32(0L, reinterpret_cast<const Bytef*>(s.data()), body)));
}

}  // namespace

TEST_CASE("deepsets forward matches a plain-loop oracle") {
  auto h = init_estimator(vector_architecture(3, identity_head(2), 16), 7);
  Rng rng(3);
  std::vector<std::vector<double>> set;
  ReplicateSet reps;
  for (int k = 0; k < 4; ++k) {
    Tensor z = random_tensor({3}, rng);
    reps.push_back(z);
    set.push_back(z.values());
  }
  CHECK(close_rel(deepsets_forward(h, reps), mlp_oracle(h, set), 1e-12));
  // H = 1 reduces to phi(psi(Z)).
  CHECK(close_rel(deepsets_forward(h, {reps[0]}), mlp_oracle(h, {set[0]}), 1e-12));
  // Block replicates [r, d] are r elements each.
  Tensor block({2, 3});
  std::copy(set[0].begin(), set[0].end(), block.values().begin());
  std::copy(set[1].begin(), set[1].end(), block.values().begin() + 3);
  CHECK(close_rel(deepsets_forward(h, {block}), mlp_oracle(h, {set[0], set[1]}), 1e-12));
}

TEST_CASE("deepsets duplicates and permutations") {
  auto h = init_estimator(grid_architecture(8, 8, 1, identity_head(2), 4), 11);
  Rng rng(5);
  Tensor z = random_tensor({8, 8, 1}, rng);
  const auto one = deepsets_forward(h, {z});
  CHECK(close_rel(deepsets_forward(h, {z, z}), one, 1e-12));

  for (std::size_t H : {1u, 2u, 5u, 30u}) {
    ReplicateSet reps;
    for (std::size_t k = 0; k < H; ++k) reps.push_back(random_tensor({8, 8, 1}, rng));
    const auto base = deepsets_forward(h, reps);
    for (int trial = 0; trial < 3; ++trial) {
      std::shuffle(reps.begin(), reps.end(), rng);
      CHECK(close_rel(deepsets_forward(h, reps), base, 1e-6));
    }
  }
  CHECK_THROWS_AS(deepsets_forward(h, {z, random_tensor({8, 9, 1}, rng)}), Error);
  CHECK_THROWS_AS(deepsets_forward(h, {}), Error);
}

TEST_CASE("global mean pooling") {
  Tensor c({5, 7, 2}, 3.0);
  auto p = global_mean_pool(c);
  CHECK(p.shape() == Shape{1, 1, 2});
  CHECK(p[0] == doctest::Approx(3.0));
  CHECK(p[1] == doctest::Approx(3.0));
  auto q = global_mean_pool(Tensor({2, 2, 1}, {1, 2, 3, 4}));
  CHECK(q[0] == doctest::Approx(2.5));
  CHECK_THROWS_AS(global_mean_pool(Tensor({0, 3, 1})), Error);
  CHECK_THROWS_AS(global_mean_pool(Tensor({3, 1})), Error);

  auto h = init_estimator(grid_architecture(16, 16, 1, identity_head(2), 4), 2);
  Rng rng(9);
  auto a = deepsets_forward(h, {random_tensor({16, 16, 1}, rng)});
  auto b = deepsets_forward(h, {random_tensor({16, 24, 1}, rng)});
  CHECK(a.size() == 2);
  CHECK(b.size() == 2);
  CHECK(std::isfinite(b[0]));
  CHECK(std::isfinite(b[1]));
  CHECK_THROWS_AS(deepsets_forward(h, {random_tensor({16, 16, 2}, rng)}), Error);
}

TEST_CASE("architecture validation") {
  ArchitectureSpec a = vector_architecture(2, identity_head(1));
  a.summary.push_back(LayerSpec::gmp());
  CHECK_THROWS_AS(a.validate(), Error);
  ArchitectureSpec g = grid_architecture(16, 16, 1, identity_head(1));
  g.summary.pop_back();  // no pooling: summary not flat
  CHECK_THROWS_AS(g.validate(), Error);
  ArchitectureSpec e = grid_architecture(16, 16, 1, identity_head(1));
  e.head.clear();
  CHECK_THROWS_AS(e.validate(), Error);
  CHECK_THROWS_AS(parse_layer_kind("attention"), Error);
  // Flattening networks are tied to their training grid.
  ArchitectureSpec f = grid_architecture(8, 8, 1, identity_head(1));
  f.summary.back() = LayerSpec::flatten();
  auto hf = init_estimator(f, 1);
  Rng rng(1);
  CHECK_NOTHROW(deepsets_forward(hf, {random_tensor({8, 8, 1}, rng)}));
  CHECK_THROWS_AS(deepsets_forward(hf, {random_tensor({8, 12, 1}, rng)}), Error);
}

TEST_CASE("output heads") {
  std::vector<HeadSegment> head{{HeadKind::Softplus, 1, 0.0, 1.0},
                               {HeadKind::Softplus, 1, 0.0, 1.0},
                               {HeadKind::Correlation, 3, 0.0, 1.0}};
  auto h = init_estimator(vector_architecture(4, head, 16), 4);
  Rng rng(8);
  for (int t = 0; t < 200; ++t) {
    auto out = deepsets_forward(h, {random_tensor({4}, rng, 30.0)});
    REQUIRE(out.size() == 5);
    CHECK(out[0] > 0.0);
    CHECK(out[1] > 0.0);
    Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
    R(1, 0) = R(0, 1) = out[2];
    R(2, 0) = R(0, 2) = out[3];
    R(2, 1) = R(1, 2) = out[4];
    CHECK(Eigen::LLT<Eigen::Matrix3d>(R).info() == Eigen::Success);
  }
}

TEST_CASE("early stopping patience") {
  EarlyStopping s(5);
  const std::vector<double> seq{5, 4, 4, 4, 4, 4, 4};
  int stopped = 0;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (s.update(seq[i])) {
      stopped = static_cast<int>(i) + 1;
      break;
    }
  }
  CHECK(stopped == 7);
  CHECK(s.best_epoch() == 2);
  EarlyStopping t(1);
  CHECK_FALSE(t.update(1.0));
  CHECK(t.update(1.0));
  CHECK_THROWS_AS(EarlyStopping(0), Error);
}

TEST_CASE("training config validation") {
  TrainingConfig c;
  CHECK_NOTHROW(c.validate());
  c.batch = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = TrainingConfig{};
  c.K = 10;
  CHECK_THROWS_AS(c.validate(), Error);
  c = TrainingConfig{};
  c.patience = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = TrainingConfig{};
  c.optimizer = "sgd";
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("constant task converges to the prior mean") {
  // Data carry no information, so the quadratic-loss Bayes estimator is E[theta].
  auto arch = vector_architecture(1, identity_head(1), 16);
  PairSampler sampler = [](std::size_t, Rng& rng) {
    return TrainingPair{{2.0 * uniform01(rng)}, Tensor({1, 1}, 0.0)};
  };
  TrainingConfig cfg;
  cfg.K = 2000;
  cfg.learning_rate = 5e-3;
  cfg.max_epochs = 40;
  cfg.seed = 21;
  auto h = train(arch, LossSpec::quadratic(), sampler, cfg);
  const double est = deepsets_forward(h, {Tensor({1}, 0.0)})[0];
  CHECK(std::abs(est - 1.0) < 0.05);
  REQUIRE(!h.meta.history.empty());
  CHECK(h.meta.best_epoch >= 1);
  double best = h.meta.history[0].validation;
  for (const auto& e : h.meta.history) best = std::min(best, e.validation);
  CHECK(h.meta.history[h.meta.best_epoch - 1].validation == best);

  // Reproducible from the seed.
  auto h2 = train(arch, LossSpec::quadratic(), sampler, cfg);
  CHECK(save_checkpoint(h) == save_checkpoint(h2));

  // init_seed only moves the starting weights.
  cfg.max_epochs = 1;
  cfg.init_seed = cfg.seed;
  auto a = train(arch, LossSpec::quadratic(), sampler, cfg);
  cfg.init_seed.reset();
  auto b = train(arch, LossSpec::quadratic(), sampler, cfg);
  CHECK(save_checkpoint(a) == save_checkpoint(b));
  cfg.init_seed = 99;
  auto c = train(arch, LossSpec::quadratic(), sampler, cfg);
  CHECK(save_checkpoint(a) != save_checkpoint(c));
  const auto fresh = init_estimator(arch, 99);
  CHECK(fresh.weights[0]->value != init_estimator(arch, 21).weights[0]->value);
}

TEST_CASE("training learns an informative mapping") {
  // theta ~ U(-1,1), x = theta + small noise; estimator should track theta.
  auto arch = vector_architecture(1, identity_head(1), 16);
  PairSampler sampler = [](std::size_t, Rng& rng) {
    const double th = 2.0 * uniform01(rng) - 1.0;
    std::normal_distribution<double> n(0.0, 0.05);
    Tensor x({5, 1});
    for (auto& v : x.values()) v = th + n(rng);
    return TrainingPair{{th}, x};
  };
  TrainingConfig cfg;
  cfg.K = 3000;
  cfg.learning_rate = 3e-3;
  cfg.max_epochs = 60;
  auto h = train(arch, LossSpec::quadratic(), sampler, cfg);
  for (double th : {-0.5, 0.0, 0.5}) {
    Tensor x({5, 1}, th);
    CHECK(std::abs(deepsets_forward(h, {x})[0] - th) < 0.1);
  }
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
  auto arch = vector_architecture(1, identity_head(1), 8);
  PairSampler sampler = [](std::size_t k, Rng&) {
    return TrainingPair{{k == 5 ? std::nan("") : 0.0}, Tensor({1, 1}, 1.0)};
  };
  TrainingConfig cfg;
  cfg.K = 200;
  try {
    train(arch, LossSpec::quadratic(), sampler, cfg);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Numerical);
    CHECK(std::string(e.what()).find("epoch 1") != std::string::npos);
  }
}

TEST_CASE("checkpoint round trip and integrity") {
  auto arch = grid_architecture(8, 8, 2, {{HeadKind::Softplus, 1, 0.0, 1.0}, {HeadKind::Identity, 1}}, 4);
  auto h = init_estimator(arch, 13);
  round_weights_to_float(h);
  h.meta.variant = "masking";
  h.meta.model = "gp";
  h.meta.loss = LossSpec::tanh(0.1);
  h.meta.H = 3;
  h.meta.prior_digest = "uniform(0,1)";
  h.meta.history = {{1, 0.5, 0.25}, {2, 0.125, 0.2}};
  h.meta.best_epoch = 2;
  const std::string bytes = save_checkpoint(h);
  auto back = load_checkpoint(bytes);
  CHECK(back.arch == h.arch);
  CHECK(back.meta == h.meta);
  REQUIRE(back.weights.size() == h.weights.size());
  for (std::size_t i = 0; i < h.weights.size(); ++i) {
    CHECK(back.weights[i]->name == h.weights[i]->name);
    CHECK(back.weights[i]->trainable == h.weights[i]->trainable);
    CHECK(back.weights[i]->value == h.weights[i]->value);
  }
  Rng rng(2);
  ReplicateSet reps{random_tensor({8, 8, 2}, rng), random_tensor({8, 8, 2}, rng)};
  CHECK(deepsets_forward(back, reps) == deepsets_forward(h, reps));
  CHECK(save_checkpoint(back) == bytes);

  auto expect_format = [](const std::string& b, const char* needle) {
    try {
      load_checkpoint(b);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Format);
      CHECK(std::string(e.what()).find(needle) != std::string::npos);
    }
  };
  std::string bad = bytes;
  bad[bad.size() / 2] ^= 0x10;
  expect_format(bad, "checksum");
  expect_format(bytes.substr(0, bytes.size() - 9), "truncated");
  expect_format(bytes + "x", "trailing");
  std::string ver = bytes;
  ver[8] = 2;
  expect_format(ver, "version");
  expect_format("hello", "truncated");
  expect_format(std::string(40, 'x'), "magic");

  // Unknown layer kind with a valid checksum.
  std::string unk = bytes;
  const auto at = unk.find("\"resblock\"");
  REQUIRE(at != std::string::npos);
  unk.replace(at, 10, "\"warpnet\" ");
  refresh_crc(unk);
  try {
    load_checkpoint(unk);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Unsupported);
    CHECK(std::string(e.what()).find("warpnet") != std::string::npos);
  }
}

TEST_CASE("checkpoint rejects weights that do not fit the architecture") {
  auto h = init_estimator(vector_architecture(2, identity_head(1), 8), 1);
  round_weights_to_float(h);
  auto g = clone_estimator(h);
  g.weights.pop_back();
  CHECK_THROWS_AS(save_checkpoint(g), Error);
  g = clone_estimator(h);
  g.weights[0]->value = Tensor({3, 8});
  CHECK_THROWS_AS(save_checkpoint(g), Error);
  g = clone_estimator(h);
  g.meta.H = 0;
  CHECK_THROWS_AS(g.validate(), Error);
}
