// nbe: simulate, train, estimate, em, bootstrap, experiment, oracle.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "nbe/config.hpp"
#include "nbe/error.hpp"
#include "nbe/eval.hpp"
#include "nbe/io.hpp"
#include "nbe/model_gauss.hpp"
#include "nbe/model_gp.hpp"
#include "nbe/model_potts.hpp"
#include "nbe/simd.hpp"

#ifndef NBE_VERSION
#define NBE_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace nbe;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kNumerical = 3, kNotConverged = 4 };

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config: return kConfig;
    case ErrorKind::Numerical: return kNumerical;
    case ErrorKind::NotConverged: return kNotConverged;
    default: return kFailure;
  }
}

std::string fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(bool(in), ErrorKind::Config, "cannot read config '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      require(item.find_first_not_of(" \t", used) == std::string::npos, ErrorKind::Config, "");
    } catch (const std::exception&) {
      fail(ErrorKind::Config, "--theta: '" + item + "' is not a number");
    }
  }
  return out;
}

struct Options {
  std::string config_path;
  std::size_t threads = std::max(1u, std::thread::hardware_concurrency());
  std::uint64_t seed = 1;
  std::string isa;
  bool quiet = false;
  // per command
  std::string theta;
  std::string variant;
  std::string estimator;
};

class Run {
 public:
  Run(std::string command, const Options& opt, std::vector<std::string> argv)
      : command_(std::move(command)), opt_(opt), argv_(std::move(argv)) {}

  int execute() {
    const auto t0 = std::chrono::steady_clock::now();
    int code = kOk;
    std::string message;
    try {
      setup();
      code = dispatch();
    } catch (const Error& e) {
      code = exit_code(e.kind());
      message = e.what();
      std::cerr << "nbe " << command_ << ": " << to_string(e.kind()) << " error: " << e.what()
                << "\n";
    }
    manifest_["exit_code"] = code;
    if (!message.empty()) manifest_["error"] = message;
    manifest_["wall_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!out_dir_.empty()) {
      try {
        std::ofstream m(out_dir_ / (command_ + ".manifest.json"));
        m << manifest_.dump(2) << "\n";
      } catch (...) {
        std::cerr << "nbe: could not write manifest\n";
      }
    }
    return code;
  }

 private:
  std::string command_;
  Options opt_;
  std::vector<std::string> argv_;
  RunConfig cfg_;
  std::unique_ptr<DataModel> model_;
  fs::path out_dir_;
  json manifest_;
  json outputs_ = json::array();

  void setup() {
    if (!opt_.isa.empty()) {
      require(opt_.isa == "scalar" || opt_.isa == "avx2", ErrorKind::Config,
              "--isa must be scalar or avx2");
      simd::set_active_isa(opt_.isa == "scalar" ? simd::Isa::Scalar : simd::Isa::Avx2);
    }
    cfg_ = parse_config(read_text(opt_.config_path));
    const char* env = std::getenv("NBE_OUTPUT_DIR");
    out_dir_ = env && *env ? fs::path(env) : fs::path(cfg_.paths.output);
    std::error_code ec;
    fs::create_directories(out_dir_, ec);
    require(!ec, ErrorKind::InvalidArgument,
            "cannot create output directory '" + out_dir_.string() + "': " + ec.message());
    const std::string rendered = render_config(cfg_);
    manifest_ = {{"command", command_},
                 {"argv", argv_},
                 {"version", NBE_VERSION},
                 {"isa", simd::isa_name(simd::active_isa())},
                 {"threads", opt_.threads},
                 {"seed", opt_.seed},
                 {"config_path", opt_.config_path},
                 {"config_digest", fnv1a(rendered)},
                 {"config", rendered},
                 {"started", std::time(nullptr)}};
    model_ = make_model(cfg_);
    cfg_.training.threads = opt_.threads;
    cfg_.training.verbose = !opt_.quiet;
  }

  // Checkpoints with relative paths live in the output directory.
  fs::path checkpoint_path(const std::string& p) const {
    const fs::path path(p);
    return path.is_absolute() ? path : out_dir_ / path;
  }

  fs::path output(const std::string& name) {
    outputs_.push_back(name);
    manifest_["outputs"] = outputs_;
    return out_dir_ / name;
  }

  void write_json(const std::string& name, const json& j) {
    std::ofstream out(output(name));
    out << j.dump(2) << "\n";
    require(bool(out), ErrorKind::InvalidArgument, "cannot write " + name);
  }

  json named(const std::vector<double>& theta) const {
    json j = json::object();
    const auto names = model_->prior().names();
    for (std::size_t i = 0; i < theta.size() && i < names.size(); ++i) j[names[i]] = theta[i];
    return j;
  }

  void print(const std::vector<double>& theta) const {
    const auto names = model_->prior().names();
    for (std::size_t i = 0; i < theta.size(); ++i)
      std::cout << names.at(i) << " = " << theta[i] << "\n";
  }

  EstimatorHandle load(const std::string& path_text, const std::string& variant) const {
    const fs::path path = checkpoint_path(path_text);
    EstimatorHandle h = load_checkpoint_file(path.string());
    require(h.meta.model == model_->name(), ErrorKind::Config,
            path.string() + " was trained for model '" + h.meta.model + "', config has '" +
                model_->name() + "'");
    require(h.meta.variant == variant, ErrorKind::Config,
            path.string() + " is a '" + h.meta.variant + "' network, expected '" + variant + "'");
    require(h.meta.prior_digest == model_->prior().render(), ErrorKind::Config,
            path.string() + " was trained under prior " + h.meta.prior_digest +
                ", config has " + model_->prior().render());
    return h;
  }

  IncompleteField data() const { return read_field_file(*model_, cfg_.paths.data); }

  int dispatch() {
    if (command_ == "simulate") return simulate();
    if (command_ == "train") return train_cmd();
    if (command_ == "estimate") return estimate();
    if (command_ == "em") return em();
    if (command_ == "bootstrap") return bootstrap();
    if (command_ == "experiment") return experiment();
    if (command_ == "oracle") return oracle();
    fail(ErrorKind::Config, "unknown command " + command_);
  }

  int simulate() {
    std::vector<double> theta;
    if (!opt_.theta.empty()) {
      theta = parse_list(opt_.theta);
      require(theta.size() == model_->prior().dim(), ErrorKind::Config,
              "--theta needs " + std::to_string(model_->prior().dim()) + " values");
      require(in_support(model_->prior(), theta), ErrorKind::Config,
              "--theta is outside the prior support");
    } else {
      Rng rng = make_rng(opt_.seed, 0);
      theta = sample_prior(model_->prior(), rng);
    }
    Rng zrng = make_rng(opt_.seed, 1);
    const Tensor z = model_->simulate(theta, zrng);
    Rng mrng = make_rng(opt_.seed, 2);
    const IncompleteField f = apply_missingness(cfg_.missingness, z, mrng);
    write_field_file(*model_, f, output("data.csv").string());
    write_json("theta.json", {{"theta", named(theta)},
                              {"observed", f.observed_count()},
                              {"missing", f.size() - f.observed_count()}});
    print(theta);
    return kOk;
  }

  int train_cmd() {
    const std::string variant = opt_.variant.empty() ? cfg_.variant : opt_.variant;
    require(variant == "masking" || variant == "map", ErrorKind::Config,
            "--variant must be masking or map");
    const bool masked = variant == "masking";
    const ArchitectureSpec arch = default_architecture(*model_, masked, cfg_.width);
    const auto t0 = std::chrono::steady_clock::now();
    EstimatorHandle h = masked ? train_masking_nbe(*model_, cfg_.missingness, cfg_.loss,
                                                   cfg_.training, arch)
                               : train_map_nbe(*model_, cfg_.loss, cfg_.em.H, cfg_.training, arch);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const fs::path path =
        checkpoint_path(masked ? cfg_.paths.masking_checkpoint : cfg_.paths.map_checkpoint);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    save_checkpoint_file(h, path.string());
    outputs_.push_back(path.string());
    json history = json::array();
    for (const auto& e : h.meta.history)
      history.push_back({{"epoch", e.epoch}, {"train", e.train}, {"validation", e.validation}});
    write_json("training.json", {{"variant", variant},
                                 {"checkpoint", path.string()},
                                 {"parameters", h.parameter_count()},
                                 {"best_epoch", h.meta.best_epoch},
                                 {"seconds", secs},
                                 {"history", history}});
    std::cout << "saved " << path.string() << " (best epoch " << h.meta.best_epoch << ", "
              << secs << " s)\n";
    return kOk;
  }

  int estimate() {
    const EstimatorHandle h = load(cfg_.paths.masking_checkpoint, "masking");
    const IncompleteField f = data();
    const std::vector<double> theta = estimate_masking(h, *model_, f);
    write_json("estimate.json", {{"estimator", "masking"}, {"theta", named(theta)}});
    print(theta);
    return kOk;
  }

  int em() {
    const EstimatorHandle h = load(cfg_.paths.map_checkpoint, "map");
    require(h.meta.H == cfg_.em.H, ErrorKind::Config,
            "checkpoint was trained with H = " + std::to_string(h.meta.H) + ", em.H is " +
                std::to_string(cfg_.em.H));
    const IncompleteField f = data();
    Rng rng = make_rng(opt_.seed, 0);
    const EMResult r = neural_em(h, *model_, f, cfg_.em, rng);
    {
      std::ofstream out(output("em_trace.csv"));
      write_em_trace(out, r, model_->prior().names());
    }
    write_json("estimate.json", {{"estimator", "em"},
                                 {"theta", named(r.theta)},
                                 {"status", em_status_name(r.status)},
                                 {"iterations", r.iterations},
                                 {"failure", r.failure},
                                 {"simulation_seconds", r.simulation_seconds},
                                 {"network_seconds", r.network_seconds}});
    print(r.theta);
    if (r.status == EMStatus::Failed) {
      std::cerr << "nbe em: failed: " << r.failure << "\n";
      return kNumerical;
    }
    if (r.status == EMStatus::MaxIterations) {
      std::cerr << "nbe em: no convergence after " << r.iterations << " iterations\n";
      return kNotConverged;
    }
    return kOk;
  }

  FieldEstimator field_estimator(const std::string& which, std::optional<EstimatorHandle>& keep) {
    if (which == "masking") {
      keep = load(cfg_.paths.masking_checkpoint, "masking");
      return masking_estimator("masking", *keep, *model_).fn;
    }
    keep = load(cfg_.paths.map_checkpoint, "map");
    return em_estimator("em", *keep, *model_, cfg_.em).fn;
  }

  int bootstrap() {
    const std::string which = opt_.estimator.empty() ? cfg_.bootstrap.estimator : opt_.estimator;
    require(which == "masking" || which == "em", ErrorKind::Config,
            "--estimator must be masking or em");
    std::optional<EstimatorHandle> handle;
    const FieldEstimator est = field_estimator(which, handle);
    const IncompleteField f = data();
    Rng rng = make_rng(cfg_.bootstrap.seed, 0x7ull << 40);
    const EstimateOutcome point = est(f, rng);
    require(point.status.rfind("error", 0) != 0, ErrorKind::Numerical,
            "point estimate failed: " + point.status);
    BootstrapResult b;
    if (cfg_.bootstrap.kind == "parametric") {
      b = parametric_bootstrap(*model_, point.theta, f.observed, est, cfg_.bootstrap.B,
                               cfg_.bootstrap.seed, opt_.threads);
    } else {
      require(model_->iid_rows(), ErrorKind::Config,
              "nonparametric bootstrap needs a model with exchangeable rows");
      // A unit is one row with its observation flags appended.
      const std::size_t t = f.values.dim(0), d = f.values.dim(1);
      std::vector<Tensor> units;
      for (std::size_t r = 0; r < t; ++r) {
        Tensor u({2 * d});
        for (std::size_t c = 0; c < d; ++c) {
          u[c] = f.values[r * d + c];
          u[d + c] = f.observed[r * d + c];
        }
        units.push_back(u);
      }
      const double fill = f.fill;
      SetEstimator set_est = [&est, d, fill](const std::vector<Tensor>& rows, Rng& r) {
        IncompleteField g;
        g.fill = fill;
        g.values = Tensor({rows.size(), d});
        g.observed.resize(rows.size() * d);
        for (std::size_t i = 0; i < rows.size(); ++i) {
          for (std::size_t c = 0; c < d; ++c) {
            g.values[i * d + c] = rows[i][c];
            g.observed[i * d + c] = rows[i][d + c] != 0.0;
          }
        }
        const EstimateOutcome o = est(g, r);
        require(o.status.rfind("error", 0) != 0, ErrorKind::Numerical, o.status);
        return o.theta;
      };
      b = nonparametric_bootstrap(units, set_est, cfg_.bootstrap.B, cfg_.bootstrap.seed,
                                  opt_.threads);
    }
    {
      std::ofstream out(output("bootstrap.csv"));
      out << "replicate";
      for (const auto& n : model_->prior().names()) out << "," << n;
      out << "\n";
      out.precision(17);
      for (std::size_t i = 0; i < b.estimates.size(); ++i) {
        out << i;
        for (double v : b.estimates[i]) out << "," << v;
        out << "\n";
      }
    }
    write_json("bootstrap.json", {{"kind", cfg_.bootstrap.kind},
                                  {"estimator", which},
                                  {"B", cfg_.bootstrap.B},
                                  {"dropped", b.dropped},
                                  {"estimate", named(point.theta)},
                                  {"lower", named(b.lower)},
                                  {"upper", named(b.upper)}});
    const auto names = model_->prior().names();
    for (std::size_t i = 0; i < names.size(); ++i)
      std::cout << names[i] << " = " << point.theta[i] << "  95% [" << b.lower[i] << ", "
                << b.upper[i] << "]\n";
    return kOk;
  }

  int experiment() {
    const EstimatorHandle masking = load(cfg_.paths.masking_checkpoint, "masking");
    const EstimatorHandle map = load(cfg_.paths.map_checkpoint, "map");
    ExperimentSpec spec;
    spec.model = model_.get();
    spec.estimators.push_back(em_estimator("em", map, *model_, cfg_.em));
    spec.estimators.push_back(masking_estimator("masking", masking, *model_));
    if (const auto* gp = dynamic_cast<const GPModel*>(model_.get()))
      spec.estimators.push_back(gp_map_estimator("map", gp->spec()));
    spec.missingness = cfg_.experiment.missingness;
    spec.test_size = cfg_.experiment.test_size;
    spec.seed = cfg_.experiment.seed;
    spec.threads = opt_.threads;
    spec.csv_path = output("experiment.csv").string();
    spec.json_path = output("summary.json").string();
    const ExperimentResult r = run_experiment(spec);
    for (const auto& [name, s] : r.summary) {
      for (const auto& [miss, rmse] : s.rmse)
        std::cout << name << " " << miss << " rmse " << rmse << " failures "
                  << s.failures.at(miss) << "\n";
    }
    return kOk;
  }

  int oracle() {
    const IncompleteField f = data();
    json j;
    std::vector<double> theta;
    if (const auto* gp = dynamic_cast<const GPModel*>(model_.get())) {
      const MapResult m = map_estimate_gp(gp->spec(), f);
      theta = m.theta;
      j = {{"method", "nelder-mead"}, {"log_posterior", m.log_posterior}, {"converged", m.converged}};
    } else if (const auto* potts = dynamic_cast<const PottsModel*>(model_.get())) {
      const PottsMap m = potts_map_bruteforce(potts->spec(), f);
      theta = {m.beta};
      j = {{"method", "enumeration"}, {"log_posterior", m.log_posterior}};
    } else if (const auto* gv = dynamic_cast<const GaussVarianceModel*>(model_.get())) {
      std::vector<double> z;
      for (std::size_t i = 0; i < f.size(); ++i)
        if (f.observed[i]) z.push_back(f.values[i]);
      theta = {gaussian_variance_map(z, gv->spec().prior_shape, gv->spec().prior_rate)};
      j = {{"method", "closed-form"}};
    } else {
      fail(ErrorKind::Unsupported, "no MAP oracle for model '" + model_->name() + "'");
    }
    j["theta"] = named(theta);
    write_json("oracle.json", j);
    print(theta);
    return kOk;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural Bayes estimators for incomplete data"};
  app.require_subcommand(1);
  app.set_version_flag("--version", NBE_VERSION);
  Options opt;
  auto common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", opt.config_path, "config file")->required()->check(CLI::ExistingFile);
    sub->add_option("--threads", opt.threads, "worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--seed", opt.seed, "seed for commands without a config seed");
    sub->add_option("--isa", opt.isa, "force kernel set (scalar|avx2)");
    sub->add_flag("-q,--quiet", opt.quiet, "no progress output");
  };
  auto* sim = app.add_subcommand("simulate", "draw a field (theta from the prior unless given)");
  common(sim);
  sim->add_option("--theta", opt.theta, "comma-separated parameter values");
  auto* train = app.add_subcommand("train", "train a masking or MAP network");
  common(train);
  train->add_option("--variant", opt.variant, "masking|map (default: training.variant)");
  common(app.add_subcommand("estimate", "masking-network estimate for paths.data"));
  common(app.add_subcommand("em", "neural EM estimate for paths.data"));
  auto* boot = app.add_subcommand("bootstrap", "bootstrap intervals for paths.data");
  common(boot);
  boot->add_option("--estimator", opt.estimator, "em|masking (default: bootstrap.estimator)");
  common(app.add_subcommand("experiment", "simulation study over test cases"));
  common(app.add_subcommand("oracle", "numeric or enumerated MAP for paths.data"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfig;
  }
  std::vector<std::string> args(argv, argv + argc);
  Run run(app.get_subcommands().front()->get_name(), opt, args);
  return run.execute();
}
