// topogen: one binary for the whole pipeline.
//
//   gen-data   build a labelled synthetic mask dataset
//   ph         persistence diagram (or Betti number) of an image
//   loss       topology loss value + sparse gradient of an image
//   optimize   steer a noise image toward a target topology, no network
//   train      train the conditional noise predictor
//   sample     deterministic strided sampling from a checkpoint
//   eval       counting metrics over sample directories (+ Welch t-test)
//
// Every subcommand accepts --config FILE (JSON); explicit command-line
// flags override file values.  Subcommands that produce a directory write
// the fully-resolved configuration to <out>/run_config.json, so a run can
// be reproduced byte-for-byte with `topogen <cmd> --config run_config.json`.
// Subcommands that write a single file FILE put it at FILE.run_config.json;
// with stdout output nothing is written.
//
// Exit codes: 0 success, 2 usage error, 3 validation failure, 4 numerical
// failure.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <regex>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include <nlohmann/json.hpp>

#include "topogen/datagen.hpp"
#include "topogen/denoiser.hpp"
#include "topogen/errors.hpp"
#include "topogen/image.hpp"
#include "topogen/metrics.hpp"
#include "topogen/optimize.hpp"
#include "topogen/persistence.hpp"
#include "topogen/rng.hpp"
#include "topogen/sampler.hpp"
#include "topogen/schedule.hpp"
#include "topogen/topo_loss.hpp"
#include "topogen/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Config-file merge: every flag is registered here as well as with CLI11, so
// that after parsing we can (a) fill unset flags from a JSON config file and
// (b) dump the fully-resolved configuration as the run_config.json sidecar.
// ---------------------------------------------------------------------------

class FlagSet {
 public:
  explicit FlagSet(CLI::App* cmd) : cmd_(cmd) {
    cmd->add_option("--config", config_path_,
                    "JSON config file; explicit flags override its values");
  }

  template <class T>
  CLI::Option* add(const std::string& flag, T& var, const std::string& desc,
                   bool required = false) {
    auto* opt = cmd_->add_option(flag, var, desc);
    entries_.push_back(Entry{
        key_of(flag), opt, required,
        [&var](const json& j) { var = j.get<T>(); },
        [&var]() { return json(var); }});
    return opt;
  }

  CLI::Option* add_flag(const std::string& flag, bool& var, const std::string& desc) {
    auto* opt = cmd_->add_flag(flag, var, desc);
    entries_.push_back(Entry{
        key_of(flag), opt, false,
        [&var](const json& j) { var = j.get<bool>(); },
        [&var]() { return json(var); }});
    return opt;
  }

  // Apply the config file (if any) to flags not given on the command line,
  // then enforce required flags.  Call once, right after parsing.
  void finalize(const std::string& subcommand) {
    if (!config_path_.empty()) {
      std::ifstream in(config_path_);
      if (!in) throw topogen::UsageError("cannot open config file: " + config_path_);
      json cfg;
      try {
        in >> cfg;
      } catch (const json::exception& e) {
        throw topogen::ValidationError("config file " + config_path_ + ": " + e.what());
      }
      if (!cfg.is_object())
        throw topogen::ValidationError("config file must hold a JSON object: " + config_path_);
      if (cfg.contains("subcommand") && cfg["subcommand"] != subcommand)
        throw topogen::UsageError("config file is for subcommand '" +
                                  cfg["subcommand"].get<std::string>() + "', not '" +
                                  subcommand + "'");
      for (auto& e : entries_) {
        if (e.opt->count() > 0 || !cfg.contains(e.key) || cfg[e.key].is_null()) continue;
        try {
          e.apply(cfg[e.key]);
          e.from_config = true;
        } catch (const json::exception& ex) {
          throw topogen::ValidationError("config key '" + e.key + "': " + ex.what());
        }
      }
    }
    for (const auto& e : entries_) {
      if (e.required && e.opt->count() == 0 && !e.from_config)
        throw topogen::UsageError("missing required option --" + e.key +
                                  " (flag or config file)");
    }
  }

  json resolved(const std::string& subcommand) const {
    json out;
    out["subcommand"] = subcommand;
    for (const auto& e : entries_) out[e.key] = e.dump();
    return out;
  }

  void write_sidecar(const fs::path& path, const std::string& subcommand) const {
    std::ofstream out(path);
    if (!out) throw topogen::ValidationError("cannot write " + path.string());
    out << resolved(subcommand).dump(2) << "\n";
  }

 private:
  struct Entry {
    std::string key;
    CLI::Option* opt;
    bool required;
    std::function<void(const json&)> apply;
    std::function<json()> dump;
    bool from_config = false;
  };

  static std::string key_of(const std::string& flag) {
    // Last name in a "-x,--long" spec, dashes stripped: the config key.
    auto pos = flag.rfind(',');
    std::string name = (pos == std::string::npos) ? flag : flag.substr(pos + 1);
    return name.substr(name.find_first_not_of('-'));
  }

  CLI::App* cmd_;
  std::string config_path_;
  std::vector<Entry> entries_;
};

// ---------------------------------------------------------------------------
// Small shared helpers
// ---------------------------------------------------------------------------

void require(bool ok, const std::string& msg) {
  if (!ok) throw topogen::UsageError(msg);
}

// "3" -> [3,3]; "1..5" -> [1,5].
std::pair<int, int> parse_c_range(const std::string& s) {
  static const std::regex re(R"(^(\d+)(\.\.(\d+))?$)");
  std::smatch m;
  if (!std::regex_match(s, m, re))
    throw topogen::UsageError("bad count spec '" + s + "' (want N or LO..HI)");
  int lo = std::stoi(m[1]);
  int hi = m[3].matched ? std::stoi(m[3]) : lo;
  require(lo >= 1 && lo <= hi, "bad count range '" + s + "'");
  return {lo, hi};
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      out.push_back(std::stoi(tok));
    } catch (const std::exception&) {
      throw topogen::UsageError("bad integer list '" + s + "'");
    }
  }
  require(!out.empty(), "empty integer list");
  return out;
}

// Run fn(i) for i in [0, n) on `threads` workers; the first exception wins.
void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  threads = std::max(1, std::min(threads, n));
  if (threads == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex err_mu;
  auto worker = [&] {
    for (;;) {
      int i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!first_error) first_error = std::current_exception();
        next.store(n);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

void emit(const std::string& payload, const std::string& out, const FlagSet& flags,
          const std::string& subcommand) {
  if (out.empty() || out == "-") {
    std::cout << payload << "\n";
    return;
  }
  std::ofstream f(out);
  if (!f) throw topogen::ValidationError("cannot write " + out);
  f << payload << "\n";
  flags.write_sidecar(out + ".run_config.json", subcommand);
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

struct GenDataArgs {
  int dim = 0;
  int n_per_c = 0;
  int c_min = 1;
  int c_max = 5;
  int size = 32;
  std::string shape_class = "mixed";
  std::uint64_t seed = 0;
  int threads = 1;
  std::string out = "dataset";
};

void run_gen_data(const GenDataArgs& a, const FlagSet& flags) {
  require(a.dim == 0 || a.dim == 1, "--dim must be 0 or 1");
  require(a.n_per_c > 0, "--n-per-c must be positive");
  require(a.c_min >= 1 && a.c_min <= a.c_max && a.c_max <= 10,
          "count range must satisfy 1 <= c-min <= c-max <= 10");
  require(a.size >= (a.dim == 0 ? 32 : 16), "--size too small for this generator");
  require(a.threads >= 1, "--threads must be positive");
  topogen::ShapeClass cls = topogen::shape_class_from_string(a.shape_class);

  fs::create_directories(a.out);
  topogen::DatasetManifest man = topogen::build_dataset(a.dim, a.n_per_c, a.c_min, a.c_max,
                                                        a.size, cls, a.seed, a.out, a.threads);
  flags.write_sidecar(fs::path(a.out) / "run_config.json", "gen-data");

  json summary = {{"out_dir", a.out},
                  {"entries", man.entries.size()},
                  {"manifest", (fs::path(a.out) / "manifest.json").string()}};
  std::cout << summary.dump() << "\n";
}

// ---------------------------------------------------------------------------
// ph
// ---------------------------------------------------------------------------

struct PhArgs {
  std::string image;
  int dim = 0;
  double betti_u = std::numeric_limits<double>::quiet_NaN();
  std::string out = "-";
};

void run_ph(const PhArgs& a, CLI::Option* betti_opt, const FlagSet& flags) {
  require(a.dim == 0 || a.dim == 1, "--dim must be 0 or 1");
  topogen::ImageGrid img = topogen::load_image(a.image);

  std::string payload;
  if (betti_opt->count() > 0 || !std::isnan(a.betti_u)) {
    int betti = topogen::betti_at(img, a.betti_u, a.dim);
    payload = json{{"dim", a.dim}, {"u", a.betti_u}, {"betti", betti}}.dump();
  } else {
    topogen::PersistenceDiagram d =
        (a.dim == 0) ? topogen::diagram_0d(img) : topogen::diagram_1d(img);
    payload = topogen::diagram_to_json(d);
  }
  emit(payload, a.out, flags, "ph");
}

// ---------------------------------------------------------------------------
// loss
// ---------------------------------------------------------------------------

struct LossArgs {
  std::string image;
  int c = 0;
  int dim = 0;
  bool no_preserve = false;
  bool no_denoise = false;
  std::string out = "-";
};

void run_loss(const LossArgs& a, const FlagSet& flags) {
  require(a.dim == 0 || a.dim == 1, "--dim must be 0 or 1");
  topogen::LossConfig lc;
  lc.enable_preserve = !a.no_preserve;
  lc.enable_denoise = !a.no_denoise;
  require(a.c >= 1 && a.c <= lc.c_max, "--c out of range");
  topogen::ImageGrid img = topogen::load_image(a.image);

  topogen::TopoLossResult r = topogen::topo_loss(img, {a.c, a.dim}, lc);
  json grad = json::array();
  for (const auto& pg : r.grad) grad.push_back({pg.px.row, pg.px.col, pg.g});
  json payload = {{"value", r.value},
                  {"preserve", r.preserve_term},
                  {"denoise", r.denoise_term},
                  {"grad", grad}};
  emit(payload.dump(), a.out, flags, "loss");
}

// ---------------------------------------------------------------------------
// optimize
// ---------------------------------------------------------------------------

struct OptimizeArgs {
  int c = 0;
  int dim = 0;
  int size = 64;
  int steps = 500;
  double lr = 0.1;
  std::uint64_t seed = 0;
  bool no_preserve = false;
  bool no_denoise = false;
  std::string out;
};

void run_optimize(const OptimizeArgs& a, const FlagSet& flags) {
  require(a.dim == 0 || a.dim == 1, "--dim must be 0 or 1");
  require(a.c >= 1 && a.c <= 10, "--c out of range");
  require(a.size >= 8, "--size too small");
  require(a.steps >= 1, "--steps must be positive");
  require(a.lr > 0, "--lr must be positive");

  topogen::OptimizeConfig oc;
  oc.constraint = {a.c, a.dim};
  oc.size = a.size;
  oc.steps = a.steps;
  oc.lr = a.lr;
  oc.seed = a.seed;
  oc.enable_preserve = !a.no_preserve;
  oc.enable_denoise = !a.no_denoise;
  topogen::OptimizeResult res = topogen::optimize_topology(oc);

  fs::create_directories(a.out);
  topogen::save_png(res.image, (fs::path(a.out) / "final.png").string());
  topogen::save_raw(res.image, (fs::path(a.out) / "final.tdnf").string());

  std::ofstream trace((fs::path(a.out) / "trace.jsonl").string());
  for (const auto& row : res.trace) {
    trace << json{{"step", row.step},
                  {"value", row.value},
                  {"preserve", row.preserve_term},
                  {"denoise", row.denoise_term}}
                 .dump()
          << "\n";
  }

  json result = {{"target", a.c},
                 {"dim", a.dim},
                 {"measured", res.measured},
                 {"steps", a.steps},
                 {"final_value", res.trace.empty() ? 0.0 : res.trace.back().value}};
  std::ofstream rf((fs::path(a.out) / "result.json").string());
  rf << result.dump(2) << "\n";
  flags.write_sidecar(fs::path(a.out) / "run_config.json", "optimize");
  std::cout << result.dump() << "\n";
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string out;
  int steps = 20000;
  int batch = 16;
  double lr = 1e-4;
  double lambda = 1e-5;
  std::string weighting = "constant";
  double gamma = 5.0;
  bool no_preserve = false;
  bool no_denoise = false;
  int t_threshold = 0;
  bool class_cond = false;
  std::uint64_t seed = 0;
  int checkpoint_every = 5000;
  int base_channels = 32;
  std::string ch_mult = "1,2,4";
  int blocks = 1;
  int emb_dim = 128;
  int T = 1000;
  int log_every = 50;
};

void run_train(const TrainArgs& a, const FlagSet& flags) {
  require(a.steps >= 1, "--steps must be positive");
  require(a.batch >= 1, "--batch must be positive");
  require(a.lr > 0, "--lr must be positive");
  require(a.lambda >= 0, "--lambda must be non-negative");
  require(a.T >= 1, "--T must be positive");

  topogen::LoadedDataset data = topogen::load_dataset(a.data);

  topogen::DenoiserConfig mc;
  mc.image_size = data.image_size;
  mc.base_channels = a.base_channels;
  mc.channel_mult = parse_int_list(a.ch_mult);
  mc.blocks_per_level = a.blocks;
  mc.emb_dim = a.emb_dim;
  mc.c_max = data.c_max;
  mc.T = a.T;
  if (a.class_cond) {
    int max_class = 0;
    for (int id : data.class_id) max_class = std::max(max_class, id);
    mc.num_classes = max_class + 1;
  }
  mc.validate();

  topogen::TrainConfig tc;
  tc.steps = a.steps;
  tc.batch = a.batch;
  tc.adam.lr = a.lr;
  tc.loss.lambda = a.lambda;
  tc.loss.enable_preserve = !a.no_preserve;
  tc.loss.enable_denoise = !a.no_denoise;
  tc.loss.gamma = a.gamma;
  tc.loss.c_max = std::max(tc.loss.c_max, data.c_max);
  if (a.weighting == "constant") {
    tc.loss.weighting = topogen::TopoWeighting::constant;
  } else if (a.weighting == "min_snr" || a.weighting == "min-snr") {
    tc.loss.weighting = topogen::TopoWeighting::min_snr;
  } else {
    throw topogen::UsageError("--weighting must be 'constant' or 'min_snr'");
  }
  tc.use_topo = a.lambda > 0 && !(a.no_preserve && a.no_denoise);
  tc.t_threshold = a.t_threshold;
  tc.class_cond = a.class_cond;
  tc.seed = a.seed;
  tc.checkpoint_every = a.checkpoint_every;
  tc.out_dir = a.out;

  fs::create_directories(a.out);
  flags.write_sidecar(fs::path(a.out) / "run_config.json", "train");

  topogen::NoiseSchedule ns = topogen::cosine_schedule(a.T);
  topogen::Denoiser<float> model =
      topogen::Denoiser<float>::random_init(mc, topogen::derive_seed(a.seed, 1));

  std::ofstream log((fs::path(a.out) / "train_log.jsonl").string());
  auto report = [&](const topogen::TrainReport& r) {
    log << json{{"step", r.step},
                {"l_simple", r.l_simple},
                {"l_topo", r.l_topo},
                {"lambda_mean", r.lambda_mean},
                {"grad_norm", r.grad_norm},
                {"skipped", r.skipped}}
               .dump()
        << "\n";
    if (a.log_every > 0 && (r.step % a.log_every == 0 || r.step == a.steps)) {
      std::cerr << "step " << r.step << "/" << a.steps << "  l_simple=" << r.l_simple
                << "  l_topo=" << r.l_topo << "  grad_norm=" << r.grad_norm
                << (r.skipped ? "  [skipped]" : "") << "\n";
    }
  };

  topogen::TrainStats stats = topogen::train_denoiser(model, data, ns, tc, report);

  json summary = {{"steps_done", stats.steps_done},
                  {"skipped_steps", stats.skipped_steps},
                  {"model", (fs::path(a.out) / "model.tdnc").string()}};
  std::cout << summary.dump() << "\n";
}

// ---------------------------------------------------------------------------
// sample
// ---------------------------------------------------------------------------

struct SampleArgs {
  std::string checkpoint;
  std::string c_spec;
  int n = 50;
  int steps = 50;
  std::uint64_t seed = 0;
  int class_id = -1;
  int trajectory_every = 0;
  int threads = 1;
  std::string out;
};

void run_sample(const SampleArgs& a, const FlagSet& flags) {
  require(a.n >= 1, "--n must be positive");
  require(a.threads >= 1, "--threads must be positive");
  auto [c_lo, c_hi] = parse_c_range(a.c_spec);

  topogen::Denoiser<float> model = topogen::load_checkpoint<float>(a.checkpoint);
  require(a.steps >= 1 && a.steps <= model.config().T, "--steps out of range");
  topogen::NoiseSchedule ns = topogen::cosine_schedule(model.config().T);

  struct Item {
    int c;
    std::uint64_t seed;
    std::string file;
  };
  std::vector<Item> items;
  for (int c = c_lo; c <= c_hi; ++c) {
    for (int i = 0; i < a.n; ++i) {
      std::uint64_t s = a.seed + static_cast<std::uint64_t>(i);
      items.push_back({c, s, "c" + std::to_string(c) + "_s" + std::to_string(s) + ".png"});
    }
  }

  fs::create_directories(a.out);
  if (a.trajectory_every > 0) fs::create_directories(fs::path(a.out) / "traj");

  parallel_for(static_cast<int>(items.size()), a.threads, [&](int idx) {
    const Item& it = items[idx];
    topogen::SampleConfig sc;
    sc.steps = a.steps;
    sc.seed = it.seed;
    sc.c = it.c;
    sc.class_id = a.class_id;
    sc.trajectory_every = a.trajectory_every;

    std::vector<topogen::ImageGrid> traj;
    topogen::ImageGrid img =
        topogen::ddim_sample(model, ns, sc, a.trajectory_every > 0 ? &traj : nullptr);
    topogen::save_png(img, (fs::path(a.out) / it.file).string());
    for (std::size_t k = 0; k < traj.size(); ++k) {
      std::string tf = "c" + std::to_string(it.c) + "_s" + std::to_string(it.seed) + "_k" +
                       std::to_string(k) + ".png";
      topogen::save_png(traj[k], (fs::path(a.out) / "traj" / tf).string());
    }
  });

  json targets = json::array();
  for (const Item& it : items)
    targets.push_back(
        {{"file", it.file}, {"c", it.c}, {"seed", it.seed}, {"class_id", a.class_id}});
  std::ofstream tf((fs::path(a.out) / "targets.json").string());
  tf << targets.dump(2) << "\n";
  flags.write_sidecar(fs::path(a.out) / "run_config.json", "sample");

  json summary = {{"out_dir", a.out}, {"samples", items.size()}};
  std::cout << summary.dump() << "\n";
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::vector<std::string> dirs;
  int dim = 0;
  double u = 0.0;
  int min_area = 0;
  bool ttest = false;
  int threads = 1;
  std::string out = "-";
};

std::vector<topogen::EvalRecord> eval_dir(const std::string& dir, const EvalArgs& a) {
  struct Target {
    std::string file;
    int c;
    std::uint64_t seed;
  };
  std::vector<Target> targets;

  if (!fs::is_directory(dir))
    throw topogen::ValidationError("eval: not a directory: " + dir);
  fs::path tpath = fs::path(dir) / "targets.json";
  if (fs::exists(tpath)) {
    std::ifstream in(tpath);
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw topogen::ValidationError(tpath.string() + ": " + e.what());
    }
    for (const auto& e : j)
      targets.push_back({e.at("file").get<std::string>(), e.at("c").get<int>(),
                         e.at("seed").get<std::uint64_t>()});
  } else {
    // No targets file: recover {c, seed} from the canonical sample filenames.
    static const std::regex re(R"(^c(\d+)_s(\d+)\.png$)");
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(dir))
      if (entry.is_regular_file()) names.push_back(entry.path().filename().string());
    std::sort(names.begin(), names.end());
    for (const auto& name : names) {
      std::smatch m;
      if (std::regex_match(name, m, re))
        targets.push_back({name, std::stoi(m[1]), std::stoull(m[2])});
    }
  }
  if (targets.empty())
    throw topogen::ValidationError("no evaluable samples in " + dir +
                                   " (need targets.json or c{c}_s{seed}.png files)");

  std::vector<topogen::EvalRecord> records(targets.size());
  parallel_for(static_cast<int>(targets.size()), a.threads, [&](int i) {
    topogen::ImageGrid img = topogen::load_image((fs::path(dir) / targets[i].file).string());
    records[i] = {targets[i].c, topogen::measured_count(img, a.dim, a.u, a.min_area), a.dim,
                  targets[i].seed, dir};
  });
  return records;
}

void run_eval(const EvalArgs& a, const FlagSet& flags) {
  require(a.dim == 0 || a.dim == 1, "--dim must be 0 or 1");
  require(!a.dirs.empty() && a.dirs.size() <= 2, "--dir must be given once or twice");
  require(!a.ttest || a.dirs.size() == 2, "--ttest needs exactly two --dir arguments");
  require(a.threads >= 1, "--threads must be positive");
  require(a.min_area >= 0, "--min-area must be non-negative");

  json payload;
  payload["runs"] = json::array();
  std::vector<topogen::MetricsReport> reports;
  for (const std::string& dir : a.dirs) {
    topogen::MetricsReport rep = topogen::counting_metrics(eval_dir(dir, a));
    reports.push_back(rep);
    payload["runs"].push_back({{"dir", dir}, {"metrics", json::parse(rep.to_json())}});
    std::cerr << "== " << dir << " ==\n" << rep.to_text() << "\n";
  }

  if (a.ttest) {
    auto accs = [](const topogen::MetricsReport& r) {
      std::vector<double> v;
      for (const auto& [c, acc] : r.per_c_accuracy) v.push_back(acc);
      return v;
    };
    topogen::WelchResult w = topogen::welch_ttest(accs(reports[0]), accs(reports[1]));
    double d = reports[1].per_c_accuracy_mean - reports[0].per_c_accuracy_mean;
    std::string higher = d > 0 ? a.dirs[1] : (d < 0 ? a.dirs[0] : "tie");
    payload["ttest"] = {{"t", w.t},
                        {"dof", w.dof},
                        {"p_two_sided", w.p_two_sided},
                        {"significant_at_95", w.significant_at_95},
                        {"higher", higher}};
    std::cerr << "Welch t-test on per-c accuracies: t=" << w.t << " dof=" << w.dof
              << " p=" << w.p_two_sided << (w.significant_at_95 ? " (significant)" : "")
              << "  higher: " << higher << "\n";
  }
  emit(payload.dump(2), a.out, flags, "eval");
}

}  // namespace

// ---------------------------------------------------------------------------

int main(int argc, char** argv) {
  CLI::App app{"topology-controlled mask generation: data, loss, training, sampling"};
  app.require_subcommand(1);

  auto* cmd_gen = app.add_subcommand("gen-data", "build a labelled synthetic mask dataset");
  GenDataArgs ga;
  FlagSet gf(cmd_gen);
  gf.add("--dim", ga.dim, "0 = components, 1 = holes", true);
  gf.add("--n-per-c", ga.n_per_c, "masks per count value", true);
  gf.add("--c-min", ga.c_min, "smallest structure count [1]");
  gf.add("--c-max", ga.c_max, "largest structure count [5]");
  gf.add("--size", ga.size, "image side length [32]");
  gf.add("--class", ga.shape_class, "circle|triangle|rectangle|mixed (dim 0) [mixed]");
  gf.add("--seed", ga.seed, "master seed [0]");
  gf.add("--threads", ga.threads, "worker threads [1]");
  gf.add("--out", ga.out, "output directory [dataset]");

  auto* cmd_ph = app.add_subcommand("ph", "persistence diagram / Betti number of an image");
  PhArgs pa;
  FlagSet pf(cmd_ph);
  pf.add("image", pa.image, "input image (PNG or TDNF raw)", true);
  pf.add("--dim", pa.dim, "0 = components, 1 = holes", true);
  auto* betti_opt = pf.add("--betti-at", pa.betti_u, "print the Betti number at this threshold");
  pf.add("--out", pa.out, "output file, - for stdout [-]");

  auto* cmd_loss = app.add_subcommand("loss", "topology loss value and gradient of an image");
  LossArgs la;
  FlagSet lf(cmd_loss);
  lf.add("image", la.image, "input image (PNG or TDNF raw)", true);
  lf.add("--c", la.c, "target structure count", true);
  lf.add("--dim", la.dim, "0 = components, 1 = holes", true);
  lf.add_flag("--no-preserve", la.no_preserve, "disable the preserve term");
  lf.add_flag("--no-denoise", la.no_denoise, "disable the denoise term");
  lf.add("--out", la.out, "output file, - for stdout [-]");

  auto* cmd_opt = app.add_subcommand("optimize", "steer a noise image to a target topology");
  OptimizeArgs oa;
  FlagSet of(cmd_opt);
  of.add("--c", oa.c, "target structure count", true);
  of.add("--dim", oa.dim, "0 = components, 1 = holes", true);
  of.add("--size", oa.size, "image side length [64]");
  of.add("--steps", oa.steps, "gradient steps [500]");
  of.add("--lr", oa.lr, "step size [0.1]");
  of.add("--seed", oa.seed, "noise seed [0]");
  of.add_flag("--no-preserve", oa.no_preserve, "disable the preserve term");
  of.add_flag("--no-denoise", oa.no_denoise, "disable the denoise term");
  of.add("--out", oa.out, "output directory", true);

  auto* cmd_train = app.add_subcommand("train", "train the conditional noise predictor");
  TrainArgs ta;
  FlagSet tf(cmd_train);
  tf.add("--data", ta.data, "dataset directory (with manifest.json)", true);
  tf.add("--out", ta.out, "output directory", true);
  tf.add("--steps", ta.steps, "optimizer steps [20000]");
  tf.add("--batch", ta.batch, "batch size [16]");
  tf.add("--lr", ta.lr, "learning rate [1e-4]");
  tf.add("--lambda", ta.lambda, "topology loss weight, 0 disables [1e-5]");
  tf.add("--weighting", ta.weighting, "constant|min_snr [constant]");
  tf.add("--gamma", ta.gamma, "SNR clamp for min_snr [5]");
  tf.add_flag("--no-preserve", ta.no_preserve, "disable the preserve term");
  tf.add_flag("--no-denoise", ta.no_denoise, "disable the denoise term");
  tf.add("--t-threshold", ta.t_threshold, "apply topology loss only for t <= this (0 = all)");
  tf.add_flag("--class-cond", ta.class_cond, "condition on the shape class as well");
  tf.add("--seed", ta.seed, "training seed [0]");
  tf.add("--checkpoint-every", ta.checkpoint_every, "intermediate checkpoint stride [5000]");
  tf.add("--base-channels", ta.base_channels, "UNet base width [32]");
  tf.add("--ch-mult", ta.ch_mult, "per-level channel multipliers [1,2,4]");
  tf.add("--blocks", ta.blocks, "residual blocks per level [1]");
  tf.add("--emb-dim", ta.emb_dim, "condition embedding width [128]");
  tf.add("--T", ta.T, "diffusion timesteps [1000]");
  tf.add("--log-every", ta.log_every, "stderr progress stride, 0 = silent [50]");

  auto* cmd_sample = app.add_subcommand("sample", "sample masks from a trained checkpoint");
  SampleArgs sa;
  FlagSet sf(cmd_sample);
  sf.add("--checkpoint", sa.checkpoint, "model checkpoint (.tdnc)", true);
  sf.add("--c", sa.c_spec, "count condition: N or LO..HI", true);
  sf.add("--n", sa.n, "samples per count value [50]");
  sf.add("--steps", sa.steps, "solver steps [50]");
  sf.add("--seed", sa.seed, "base seed; sample i uses seed+i [0]");
  sf.add("--class-id", sa.class_id, "class condition, -1 = none [-1]");
  sf.add("--trajectory-every", sa.trajectory_every, "dump predicted x0 every k steps [0]");
  sf.add("--threads", sa.threads, "worker threads [1]");
  sf.add("--out", sa.out, "output directory", true);

  auto* cmd_eval = app.add_subcommand("eval", "counting metrics over sample directories");
  EvalArgs ea;
  FlagSet ef(cmd_eval);
  ef.add("--dir", ea.dirs, "sample directory (repeat for a second run)", true);
  ef.add("--dim", ea.dim, "0 = components, 1 = holes", true);
  ef.add("--u", ea.u, "binarization threshold [0]");
  ef.add("--min-area", ea.min_area, "ignore structures smaller than this [0]");
  ef.add_flag("--ttest", ea.ttest, "Welch t-test between two runs' per-c accuracies");
  ef.add("--threads", ea.threads, "worker threads [1]");
  ef.add("--out", ea.out, "output file, - for stdout [-]");

  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
      int rc = app.exit(e);
      return rc == 0 ? 0 : 2;
    }
    if (*cmd_gen) {
      gf.finalize("gen-data");
      run_gen_data(ga, gf);
    } else if (*cmd_ph) {
      pf.finalize("ph");
      run_ph(pa, betti_opt, pf);
    } else if (*cmd_loss) {
      lf.finalize("loss");
      run_loss(la, lf);
    } else if (*cmd_opt) {
      of.finalize("optimize");
      run_optimize(oa, of);
    } else if (*cmd_train) {
      tf.finalize("train");
      run_train(ta, tf);
    } else if (*cmd_sample) {
      sf.finalize("sample");
      run_sample(sa, sf);
    } else if (*cmd_eval) {
      ef.finalize("eval");
      run_eval(ea, ef);
    }
    return 0;
  } catch (const topogen::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const topogen::ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 3;
  } catch (const topogen::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
