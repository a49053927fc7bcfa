// SPDX-License-Identifier: Apache-2.0

#include "advlora/cli.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "advlora/binary_io.hpp"
#include "advlora/checkpoint.hpp"
#include "advlora/dataset.hpp"
#include "advlora/dual_encoder.hpp"
#include "advlora/error.hpp"
#include "advlora/retrieval.hpp"
#include "advlora/rng.hpp"
#include "advlora/trainer.hpp"

namespace advlora::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::map<std::string, std::string> parse_config(const std::string& text) {
  std::map<std::string, std::string> entries;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError("config line " + std::to_string(lineno) + ": expected key=value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw UsageError("config line " + std::to_string(lineno) + ": empty key");
    if (!entries.emplace(key, value).second) throw UsageError("config key '" + key + "' repeated");
  }
  return entries;
}

namespace {

std::string sha256_bytes(const unsigned char* data, std::size_t size) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data, size, digest, &len, EVP_sha256(), nullptr) != 1) throw Error("sha256 failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) {
    hex.push_back(kHex[digest[i] >> 4]);
    hex.push_back(kHex[digest[i] & 0xF]);
  }
  return hex;
}

}  // namespace

std::string sha256_hex(const std::string& bytes) {
  return sha256_bytes(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size());
}

namespace {

std::string render(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
std::string render(bool v) { return v ? "true" : "false"; }
std::string render(const std::string& v) { return v; }
template <class T>
  requires std::is_integral_v<T>
std::string render(T v) {
  return std::to_string(v);
}
template <class T>
std::string render(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + render(v[i]);
  return s;
}

// Registers options on a subcommand and remembers how to print their values.
class Options {
 public:
  explicit Options(CLI::App* app) : app_(app) {}

  template <class T>
  CLI::Option* add(const std::string& key, T& var, const std::string& help) {
    rendered_.emplace_back(key, [&var] { return render(var); });
    CLI::Option* opt = app_->add_option("--" + key, var, help);
    if constexpr (requires { var.push_back(var.front()); }) opt->delimiter(',');
    return opt;
  }
  CLI::Option* toggle(const std::string& key, bool& var, const std::string& help) {
    rendered_.emplace_back(key, [&var] { return render(var); });
    return app_->add_flag("--" + key + ",!--no-" + key, var, help);
  }
  bool given(const std::string& key) const { return app_->get_option("--" + key)->count() > 0; }

  std::vector<std::pair<std::string, std::string>> resolved() const {
    std::vector<std::pair<std::string, std::string>> r;
    for (const auto& [k, f] : rendered_) r.emplace_back(k, f());
    return r;
  }
  CLI::App* app() const { return app_; }

 private:
  CLI::App* app_;
  std::vector<std::pair<std::string, std::function<std::string()>>> rendered_;
};

struct AttackFlags {
  std::string family = "pgd";
  double eps = 1.0 / 255.0;
  double xi = 1.0 / 255.0;
  std::size_t steps = 3;
  bool random_start = false;
  bool clip = true;

  void bind(Options& o, bool allow_none) {
    o.add("attack", family, allow_none ? "none, fgsm, pgd or bim" : "fgsm, pgd or bim");
    o.add("eps", eps, "l-inf budget");
    o.add("xi", xi, "step size (pgd, bim)");
    o.add("steps", steps, "attack iterations");
    o.toggle("random-start", random_start, "uniform start inside the budget");
    o.toggle("clip", clip, "keep attacked views inside [0, 1]");
  }
  std::optional<attack::AttackSpec> spec() const {
    if (family == "none") return std::nullopt;
    attack::AttackSpec s;
    s.family = attack::parse_family(family);
    s.epsilon = eps;
    s.xi = xi;
    s.steps = steps;
    s.random_start = random_start;
    if (!clip) s.clip_data_range.reset();
    s.validate();
    return s;
  }
};

struct AdaptFlags {
  train::AdaptConfig config;
  std::string method = "advlora";
  bool natural = false;
  AttackFlags attack;

  void bind(Options& o, bool with_method, bool with_toggles, bool with_rank) {
    if (with_method) o.add("method", method, "advlora, lora, lp or fft");
    o.toggle("natural", natural, "train on clean batches instead of attacked ones");
    if (with_toggles) {
      o.toggle("pc", config.toggles.pc, "cluster-initialize the adapters");
      o.toggle("pa", config.toggles.pa, "align AB to W0 before training");
      o.toggle("pu", config.toggles.pu, "train the adapter scale alpha");
    }
    if (with_rank) o.add("rank", config.rank, "adapter rank");
    o.add("epochs", config.epochs, "");
    o.add("batch-size", config.batch_size, "");
    o.add("lr", config.lr, "peak AdamW learning rate");
    o.add("weight-decay", config.weight_decay, "");
    o.add("clip-norm", config.max_grad_norm, "global gradient-norm clip (0 disables)");
    o.add("temperature", config.temperature, "");
    o.add("alpha-init", config.alpha_init, "");
    o.add("init-sigma", config.init_sigma, "std of A for standard init");
    o.add("kmeans-restarts", config.kmeans.restarts, "");
    o.add("align-lr", config.align.lr, "");
    o.add("align-steps", config.align.max_steps, "");
    o.toggle("mix-clean", config.mix_clean, "add the clean loss to each update");
    attack.bind(o, false);
  }
  train::AdaptConfig resolve() const {
    train::AdaptConfig c = config;
    c.method = train::parse_method(method);
    c.adversarial = !natural;
    c.attack = *attack.spec();
    c.validate();
    return c;
  }
};

struct Params {
  std::string config_path;
  std::string out;
  std::uint64_t seed = 0;
  data::GeneratorParams gen;
  std::string data_dir;
  std::string model_path;
  model::PretrainConfig pre;
  AdaptFlags adapt;
  AttackFlags eval_attack;
  std::string split = "test";
  std::string name = "report";
  std::string label;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::vector<std::size_t> ranks = {2, 4, 8, 10, 16, 32};
};

// Collects manifest entries for one run.
class Manifest {
 public:
  void input(const fs::path& p) { inputs_.push_back(p); }
  void output(const fs::path& p) { outputs_.push_back(p); }

  void write(const std::string& command, const Options& opts, const fs::path& dir) {
    std::string cfg;
    json config = json::object();
    for (const auto& [k, v] : opts.resolved()) {
      cfg += k + "=" + v + "\n";
      config[k] = v;
    }
    const fs::path cfg_path = dir / (command + ".cfg");
    io::write_file(cfg_path, std::span(reinterpret_cast<const std::uint8_t*>(cfg.data()), cfg.size()));
    auto hashes = [](const std::vector<fs::path>& paths) {
      json arr = json::array();
      for (const auto& p : paths) {
        const auto bytes = io::read_file(p);
        arr.push_back({{"path", p.string()}, {"sha256", sha256_bytes(bytes.data(), bytes.size())}});
      }
      return arr;
    };
    json m = {{"command", command}, {"config", config}, {"inputs", hashes(inputs_)}, {"outputs", hashes(outputs_)}};
    const std::string text = m.dump(2) + "\n";
    io::write_file(dir / ("manifest_" + command + ".json"),
                   std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  }

 private:
  std::vector<fs::path> inputs_;
  std::vector<fs::path> outputs_;
};

void write_text(const fs::path& path, const std::string& text, Manifest& manifest) {
  io::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  manifest.output(path);
}

data::DatasetSplit load_split(const Params& p, const std::string& which, Manifest& manifest) {
  if (p.data_dir.empty()) throw UsageError("--data is required");
  const fs::path path = fs::path(p.data_dir) / (which + ".advl");
  manifest.input(path);
  return data::load(path);
}

model::AdaptedModel load_model(const Params& p, Manifest& manifest) {
  if (p.model_path.empty()) throw UsageError("--model is required");
  manifest.input(p.model_path);
  return checkpoint::load(p.model_path);
}

const model::DualEncoder& base_backbone(const model::AdaptedModel& m) {
  if (!m.adapters.empty() || m.vision_probe || m.text_probe)
    throw UsageError("expected a pretrained base checkpoint, got an adapted one");
  return m.backbone;
}

struct Score {
  double natural = 0.0;
  double attacked = 0.0;
};

Score score(const model::AdaptedModel& m, const data::DatasetSplit& split, const attack::AttackSpec& spec,
            std::uint64_t seed, double temperature) {
  eval::EvalOptions o;
  o.seed = seed;
  o.temperature = temperature;
  Score s;
  s.natural = eval::evaluate(m, split, o).mean();
  o.attack = spec;
  s.attacked = eval::evaluate(m, split, o).mean();
  return s;
}

struct Stats {
  double mean = 0.0;
  double stddev = 0.0;
};

Stats stats(const std::vector<double>& xs) {
  Stats s;
  if (xs.empty()) return s;
  s.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return s;
}

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void reject_toggles(const Options& o, train::Method method) {
  if (method == train::Method::kAdvLora) return;
  for (const char* k : {"pc", "pa", "pu"})
    if (o.given(k)) throw UsageError(std::string("--") + k + " only applies to --method advlora");
}

// ---- commands ----

void cmd_gen_data(Params& p, const Options& opts, const fs::path& dir, std::ostream& out) {
  Manifest manifest;
  const data::Dataset ds = data::generate(p.gen, p.seed);
  for (const data::DatasetSplit* s : {&ds.train, &ds.val, &ds.test}) {
    const fs::path path = dir / (data::to_string(s->split) + ".advl");
    data::save(*s, path);
    manifest.output(path);
  }
  manifest.write("gen-data", opts, dir);
  out << "wrote " << ds.train.size() << "/" << ds.val.size() << "/" << ds.test.size() << " pairs to " << dir.string()
      << "\n";
}

void cmd_pretrain(Params& p, const Options& opts, const fs::path& dir, std::ostream& out) {
  Manifest manifest;
  const data::DatasetSplit train = load_split(p, "train", manifest);
  const data::DatasetSplit val = load_split(p, "val", manifest);
  p.pre.seed = p.seed;
  Rng rng = SeedTree(p.seed).stream("init");
  model::DualEncoder init = model::init_dual_encoder(train.params.d_v, train.params.d_w, p.pre.architecture, rng);
  const model::PretrainResult result = model::pretrain(std::move(init), train, p.pre);

  model::AdaptedModel base;
  base.backbone = result.model;
  const fs::path model_path = dir / "base.advm";
  checkpoint::save(base, model_path);
  manifest.output(model_path);

  std::string log;
  for (std::size_t e = 0; e < result.epoch_loss.size(); ++e)
    log += json{{"epoch", e}, {"loss", result.epoch_loss[e]}}.dump() + "\n";
  write_text(dir / "pretrain_log.jsonl", log, manifest);
  manifest.write("pretrain", opts, dir);

  eval::EvalOptions o;
  o.temperature = p.pre.temperature;
  const eval::ReportPair r = eval::evaluate(base, val, o);
  out << "pretrained " << result.model.parameter_count() << " parameters; val R@1 v2w " << fixed(r.vision_to_text.recall[0])
      << ", R@Mean " << fixed(r.mean()) << "\n";
}

void cmd_adapt(Params& p, const Options& opts, const fs::path& dir, std::ostream& out, std::ostream& err) {
  train::AdaptConfig config = p.adapt.resolve();
  reject_toggles(opts, config.method);
  config.seed = p.seed;
  Manifest manifest;
  const data::DatasetSplit train = load_split(p, "train", manifest);
  const data::DatasetSplit val = load_split(p, "val", manifest);
  const model::AdaptedModel base = load_model(p, manifest);

  const train::AdaptResult result = train::adversarial_adapt(base_backbone(base), train, config, &val);
  const fs::path model_path = dir / "adapted.advm";
  checkpoint::save(result.state.model, model_path);
  manifest.output(model_path);
  write_text(dir / "trainlog.jsonl", result.log.to_jsonl(), manifest);
  manifest.write("adapt", opts, dir);

  double seconds = 0.0;
  for (const auto& e : result.log.epochs) seconds += e.seconds;
  out << train::to_string(config.method) << (config.adversarial ? " adversarial" : " natural") << ": "
      << result.log.tunable_parameters << " tunable parameters";
  if (!result.log.epochs.empty()) {
    const auto& last = result.log.epochs.back();
    out << ", val R@Mean natural " << fixed(last.val_natural_rmean) << ", attacked " << fixed(last.val_attacked_rmean);
  }
  out << "\n";
  err << "adapt took " << fixed(seconds) << " s\n";
}

void cmd_eval(Params& p, const Options& opts, const fs::path& dir, std::ostream& out) {
  if (p.eval_attack.family == "none")
    for (const char* k : {"eps", "xi", "steps", "random-start"})
      if (opts.given(k)) throw UsageError(std::string("--") + k + " needs an attack");
  Manifest manifest;
  const data::DatasetSplit split = load_split(p, p.split, manifest);
  const model::AdaptedModel m = load_model(p, manifest);
  eval::EvalOptions o;
  o.attack = p.eval_attack.spec();
  o.seed = p.seed;
  o.temperature = p.adapt.config.temperature;
  o.method = p.label.empty() ? fs::path(p.model_path).stem().string() : p.label;
  const eval::ReportPair r = eval::evaluate(m, split, o);

  const std::string rows = eval::csv_header() + "\n" + eval::csv_row(r.vision_to_text) + "\n" +
                           eval::csv_row(r.text_to_vision) + "\n";
  write_text(dir / (p.name + ".csv"), rows, manifest);
  write_text(dir / (p.name + "_mean.csv"), eval::mean_table_header() + "\n" + eval::mean_table_row(r) + "\n", manifest);
  manifest.write("eval", opts, dir);
  out << rows;
}

struct Setting {
  const char* name;
  train::Toggles toggles;
};

void cmd_ablate(Params& p, const Options& opts, const fs::path& dir, std::ostream& out) {
  train::AdaptConfig config = p.adapt.resolve();
  config.method = train::Method::kAdvLora;
  Manifest manifest;
  const data::DatasetSplit train = load_split(p, "train", manifest);
  const data::DatasetSplit test = load_split(p, p.split, manifest);
  const model::AdaptedModel base = load_model(p, manifest);
  const model::DualEncoder& frozen = base_backbone(base);

  const Setting settings[] = {{"baseline", {false, false, false}},
                              {"PC", {true, false, false}},
                              {"PC+PA", {true, true, false}},
                              {"PC+PA+PU", {true, true, true}}};
  std::string runs = "setting,seed,natural_rmean,attacked_rmean\n";
  std::string table = "setting,pc,pa,pu,natural_rmean,attacked_rmean,attacked_std,seeds\n";
  for (const Setting& s : settings) {
    std::vector<double> nat;
    std::vector<double> att;
    for (std::uint64_t seed : p.seeds) {
      train::AdaptConfig c = config;
      c.toggles = s.toggles;
      c.seed = seed;
      const train::AdaptResult r = train::adversarial_adapt(frozen, train, c);
      const Score sc = score(r.state.model, test, c.attack, seed, c.temperature);
      nat.push_back(sc.natural);
      att.push_back(sc.attacked);
      runs += std::string(s.name) + "," + std::to_string(seed) + "," + fixed(sc.natural) + "," + fixed(sc.attacked) + "\n";
    }
    const Stats a = stats(att);
    table += std::string(s.name) + "," + (s.toggles.pc ? "1" : "0") + "," + (s.toggles.pa ? "1" : "0") + "," +
             (s.toggles.pu ? "1" : "0") + "," + fixed(stats(nat).mean) + "," + fixed(a.mean) + "," + fixed(a.stddev) +
             "," + std::to_string(p.seeds.size()) + "\n";
  }
  write_text(dir / "ablation_runs.csv", runs, manifest);
  write_text(dir / "ablation.csv", table, manifest);
  manifest.write("ablate", opts, dir);
  out << table;
}

void cmd_rank_sweep(Params& p, const Options& opts, const fs::path& dir, std::ostream& out) {
  train::AdaptConfig config = p.adapt.resolve();
  reject_toggles(opts, config.method);
  if (config.method != train::Method::kAdvLora && config.method != train::Method::kLora)
    throw UsageError("rank-sweep needs --method advlora or lora");
  Manifest manifest;
  const data::DatasetSplit train = load_split(p, "train", manifest);
  const data::DatasetSplit test = load_split(p, p.split, manifest);
  const model::AdaptedModel base = load_model(p, manifest);
  const model::DualEncoder& frozen = base_backbone(base);

  std::string runs = "rank,seed,natural_rmean,attacked_rmean\n";
  std::string table = "rank,natural_rmean,attacked_rmean,attacked_std,seeds\n";
  for (std::size_t rank : p.ranks) {
    std::vector<double> nat;
    std::vector<double> att;
    for (std::uint64_t seed : p.seeds) {
      train::AdaptConfig c = config;
      c.rank = rank;
      c.seed = seed;
      c.validate();
      const train::AdaptResult r = train::adversarial_adapt(frozen, train, c);
      const Score sc = score(r.state.model, test, c.attack, seed, c.temperature);
      nat.push_back(sc.natural);
      att.push_back(sc.attacked);
      runs += std::to_string(rank) + "," + std::to_string(seed) + "," + fixed(sc.natural) + "," + fixed(sc.attacked) + "\n";
    }
    const Stats a = stats(att);
    table += std::to_string(rank) + "," + fixed(stats(nat).mean) + "," + fixed(a.mean) + "," + fixed(a.stddev) + "," +
             std::to_string(p.seeds.size()) + "\n";
  }
  write_text(dir / "rank_sweep_runs.csv", runs, manifest);
  write_text(dir / "rank_sweep.csv", table, manifest);
  manifest.write("rank-sweep", opts, dir);
  out << table;
}

struct Command {
  std::string name;
  std::unique_ptr<Options> options;
  std::function<void(const Options&, const fs::path&)> run;
};

void add_common(Options& o, Params& p) {
  o.app()->add_option("--config", p.config_path, "flat key=value file; flags override it");
  o.add("out", p.out, std::string("output directory (default $") + kOutputEnv + ", then ./advlora_out)");
  o.add("seed", p.seed, "root seed");
}

std::vector<Command> register_commands(CLI::App& app, Params& p, std::ostream& out, std::ostream& err) {
  std::vector<Command> cmds;
  auto make = [&](const std::string& name, const std::string& help) -> Options& {
    cmds.push_back({name, std::make_unique<Options>(app.add_subcommand(name, help)), {}});
    add_common(*cmds.back().options, p);
    return *cmds.back().options;
  };

  {
    Options& o = make("gen-data", "generate the synthetic paired dataset");
    o.add("classes", p.gen.num_classes, "");
    o.add("latent-dim", p.gen.d_latent, "");
    o.add("vision-dim", p.gen.d_v, "");
    o.add("text-dim", p.gen.d_w, "");
    o.add("noise", p.gen.noise_sigma, "observation noise sigma");
    o.add("pair-jitter", p.gen.pair_jitter, "per-pair latent offset, in units of the noise sigma");
    o.add("n-train", p.gen.n_train, "");
    o.add("n-val", p.gen.n_val, "");
    o.add("n-test", p.gen.n_test, "");
    cmds.back().run = [&](const Options& opts, const fs::path& dir) { cmd_gen_data(p, opts, dir, out); };
  }
  {
    Options& o = make("pretrain", "contrastively pretrain the dual encoder");
    o.add("data", p.data_dir, "dataset directory");
    o.add("epochs", p.pre.epochs, "");
    o.add("batch-size", p.pre.batch_size, "");
    o.add("lr", p.pre.lr, "");
    o.add("weight-decay", p.pre.weight_decay, "");
    o.add("temperature", p.pre.temperature, "");
    o.add("hidden-dim", p.pre.architecture.hidden_dim, "");
    o.add("layers", p.pre.architecture.num_layers, "dense layers per tower");
    o.add("embed-dim", p.pre.architecture.embed_dim, "");
    cmds.back().run = [&](const Options& opts, const fs::path& dir) { cmd_pretrain(p, opts, dir, out); };
  }
  {
    Options& o = make("adapt", "adapt a pretrained model");
    o.add("data", p.data_dir, "dataset directory");
    o.add("model", p.model_path, "base checkpoint");
    p.adapt.bind(o, true, true, true);
    cmds.back().run = [&](const Options& opts, const fs::path& dir) { cmd_adapt(p, opts, dir, out, err); };
  }
  {
    Options& o = make("eval", "retrieval metrics, optionally under attack");
    o.add("data", p.data_dir, "dataset directory");
    o.add("model", p.model_path, "checkpoint to evaluate");
    o.add("split", p.split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
    o.add("name", p.name, "report file stem");
    o.add("label", p.label, "method column (default: model file stem)");
    o.add("temperature", p.adapt.config.temperature, "loss temperature used by the attack");
    p.eval_attack.family = "none";
    p.eval_attack.bind(o, true);
    cmds.back().run = [&](const Options& opts, const fs::path& dir) { cmd_eval(p, opts, dir, out); };
  }
  {
    Options& o = make("ablate", "baseline / PC / PC+PA / PC+PA+PU over several seeds");
    o.add("data", p.data_dir, "dataset directory");
    o.add("model", p.model_path, "base checkpoint");
    o.add("split", p.split, "evaluation split")->check(CLI::IsMember({"train", "val", "test"}));
    o.add("seeds", p.seeds, "comma-separated adaptation seeds");
    p.adapt.bind(o, false, false, true);
    cmds.back().run = [&](const Options& opts, const fs::path& dir) { cmd_ablate(p, opts, dir, out); };
  }
  {
    Options& o = make("rank-sweep", "attacked retrieval across adapter ranks");
    o.add("data", p.data_dir, "dataset directory");
    o.add("model", p.model_path, "base checkpoint");
    o.add("split", p.split, "evaluation split")->check(CLI::IsMember({"train", "val", "test"}));
    o.add("seeds", p.seeds, "comma-separated adaptation seeds");
    o.add("ranks", p.ranks, "comma-separated ranks");
    p.adapt.bind(o, true, true, false);
    cmds.back().run = [&](const Options& opts, const fs::path& dir) { cmd_rank_sweep(p, opts, dir, out); };
  }
  return cmds;
}

// First positional token and the value of --config, if any.
std::pair<std::string, std::string> prescan(int argc, const char* const* argv) {
  std::string sub;
  std::string config;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--config" && i + 1 < argc) {
      config = argv[++i];
    } else if (a.rfind("--config=", 0) == 0) {
      config = a.substr(9);
    } else if (sub.empty() && !a.empty() && a[0] != '-') {
      sub = a;
    }
  }
  return {sub, config};
}

int parse(CLI::App& app, const std::vector<std::string>& args) {
  std::vector<const char*> ptrs;
  for (const auto& a : args) ptrs.push_back(a.c_str());
  app.parse(static_cast<int>(ptrs.size()), ptrs.data());
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Params p;
  CLI::App app{"Adversarial low-rank adaptation of a small dual encoder", "advlora"};
  app.require_subcommand(1);
  std::vector<Command> cmds = register_commands(app, p, out, err);

  try {
    const auto [sub, config_path] = prescan(argc, argv);
    if (!config_path.empty() && !sub.empty()) {
      const auto bytes = io::read_file(config_path);
      std::vector<std::string> args = {argv[0], sub};
      for (const auto& [k, v] : parse_config(std::string(bytes.begin(), bytes.end()))) {
        if (k == "config") throw UsageError("config files cannot nest");
        args.push_back("--" + k + "=" + v);
      }
      parse(app, args);
      app.clear();
    }
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }

  try {
    for (Command& c : cmds) {
      if (!c.options->app()->parsed()) continue;
      if (p.out.empty()) {
        const char* env = std::getenv(kOutputEnv);
        p.out = (env != nullptr && *env != '\0') ? env : "advlora_out";
      }
      const fs::path dir = p.out;
      std::error_code ec;
      fs::create_directories(dir, ec);
      if (ec) throw PathError("cannot create output directory " + dir.string() + ": " + ec.message());
      c.run(*c.options, dir);
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace advlora::cli
