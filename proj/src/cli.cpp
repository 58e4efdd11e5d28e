#include "handfit/cli.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include <CLI11.hpp>

#include "handfit/image.hpp"
#include "handfit/metrics.hpp"
#include "handfit/parallel.hpp"
#include "handfit/plot.hpp"
#include "handfit/synthdata.hpp"
#include "handfit/train.hpp"

namespace handfit {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- run configuration ----

json RunConfig::to_json() const {
  json j = handfit::to_json(model);
  for (const auto& [k, v] : {std::pair<const char*, const std::string*>{"data", &data},
                             {"out", &out},
                             {"checkpoint", &checkpoint},
                             {"init", &init},
                             {"report", &report}})
    if (!v->empty()) j[k] = *v;
  return j;
}

RunConfig run_config_from_json(const json& j, RunConfig rc) {
  if (!j.is_object()) throw std::invalid_argument("run config must be a JSON object");
  json model = json::object();
  for (const auto& [k, v] : j.items()) {
    std::string* path = k == "data"         ? &rc.data
                        : k == "out"        ? &rc.out
                        : k == "checkpoint" ? &rc.checkpoint
                        : k == "init"       ? &rc.init
                        : k == "report"     ? &rc.report
                                            : nullptr;
    if (path) {
      if (!v.is_string()) throw std::invalid_argument("config key " + k + " must be a string path");
      *path = v.get<std::string>();
    } else {
      model[k] = v;
    }
  }
  rc.model = model_config_from_json(model, rc.model);
  return rc;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw std::invalid_argument("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

void apply_overrides(RunConfig& rc, const std::vector<std::string>& sets) {
  json j = json::object();
  for (const std::string& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw std::invalid_argument("--set expects key=value, got '" + s + "'");
    const std::string key = s.substr(0, eq), value = s.substr(eq + 1);
    json v = json::parse(value, nullptr, false);
    j[key] = v.is_discarded() ? json(value) : v;
  }
  rc = run_config_from_json(j, rc);
}

// ---- ablation CSV ----

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

void write_ablation_csv(const fs::path& path, const std::vector<AblationRow>& rows) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "variant,w_hand,param_count";
  for (const auto& m : kAblationMetrics) f << ',' << m;
  f << '\n';
  for (const AblationRow& r : rows) {
    f << r.variant << ',' << fmt(r.w_hand) << ',' << r.param_count;
    for (const auto& m : kAblationMetrics) {
      f << ',';
      if (auto it = r.metrics.find(m); it != r.metrics.end()) f << fmt(it->second);
    }
    f << '\n';
  }
}

std::vector<AblationRow> read_ablation_csv(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  std::getline(f, line);
  std::vector<std::string> header;
  {
    std::istringstream hs(line);
    for (std::string c; std::getline(hs, c, ',');) header.push_back(c);
  }
  if (header.size() < 3 || header[0] != "variant" || header[1] != "w_hand" || header[2] != "param_count")
    throw std::runtime_error("unexpected ablation CSV header");
  std::vector<AblationRow> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::istringstream ls(line);
    for (std::string c; std::getline(ls, c, ',');) cells.push_back(c);
    while (cells.size() < header.size()) cells.emplace_back();
    AblationRow r;
    r.variant = cells[0];
    r.w_hand = std::stod(cells[1]);
    r.param_count = std::stol(cells[2]);
    for (std::size_t i = 3; i < header.size(); ++i)
      if (!cells[i].empty()) r.metrics[header[i]] = std::stod(cells[i]);
    rows.push_back(std::move(r));
  }
  return rows;
}

// ---- commands ----

namespace {

// Validation failures exit with 1, everything else with 2.
struct ValidationError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t i) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (i + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

void write_json(const fs::path& p, const json& j) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << j.dump(2) << '\n';
}

fs::path output_dir_of(const fs::path& file) { return file.has_parent_path() ? file.parent_path() : fs::path("."); }

std::vector<SceneSample> load_samples(const std::string& data, int limit, std::vector<std::string>* ids = nullptr) {
  if (data.empty()) throw ValidationError("--data is required");
  DatasetReadResult r = read_dataset(data);
  for (const SampleError& e : r.errors) std::cerr << "warning: skipping " << e.sample_id << ": " << e.message << "\n";
  if (r.samples.empty()) throw std::runtime_error("no readable samples in " + data);
  if (limit > 0 && static_cast<std::size_t>(limit) < r.samples.size()) {
    r.samples.resize(static_cast<std::size_t>(limit));
    r.ids.resize(static_cast<std::size_t>(limit));
  }
  if (ids) *ids = r.ids;
  return std::move(r.samples);
}

/// Sample i is paired with the garment of sample i + 1.
std::vector<SceneSample> unpaired_view(const std::vector<SceneSample>& samples) {
  if (samples.size() < 2) throw ValidationError("unpaired mode needs at least two samples");
  std::vector<SceneSample> out;
  for (std::size_t i = 0; i < samples.size(); ++i)
    out.push_back(make_pair(samples[i], samples[(i + 1) % samples.size()].garment));
  return out;
}

std::vector<HandFitModel::Output> generate_all(const HandFitModel& model, const std::vector<SceneSample>& samples,
                                               int steps, std::uint64_t seed, double w_hand) {
  std::vector<HandFitModel::Output> out(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) {
    out[i] = model.infer(model.prepare(samples[i]), steps, mix_seed(seed, i), w_hand);
  });
  return out;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  for (std::string item; std::getline(is, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

struct Common {
  std::string config;
  std::vector<std::string> sets;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "JSON run configuration");
  sub->add_option("--set", c.sets, "Override a config key, key=value (repeatable)");
}

RunConfig resolve(const Common& c) {
  RunConfig rc = c.config.empty() ? RunConfig{} : load_run_config(c.config);
  apply_overrides(rc, c.sets);
  return rc;
}

// gen-data

struct GenArgs {
  std::string out;
  int count = 10;
  std::uint64_t seed = 0;
  int size = 64;
  std::string hands = "random";
  double occlusion = 0.85;
};

int cmd_gen_data(const GenArgs& a) {
  if (a.out.empty()) throw ValidationError("--out is required");
  if (a.count < 1) throw ValidationError("--count must be at least 1");
  if (a.size < 32 || a.size % 32 != 0) throw ValidationError("--size must be a positive multiple of 32 (divisible by 8 for the latent grid and by 4 again for the bottleneck)");
  SceneConfig sc;
  sc.size = a.size;
  sc.occlusion_prob = a.occlusion;
  if (a.hands == "random") sc.hands = -1;
  else if (a.hands == "0" || a.hands == "1" || a.hands == "2") sc.hands = std::stoi(a.hands);
  else throw ValidationError("--hands must be 0, 1, 2 or random");
  try {
    sc.validate();
  } catch (const std::invalid_argument& e) {
    throw ValidationError(e.what());
  }
  std::vector<SceneSample> samples(static_cast<std::size_t>(a.count));
  parallel_for(samples.size(), [&](std::size_t i) { samples[i] = generate_scene(mix_seed(a.seed, i), sc); });
  write_dataset(samples, a.out, a.seed);
  write_json(fs::path(a.out) / "effective_config.json",
             {{"command", "gen-data"}, {"count", a.count}, {"seed", a.seed}, {"size", a.size}, {"hands", a.hands},
              {"occlusion", a.occlusion}});
  std::cout << "wrote " << a.count << " samples to " << a.out << "\n";
  return 0;
}

// train

struct TrainArgs {
  Common common;
  std::string data, out, init, phase = "both", log;
  int steps = 0;
};

int cmd_train(const TrainArgs& a) {
  RunConfig rc = resolve(a.common);
  if (!a.data.empty()) rc.data = a.data;
  if (!a.out.empty()) rc.out = a.out;
  if (!a.init.empty()) rc.init = a.init;
  if (rc.out.empty()) throw ValidationError("--out is required");
  if (a.phase != "1" && a.phase != "2" && a.phase != "both") throw ValidationError("--phase must be 1, 2 or both");
  rc.model.validate();

  Checkpoint ck;
  if (!rc.init.empty()) {
    ck = load_checkpoint(rc.init, &rc.model);
  } else {
    if (a.phase == "2") std::cerr << "warning: phase 2 without --init starts from fresh parameters\n";
    ck = init_checkpoint(rc.model);
  }
  ck.config = rc.model;
  const std::vector<SceneSample> samples = load_samples(rc.data, 0);
  const HandFitModel prep(rc.model);
  const std::vector<PreparedSample> data = prepare_all(prep, samples);

  const fs::path out(rc.out);
  write_json(output_dir_of(out) / "effective_config.json", rc.to_json());
  const fs::path log = a.log.empty() ? fs::path(out.string() + ".loss.csv") : fs::path(a.log);
  std::ofstream lf(log);
  if (!lf) throw std::runtime_error("cannot write " + log.string());
  lf << "phase,step,total,noise,hand,crops,grad_norm\n" << std::setprecision(10);

  std::vector<Phase> phases;
  if (a.phase != "2") phases.push_back(Phase::One);
  if (a.phase != "1") phases.push_back(Phase::Two);
  for (Phase ph : phases) {
    TrainOptions opts;
    opts.steps = a.steps;
    double window = 0;
    int in_window = 0;
    opts.on_step = [&](const StepStats& st) {
      lf << static_cast<int>(ph) << ',' << st.step << ',' << st.total << ',' << st.noise << ',' << st.hand << ','
         << st.crops << ',' << st.grad_norm << '\n';
      window += st.total;
      if (++in_window == 100) {
        std::cerr << "phase " << static_cast<int>(ph) << " step " << st.step + 1 << " mean loss " << window / 100
                  << "\n";
        window = 0;
        in_window = 0;
      }
    };
    train_phase(ck, ph, data, opts);
  }
  save_checkpoint(ck, out);
  std::cout << "saved " << out.string() << " at step " << ck.step << "\n";
  return 0;
}

// infer

struct InferArgs {
  Common common;
  std::string checkpoint, data, out;
  int steps = 20;
  int limit = 0;
  std::uint64_t seed = 0;
  double w_hand = std::nan("");
  bool unpaired = false;
};

HandFitModel load_model(const std::string& path) {
  if (path.empty()) throw ValidationError("--checkpoint is required");
  Checkpoint ck = load_checkpoint(path);
  return HandFitModel(ck.config, std::move(ck.params));
}

int cmd_infer(const InferArgs& a) {
  RunConfig rc = resolve(a.common);
  if (!a.checkpoint.empty()) rc.checkpoint = a.checkpoint;
  if (!a.data.empty()) rc.data = a.data;
  if (!a.out.empty()) rc.out = a.out;
  if (rc.out.empty()) throw ValidationError("--out is required");
  const HandFitModel model = load_model(rc.checkpoint);
  const double w_hand = std::isnan(a.w_hand) ? model.config().w_hand : a.w_hand;
  std::vector<std::string> ids;
  std::vector<SceneSample> samples = load_samples(rc.data, a.limit, &ids);
  if (a.unpaired) samples = unpaired_view(samples);
  const auto outputs = generate_all(model, samples, a.steps, a.seed, w_hand);
  fs::create_directories(rc.out);
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    write_png(fs::path(rc.out) / (ids[i] + ".png"), outputs[i].composite);
    write_png(fs::path(rc.out) / (ids[i] + "_raw.png"), outputs[i].raw);
  }
  json eff = rc.to_json();
  eff["model"] = to_json(model.config());
  eff["steps"] = a.steps;
  eff["seed"] = a.seed;
  eff["w_hand"] = w_hand;
  eff["unpaired"] = a.unpaired;
  write_json(fs::path(rc.out) / "effective_config.json", eff);
  std::cout << "wrote " << outputs.size() << " images to " << rc.out << "\n";
  return 0;
}

// eval

struct EvalArgs {
  Common common;
  std::string checkpoint, data, mode = "paired", report, metrics;
  int steps = 20;
  int limit = 0;
  std::uint64_t seed = 0;
  double w_hand = std::nan("");
};

EvalReport run_eval(const HandFitModel& model, const std::vector<SceneSample>& samples, EvalMode mode, int steps,
                    std::uint64_t seed, double w_hand, const std::vector<std::string>& metrics) {
  const std::vector<SceneSample> ref = mode == EvalMode::Unpaired ? unpaired_view(samples) : samples;
  const auto outputs = generate_all(model, ref, steps, seed, w_hand);
  std::vector<Tensor> gen;
  for (const auto& o : outputs) gen.push_back(o.composite);
  return evaluate(gen, ref, mode, metrics);
}

int cmd_eval(const EvalArgs& a) {
  RunConfig rc = resolve(a.common);
  if (!a.checkpoint.empty()) rc.checkpoint = a.checkpoint;
  if (!a.data.empty()) rc.data = a.data;
  if (!a.report.empty()) rc.report = a.report;
  if (rc.report.empty()) throw ValidationError("--report is required");
  EvalMode mode;
  try {
    mode = eval_mode_from_string(a.mode);
  } catch (const std::invalid_argument& e) {
    throw ValidationError(e.what());
  }
  const std::vector<std::string> metrics = split_list(a.metrics);
  for (const std::string& m : metrics)
    if (mode == EvalMode::Unpaired && m == "ssim")
      throw ValidationError("ssim needs pixel ground truth and is refused in unpaired mode");
  const HandFitModel model = load_model(rc.checkpoint);
  const double w_hand = std::isnan(a.w_hand) ? model.config().w_hand : a.w_hand;
  const std::vector<SceneSample> samples = load_samples(rc.data, a.limit);
  const EvalReport r = run_eval(model, samples, mode, a.steps, a.seed, w_hand, metrics);
  const fs::path report(rc.report);
  if (report.has_parent_path()) fs::create_directories(report.parent_path());
  {
    std::ofstream f(report);
    if (!f) throw std::runtime_error("cannot write " + report.string());
    f << r.to_json() << '\n';
  }
  {
    std::ofstream f(report.string() + ".txt");
    f << r.table();
  }
  json eff = rc.to_json();
  eff["model"] = to_json(model.config());
  eff["mode"] = a.mode;
  eff["steps"] = a.steps;
  eff["seed"] = a.seed;
  eff["w_hand"] = w_hand;
  write_json(output_dir_of(report) / "effective_config.json", eff);
  std::cout << r.table();
  return 0;
}

// ablate

struct AblateArgs {
  Common common;
  std::string data, out, variants, grid, checkpoints;
  bool train_all = false;
  int eval_steps = 10;
  int limit = 16;
  std::uint64_t seed = 0;
};

int cmd_ablate(const AblateArgs& a) {
  RunConfig rc = resolve(a.common);
  if (!a.data.empty()) rc.data = a.data;
  if (!a.out.empty()) rc.out = a.out;
  if (rc.out.empty()) throw ValidationError("--out is required");
  std::vector<std::string> variants = a.variants.empty() ? variant_names() : split_list(a.variants);
  for (const std::string& v : variants) {
    try {
      variant_config(v, rc.model);
    } catch (const std::invalid_argument& e) {
      throw ValidationError(e.what());
    }
  }
  std::vector<double> grid;
  if (a.grid.empty()) grid = kDefaultWHandGrid;
  else
    for (const std::string& s : split_list(a.grid)) {
      try {
        grid.push_back(std::stod(s));
      } catch (const std::exception&) {
        throw ValidationError("bad --w-hand-grid entry '" + s + "'");
      }
    }
  const fs::path ckdir = a.checkpoints.empty() ? fs::path(rc.out) / "checkpoints" : fs::path(a.checkpoints);
  if (!a.train_all)
    for (const std::string& v : variants)
      if (!fs::exists(ckdir / (v + ".bin")))
        throw ValidationError("missing checkpoint for variant " + v + " (expected " + (ckdir / (v + ".bin")).string() +
                              "; pass --train-all to train it)");

  fs::create_directories(rc.out);
  write_json(fs::path(rc.out) / "effective_config.json", rc.to_json());
  const std::vector<SceneSample> samples = load_samples(rc.data, 0);
  std::vector<SceneSample> eval_set = samples;
  if (a.limit > 0 && static_cast<std::size_t>(a.limit) < eval_set.size()) eval_set.resize(static_cast<std::size_t>(a.limit));

  std::vector<AblationRow> rows;
  for (const std::string& v : variants) {
    const ModelConfig vc = variant_config(v, rc.model);
    const fs::path ckp = ckdir / (v + ".bin");
    Checkpoint ck;
    if (a.train_all) {
      ck = init_checkpoint(vc);
      const HandFitModel prep(vc);
      const std::vector<PreparedSample> data = prepare_all(prep, samples);
      std::cerr << "training variant " << v << "\n";
      train_phase(ck, Phase::One, data);
      train_phase(ck, Phase::Two, data);
      save_checkpoint(ck, ckp);
    } else {
      ck = load_checkpoint(ckp, &vc);
    }
    const long count = static_cast<long>(ck.params.parameter_count());
    const HandFitModel model(vc, std::move(ck.params));
    for (double w : grid) {
      AblationRow row;
      row.variant = v;
      row.w_hand = w;
      row.param_count = count;
      row.metrics = run_eval(model, eval_set, EvalMode::Paired, a.eval_steps, a.seed, w, {}).metrics;
      rows.push_back(std::move(row));
      std::cerr << v << " w_hand=" << w << " done\n";
    }
  }
  write_ablation_csv(fs::path(rc.out) / "ablation.csv", rows);
  for (const std::string& m : kAblationMetrics) {
    std::vector<PlotSeries> series;
    for (const std::string& v : variants) {
      PlotSeries s;
      s.label = v;
      for (const AblationRow& r : rows)
        if (r.variant == v) {
          s.x.push_back(r.w_hand);
          s.y.push_back(r.metrics.count(m) ? r.metrics.at(m) : std::nan(""));
        }
      series.push_back(std::move(s));
    }
    write_line_plot(fs::path(rc.out) / ("plot_" + m + ".png"), series);
  }
  std::cout << "wrote " << rows.size() << " rows to " << (fs::path(rc.out) / "ablation.csv").string() << "\n";
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Hand-aware virtual try-on toy pipeline"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--count", gen.count, "Number of samples");
  g->add_option("--seed", gen.seed, "Generator seed");
  g->add_option("--size", gen.size, "Image size in pixels");
  g->add_option("--hands", gen.hands, "Hands per scene: 0, 1, 2 or random");
  g->add_option("--occlusion", gen.occlusion, "Probability a hand overlaps the torso");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train one or both phases");
  add_common(t, tr.common);
  t->add_option("--data", tr.data, "Dataset directory");
  t->add_option("--out", tr.out, "Checkpoint to write");
  t->add_option("--init", tr.init, "Checkpoint to start from");
  t->add_option("--phase", tr.phase, "1, 2 or both");
  t->add_option("--steps", tr.steps, "Steps per phase (overrides the config)");
  t->add_option("--log", tr.log, "Loss history CSV (default <out>.loss.csv)");

  InferArgs inf;
  auto* i = app.add_subcommand("infer", "Generate try-on images");
  add_common(i, inf.common);
  i->add_option("--checkpoint", inf.checkpoint, "Trained checkpoint");
  i->add_option("--data", inf.data, "Dataset directory");
  i->add_option("--out", inf.out, "Output directory");
  i->add_option("--steps", inf.steps, "Denoising steps");
  i->add_option("--limit", inf.limit, "Use only the first N samples");
  i->add_option("--seed", inf.seed, "Sampling seed");
  i->add_option("--w-hand", inf.w_hand, "Rendered-hand branch weight");
  i->add_flag("--unpaired", inf.unpaired, "Swap each garment with the next sample's");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Generate and score against a dataset");
  add_common(e, ev.common);
  e->add_option("--checkpoint", ev.checkpoint, "Trained checkpoint");
  e->add_option("--data", ev.data, "Dataset directory");
  e->add_option("--mode", ev.mode, "paired or unpaired");
  e->add_option("--report", ev.report, "Report JSON path");
  e->add_option("--metrics", ev.metrics, "Comma-separated subset of metrics");
  e->add_option("--steps", ev.steps, "Denoising steps");
  e->add_option("--limit", ev.limit, "Use only the first N samples");
  e->add_option("--seed", ev.seed, "Sampling seed");
  e->add_option("--w-hand", ev.w_hand, "Rendered-hand branch weight");

  AblateArgs ab;
  auto* a = app.add_subcommand("ablate", "Variant and w_hand sweep");
  add_common(a, ab.common);
  a->add_option("--data", ab.data, "Dataset directory");
  a->add_option("--out", ab.out, "Output directory");
  a->add_option("--variants", ab.variants, "Comma-separated variant names");
  a->add_option("--w-hand-grid", ab.grid, "Comma-separated w_hand values");
  a->add_option("--checkpoints", ab.checkpoints, "Directory of <variant>.bin checkpoints");
  a->add_flag("--train-all", ab.train_all, "Train every variant first");
  a->add_option("--eval-steps", ab.eval_steps, "Denoising steps per evaluation");
  a->add_option("--limit", ab.limit, "Evaluation samples per cell");
  a->add_option("--seed", ab.seed, "Sampling seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 1;
  }
  try {
    if (*g) return cmd_gen_data(gen);
    if (*t) return cmd_train(tr);
    if (*i) return cmd_infer(inf);
    if (*e) return cmd_eval(ev);
    if (*a) return cmd_ablate(ab);
  } catch (const std::invalid_argument& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace handfit
