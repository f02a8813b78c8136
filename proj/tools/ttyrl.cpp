// ttyrl command line: dataset preparation, training, evaluation and reports.

#include <CLI11.hpp>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "npy.hpp"
#include "ttyrl/catalog.hpp"
#include "ttyrl/errors.hpp"
#include "ttyrl/evalstats.hpp"
#include "ttyrl/loader.hpp"
#include "ttyrl/repack.hpp"
#include "ttyrl/store.hpp"
#include "ttyrl/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ttyrl;

namespace {

fs::path data_dir() {
  if (const char* dir = std::getenv("KATAKOMBA_DATA_DIR"); dir && *dir) return dir;
  if (const char* home = std::getenv("HOME"); home && *home) return fs::path(home) / ".katakomba" / "datasets";
  return fs::path(".katakomba") / "datasets";
}

// --store wins; otherwise <data dir>/<task>.ktb.
fs::path resolve_store(const std::string& store, const std::string& task) {
  if (!store.empty()) return store;
  return data_dir() / (canonical_string(parse_task_id(task)) + ".ktb");
}

void add_store_options(CLI::App* cmd, std::string& store, std::string& task) {
  cmd->add_option("--store", store, "KTB1 store path (default: $KATAKOMBA_DATA_DIR/<task>.ktb)");
  cmd->add_option("--task", task, "Task id used to locate the store when --store is omitted")->capture_default_str();
}

std::ostream& open_out(const std::string& path, std::ofstream& file) {
  if (path.empty() || path == "-") return std::cout;
  if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  file.open(path, std::ios::trunc);
  if (!file) throw Error(ErrorKind::IoError, "cannot write '" + path + "'");
  return file;
}

std::vector<std::size_t> parse_sizes(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != item.size() || v == 0) throw CLI::ValidationError("list", "expected positive integers: " + text);
    out.push_back(v);
  }
  return out;
}

// ------------------------------------------------------------------ catalog

json catalog_json() {
  json rows = json::array();
  for (const auto& e : catalog()) {
    rows.push_back({{"task", canonical_string(e.character)},
                    {"category", to_string(e.category)},
                    {"transitions", e.stats.transitions},
                    {"median_turns", e.stats.median_turns},
                    {"median_score", e.stats.median_score},
                    {"median_deathlvl", e.stats.median_deathlvl},
                    {"size_gb", e.stats.size_gb},
                    {"compressed_size_gb", e.stats.compressed_size_gb},
                    {"min_score", e.normalization.min_score},
                    {"max_score", e.normalization.max_score},
                    {"mean_score", e.normalization.mean_score}});
  }
  return rows;
}

void run_catalog(const std::string& format) {
  const auto rows = catalog_json();
  if (format == "json") {
    std::cout << rows.dump(2) << '\n';
    return;
  }
  std::cout << "task,category,transitions,median_turns,median_score,median_deathlvl,size_gb,compressed_size_gb,"
               "min_score,max_score,mean_score\n";
  for (const auto& r : rows) {
    std::cout << r["task"].get<std::string>() << ',' << r["category"].get<std::string>() << ',' << r["transitions"]
              << ',' << r["median_turns"] << ',' << r["median_score"] << ',' << r["median_deathlvl"] << ','
              << r["size_gb"] << ',' << r["compressed_size_gb"] << ',' << r["min_score"] << ',' << r["max_score"]
              << ',' << r["mean_score"] << '\n';
  }
}

// ------------------------------------------------------------------ store

json block_json(const BlockRef& b) {
  return {{"offset", b.offset}, {"stored_length", b.stored_length}, {"raw_length", b.raw_length}, {"crc32", b.crc32}};
}

void run_inspect(const fs::path& path, bool with_index) {
  const auto store = open_store(path);
  const auto& h = store->header();
  json j;
  j["path"] = path.string();
  j["format_version"] = h.format_version;
  j["task_id"] = h.task_id;
  j["episode_count"] = h.episode_count;
  j["index_offset"] = h.index_offset;
  j["compression"] = to_string(h.compression);
  j["total_steps"] = store->total_steps();
  j["decompressed_bytes"] = store->decompressed_bytes();
  j["file_bytes"] = fs::file_size(path);
  j["fields"] = json::array();
  for (const auto& f : h.field_schema) {
    j["fields"].push_back({{"name", f.name}, {"element_bytes", element_size(f.type)}, {"step_shape", f.step_shape}});
  }
  if (with_index) {
    j["episodes"] = json::array();
    for (std::size_t i = 0; i < store->episode_count(); ++i) {
      const auto& e = store->index()[i];
      const auto m = store->read_metadata(i);
      json ep{{"steps", e.step_count},
              {"episode_id", m.episode_id},
              {"final_score", m.final_score},
              {"death_level", m.death_level},
              {"turns", m.turns},
              {"metadata_block", block_json(e.metadata)}};
      for (std::size_t f = 0; f < kFieldCount; ++f) ep["blocks"][h.field_schema[f].name] = block_json(e.fields[f]);
      j["episodes"].push_back(ep);
    }
  }
  std::cout << j.dump(2) << '\n';
}

// ------------------------------------------------------------------ sample

struct SampleArgs {
  std::string store, task = "mon-hum-neu", mode = "in_memory", out, pad = "reject_short";
  std::size_t batch = 64, seq = 16;
  std::uint64_t seed = 0, call = 0;
};

void run_sample(const SampleArgs& a) {
  const auto handle = load(resolve_store(a.store, a.task), parse_loader_mode(a.mode));
  SamplerConfig cfg{a.batch, a.seq, a.seed, a.pad == "left_clamp" ? PadPolicy::LeftClamp : PadPolicy::RejectShort};
  const auto b = handle->sample(cfg, a.call);
  const std::size_t B = b.batch_size, L = b.seq_len;
  const std::size_t R = kScreenRows, C = kScreenCols;

  json fields;
  auto record = [&](const char* name, const auto& data, std::vector<std::size_t> shape) {
    const auto bytes = std::string_view(reinterpret_cast<const char*>(data.data()),
                                        data.size() * sizeof(typename std::decay_t<decltype(data)>::value_type));
    fields[name] = {{"shape", shape}, {"fnv1a64", fnv1a64(bytes)}};
    if (!a.out.empty()) tools::write_npy(fs::path(a.out) / (std::string(name) + ".npy"), data, shape);
  };
  if (!a.out.empty()) fs::create_directories(a.out);
  record("tty_chars", b.tty_chars, {B, L + 1, R, C});
  record("tty_colors", b.tty_colors, {B, L + 1, R, C});
  record("tty_cursor", b.tty_cursor, {B, L + 1, 2});
  record("prev_actions", b.prev_actions, {B, L + 1});
  record("actions", b.actions, {B, L});
  record("rewards", b.rewards, {B, L});
  record("dones", b.dones, {B, L});
  record("mask", b.mask, {B, L});
  record("episode_index", b.episode_index, {B});
  record("start_step", b.start_step, {B});
  handle->close();
  std::cout << json{{"mode", a.mode}, {"batch_size", B}, {"seq_len", L}, {"seed", a.seed}, {"call", a.call},
                    {"fields", fields}}
                   .dump(2)
            << '\n';
}

// ------------------------------------------------------------------ train

struct TrainArgs {
  std::string algo, config, store, task = "mon-hum-neu", mode = "in_memory", out = "checkpoint.ktc", metrics,
                                   checkpoint_dir;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> iters, seed, log_every, checkpoint_every;
  std::optional<std::size_t> batch, seq;
  std::optional<double> lr;
  std::optional<int> hidden, layers;
};

void run_train(const TrainArgs& a) {
  const auto algo = parse_algorithm(a.algo);
  KeyValues kv = a.config.empty() ? KeyValues{} : read_key_values(a.config);
  // Flags override the file.
  auto put = [&](const char* key, const auto& opt) {
    if (opt) {
      std::ostringstream s;
      s << std::setprecision(17) << *opt;
      kv[key] = s.str();
    }
  };
  put("training_iterations", a.iters);
  put("seed", a.seed);
  put("log_every", a.log_every);
  put("checkpoint_every", a.checkpoint_every);
  put("batch_size", a.batch);
  put("sequence_length", a.seq);
  put("learning_rate", a.lr);
  put("lstm_hidden_dim", a.hidden);
  put("lstm_layers", a.layers);
  for (const auto& s : a.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw CLI::ValidationError("--set", "expected key=value, got '" + s + "'");
    const auto parsed = parse_key_values(s);
    kv.insert_or_assign(parsed.begin()->first, parsed.begin()->second);
  }
  const auto tcfg = train_config_from(kv);
  const auto mcfg = model_config_from(kv);

  const auto handle = load(resolve_store(a.store, a.task), parse_loader_mode(a.mode));
  std::ofstream metrics_file;
  std::ostream& metrics_out = open_out(a.metrics, metrics_file);
  JsonLinesSink sink(metrics_out);
  CheckpointSink ckpt_sink;
  if (!a.checkpoint_dir.empty()) {
    fs::create_directories(a.checkpoint_dir);
    ckpt_sink = [&](const Checkpoint& c) {
      char name[48];
      std::snprintf(name, sizeof name, "step_%09llu.ktc", static_cast<unsigned long long>(c.step));
      save_checkpoint(fs::path(a.checkpoint_dir) / name, c);
    };
  }
  const auto final_ckpt = train(algo, *handle, mcfg, tcfg, sink, ckpt_sink);
  handle->close();
  if (const auto parent = fs::path(a.out).parent_path(); !parent.empty()) fs::create_directories(parent);
  save_checkpoint(a.out, final_ckpt);
  std::cerr << "wrote " << a.out << " (" << final_ckpt.parameters.size() << " parameters, step " << final_ckpt.step
            << ")\n";
}

// ------------------------------------------------------------------ eval

struct EvalArgs {
  std::string checkpoint, policy, rule, out, label;
  std::size_t episodes = 50;
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> run_id;
  int horizon = 200;
  bool scripted = false;
  bool agreement = false;
};

void run_eval(const EvalArgs& a) {
  GridHackConfig gcfg;
  gcfg.horizon = a.horizon;
  GridHack env(gcfg);
  EvalOptions opts;
  opts.episodes = a.episodes;
  opts.seed = a.seed;
  if (a.agreement) opts.reference = scripted_policy;

  EvalResult res;
  std::string label = a.label;
  if (!a.scripted) {
    const auto ckpt = load_checkpoint(a.checkpoint);
    const auto model = instantiate(ckpt);
    opts.rule = a.rule.empty() ? default_action_rule(ckpt.algorithm) : parse_action_rule(a.rule);
    opts.run_id = a.run_id.value_or(ckpt.train.seed);
    if (label.empty()) label = std::string(to_string(ckpt.algorithm));
    res = evaluate(*model, env, opts);
  } else {
    opts.run_id = a.run_id.value_or(0);
    if (label.empty()) label = "scripted";
    res = evaluate_policy(scripted_policy, env, opts);
  }
  EvalRunMatrix matrix;
  for (const auto& r : res.rows) {
    matrix.push_back({r.task, r.seed, r.episode, static_cast<double>(r.score), r.death_level});
  }
  std::ofstream file;
  write_eval_records(open_out(a.out, file), matrix, label);
  json summary{{"episodes", res.rows.size()}, {"mean_score", res.mean_score()}};
  if (a.agreement) {
    summary["decisions"] = res.decisions;
    summary["agreement"] = res.agreement();
  }
  std::cerr << summary.dump() << '\n';
}

// ------------------------------------------------------------------ report

struct ReportArgs {
  std::vector<std::string> inputs;
  std::string metric = "normalized_score", normalizer = "minmax", category, baseline, out = "report";
  std::size_t replicates = 2000, points = 101;
  double level = 0.95, gap = kDefaultGapThreshold;
  std::uint64_t seed = 0;
};

void run_report(const ReportArgs& a) {
  std::map<std::string, EvalRunMatrix> runs;
  for (const auto& in : a.inputs) {
    for (auto& [algo, m] : read_eval_records(fs::path(in))) {
      auto& dst = runs[algo];
      dst.insert(dst.end(), m.begin(), m.end());
    }
  }
  ReportOptions opts;
  opts.metric = parse_metric(a.metric);
  opts.normalizer = parse_normalizer(a.normalizer);
  if (!a.category.empty() && a.category != "all") opts.category = parse_category(a.category);
  if (!a.baseline.empty()) opts.baseline = a.baseline;
  opts.bootstrap = {a.replicates, a.level, a.seed};
  opts.gamma0 = a.gap;
  opts.profile_points = a.points;
  const auto bundle = report(runs, opts);
  write_report(a.out, bundle);
  std::cerr << "wrote report for " << runs.size() << " algorithm(s) to " << a.out << '\n';
}

// ------------------------------------------------------------------ synth / repack

struct SynthArgs {
  std::string out, store, codec = "deflate";
  std::size_t episodes = 200;
  std::uint64_t seed = 0;
  int horizon = 200;
};

void run_synth(const SynthArgs& a) {
  GridHackConfig cfg;
  cfg.horizon = a.horizon;
  const auto files = generate_gridhack(a.out, a.episodes, a.seed, cfg);
  json j{{"raw_dir", a.out}, {"episodes", files.size()}};
  if (!a.store.empty()) {
    StrataPlan plan;
    plan.target_episodes = a.episodes;
    plan.seed = a.seed;
    const auto s = import_source(a.out, cfg.task, plan, a.store, {parse_compression(a.codec)});
    j["store"] = a.store;
    j["store_bytes"] = s.store.file_bytes;
  }
  std::cout << j.dump(2) << '\n';
}

struct RepackArgs {
  std::string input, task, out, codec = "deflate";
  std::size_t episodes = 680, strata = 10;
  std::uint64_t seed = 0;
  int level = -1;
};

void run_repack(const RepackArgs& a) {
  const auto task = parse_task_id(a.task);
  StrataPlan plan;
  plan.n_strata = a.strata;
  plan.target_episodes = a.episodes;
  plan.seed = a.seed;
  const fs::path out = a.out.empty() ? data_dir() / (canonical_string(task) + ".ktb") : fs::path(a.out);
  if (!out.parent_path().empty()) fs::create_directories(out.parent_path());
  const auto s = import_source(a.input, task, plan, out, {parse_compression(a.codec), a.level});
  std::cout << json{{"output", out.string()},
                    {"scanned", s.scanned},
                    {"matching_task", s.matching_task},
                    {"episodes", s.store.episode_count},
                    {"raw_bytes", s.store.raw_bytes},
                    {"compressed_bytes", s.store.compressed_bytes},
                    {"file_bytes", s.store.file_bytes},
                    {"strata_boundaries", s.boundaries}}
                   .dump(2)
            << '\n';
}

// ------------------------------------------------------------------ bench / render

struct BenchArgs {
  std::string store, task = "mon-hum-neu", modes = "all", batch = "64,256", seq = "16,32,64", out;
  std::size_t iters = 500;
  std::uint64_t seed = 0;
};

void run_bench(const BenchArgs& a) {
  std::vector<LoaderMode> modes;
  if (a.modes == "all") {
    modes = {LoaderMode::InMemory, LoaderMode::Memmap, LoaderMode::CompressedOnRead};
  } else {
    std::stringstream ss(a.modes);
    std::string m;
    while (std::getline(ss, m, ',')) modes.push_back(parse_loader_mode(m));
  }
  std::vector<BenchmarkShape> shapes;
  for (const auto b : parse_sizes(a.batch)) {
    for (const auto l : parse_sizes(a.seq)) shapes.push_back({b, l});
  }
  const auto rows = benchmark_loader(resolve_store(a.store, a.task), modes, shapes, a.iters, a.seed);
  std::ofstream file;
  open_out(a.out, file) << benchmark_csv(rows);
}

struct RenderArgs {
  std::string store, task = "mon-hum-neu", png;
  std::size_t episode = 0, step = 0;
  int crop_rows = 0, crop_cols = 0, glyph_w = kFontWidth, glyph_h = kFontHeight;
};

void run_render(const RenderArgs& a) {
  const auto store = open_store(resolve_store(a.store, a.task));
  const auto ep = store->read_episode(a.episode);
  if (a.step >= ep.steps()) {
    throw Error(ErrorKind::IndexOutOfRange,
                "step " + std::to_string(a.step) + " outside episode of " + std::to_string(ep.steps()) + " steps");
  }
  RenderSpec spec;
  spec.crop_rows = a.crop_rows;
  spec.crop_cols = a.crop_cols;
  spec.glyph_width = a.glyph_w;
  spec.glyph_height = a.glyph_h;
  const auto off = a.step * kScreenCells;
  const auto img = render_screen<float>(ep.tty_chars.data() + off, ep.tty_colors.data() + off,
                                        ep.tty_cursor[2 * a.step], ep.tty_cursor[2 * a.step + 1], spec);
  write_png(a.png, img);
  std::cerr << "wrote " << a.png << " (" << img.width << "x" << img.height << ")\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ttyrl: offline RL datasets, training and evaluation for TTY games"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  std::string catalog_format = "json";
  auto* catalog_cmd = app.add_subcommand("catalog", "Print the task catalog");
  catalog_cmd->add_option("--format", catalog_format, "json or csv")
      ->check(CLI::IsMember({"json", "csv"}))
      ->capture_default_str();

  auto* store_cmd = app.add_subcommand("store", "Store utilities");
  store_cmd->require_subcommand(1);
  std::string inspect_path;
  bool inspect_index = true;
  auto* inspect_cmd = store_cmd->add_subcommand("inspect", "Dump a store header and index as JSON");
  inspect_cmd->add_option("path", inspect_path, "KTB1 store")->required();
  inspect_cmd->add_flag("--index,!--no-index", inspect_index, "Include the per-episode index")->capture_default_str();

  RepackArgs repack;
  auto* repack_cmd = app.add_subcommand("repack", "Align, subsample and pack raw episodes into a store");
  repack_cmd->add_option("--input", repack.input, "Directory of .ktr raw episodes")->required();
  repack_cmd->add_option("--task", repack.task, "Task id, e.g. mon-hum-neu")->required();
  repack_cmd->add_option("--episodes", repack.episodes, "Episodes to keep")->capture_default_str();
  repack_cmd->add_option("--strata", repack.strata, "Score strata")->capture_default_str();
  repack_cmd->add_option("--seed", repack.seed, "Subsampling seed")->capture_default_str();
  repack_cmd->add_option("--out", repack.out, "Output store (default: $KATAKOMBA_DATA_DIR/<task>.ktb)");
  repack_cmd->add_option("--codec", repack.codec, "none, deflate or xz")->capture_default_str();
  repack_cmd->add_option("--level", repack.level, "Codec level, -1 for the default")->capture_default_str();

  BenchArgs bench;
  auto* bench_cmd = app.add_subcommand("bench-loader", "Time batch sampling per loader mode");
  add_store_options(bench_cmd, bench.store, bench.task);
  bench_cmd->add_option("--modes", bench.modes, "all or a list of in_memory,memmap,compressed")->capture_default_str();
  bench_cmd->add_option("--batch", bench.batch, "Batch sizes")->capture_default_str();
  bench_cmd->add_option("--seq", bench.seq, "Sequence lengths")->capture_default_str();
  bench_cmd->add_option("--iters", bench.iters, "Draws per mode and shape")->capture_default_str();
  bench_cmd->add_option("--seed", bench.seed, "Sampler seed")->capture_default_str();
  bench_cmd->add_option("--out", bench.out, "CSV output path, - for stdout");

  RenderArgs render;
  auto* render_cmd = app.add_subcommand("render", "Rasterise one stored screen to PNG");
  add_store_options(render_cmd, render.store, render.task);
  render_cmd->add_option("--episode", render.episode, "Episode index")->capture_default_str();
  render_cmd->add_option("--step", render.step, "Step index")->capture_default_str();
  render_cmd->add_option("--png", render.png, "Output PNG")->required();
  render_cmd->add_option("--crop-rows", render.crop_rows, "Odd crop height in cells, 0 for full screen");
  render_cmd->add_option("--crop-cols", render.crop_cols, "Odd crop width in cells, 0 for full screen");
  render_cmd->add_option("--glyph-width", render.glyph_w, "Pixels per cell horizontally")->capture_default_str();
  render_cmd->add_option("--glyph-height", render.glyph_h, "Pixels per cell vertically")->capture_default_str();

  SampleArgs sample;
  auto* sample_cmd = app.add_subcommand("sample", "Draw one sequence batch and write its arrays as .npy");
  add_store_options(sample_cmd, sample.store, sample.task);
  sample_cmd->add_option("--mode", sample.mode, "in_memory, memmap or compressed")
      ->check(CLI::IsMember({"in_memory", "memmap", "compressed"}))
      ->capture_default_str();
  sample_cmd->add_option("--batch", sample.batch, "Batch size")->capture_default_str();
  sample_cmd->add_option("--seq", sample.seq, "Sequence length")->capture_default_str();
  sample_cmd->add_option("--seed", sample.seed, "Sampler seed")->capture_default_str();
  sample_cmd->add_option("--call", sample.call, "Call index within the seeded stream")->capture_default_str();
  sample_cmd->add_option("--pad-policy", sample.pad, "reject_short or left_clamp")
      ->check(CLI::IsMember({"reject_short", "left_clamp"}))
      ->capture_default_str();
  sample_cmd->add_option("--out", sample.out, "Directory for <field>.npy files; omitted prints digests only");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train one algorithm on a store");
  train_cmd->add_option("--algo", tr.algo, "bc, cql, iql, awac or rem")
      ->required()
      ->check(CLI::IsMember({"bc", "cql", "iql", "awac", "rem"}));
  train_cmd->add_option("--config", tr.config, "key = value file (see configs/)");
  add_store_options(train_cmd, tr.store, tr.task);
  train_cmd->add_option("--mode", tr.mode, "Loader mode")->capture_default_str();
  train_cmd->add_option("--iters", tr.iters, "training_iterations");
  train_cmd->add_option("--batch", tr.batch, "batch_size");
  train_cmd->add_option("--seq", tr.seq, "sequence_length");
  train_cmd->add_option("--lr", tr.lr, "learning_rate");
  train_cmd->add_option("--hidden", tr.hidden, "lstm_hidden_dim");
  train_cmd->add_option("--layers", tr.layers, "lstm_layers");
  train_cmd->add_option("--seed", tr.seed, "Training seed");
  train_cmd->add_option("--log-every", tr.log_every, "Metric interval in iterations");
  train_cmd->add_option("--checkpoint-every", tr.checkpoint_every, "Checkpoint interval, 0 for final only");
  train_cmd->add_option("--set", tr.sets, "Any config key, e.g. --set encoder.conv=16:6:4:6:4");
  train_cmd->add_option("--out", tr.out, "Final checkpoint path")->capture_default_str();
  train_cmd->add_option("--metrics", tr.metrics, "JSON-lines metric file, - for stdout");
  train_cmd->add_option("--checkpoint-dir", tr.checkpoint_dir, "Directory for intermediate checkpoints");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint (or the scripted policy) on GridHack");
  auto* ckpt_opt = eval_cmd->add_option("--checkpoint", ev.checkpoint, "KTC1 checkpoint");
  auto* scripted_opt = eval_cmd->add_flag("--scripted", ev.scripted, "Evaluate the scripted policy instead");
  ckpt_opt->excludes(scripted_opt);
  eval_cmd->add_option("--episodes", ev.episodes, "Episodes")->capture_default_str();
  eval_cmd->add_option("--seed", ev.seed, "Episode i resets with a seed derived from (seed, i)")
      ->capture_default_str();
  eval_cmd->add_option("--run-id", ev.run_id, "Seed id written into the records (default: training seed)");
  eval_cmd->add_option("--rule", ev.rule, "sample_policy, greedy_policy or greedy_q (default per algorithm)")
      ->check(CLI::IsMember({"sample_policy", "greedy_policy", "greedy_q"}));
  eval_cmd->add_option("--horizon", ev.horizon, "Episode horizon")->capture_default_str();
  eval_cmd->add_option("--label", ev.label, "Algorithm label in the records");
  eval_cmd->add_option("--out", ev.out, "JSON-lines records, - for stdout");
  eval_cmd->add_flag("--agreement", ev.agreement, "Report action agreement with the scripted policy");

  ReportArgs rep;
  auto* report_cmd = app.add_subcommand("report", "Aggregate evaluation records with bootstrap intervals");
  report_cmd->add_option("inputs", rep.inputs, "JSON-lines record files")->required()->check(CLI::ExistingFile);
  report_cmd->add_option("--metric", rep.metric, "normalized_score, death_level or raw_score")
      ->check(CLI::IsMember({"normalized_score", "death_level", "raw_score"}))
      ->capture_default_str();
  report_cmd->add_option("--normalizer", rep.normalizer, "minmax or mean")
      ->check(CLI::IsMember({"minmax", "mean"}))
      ->capture_default_str();
  report_cmd->add_option("--category", rep.category, "base, extended, complete or all");
  report_cmd->add_option("--baseline", rep.baseline, "Algorithm compared against all others");
  report_cmd->add_option("--replicates", rep.replicates, "Bootstrap replicates")->capture_default_str();
  report_cmd->add_option("--level", rep.level, "Confidence level")->capture_default_str();
  report_cmd->add_option("--seed", rep.seed, "Bootstrap seed")->capture_default_str();
  report_cmd->add_option("--gap-threshold", rep.gap, "Optimality gap threshold")->capture_default_str();
  report_cmd->add_option("--profile-points", rep.points, "Thresholds per profile")->capture_default_str();
  report_cmd->add_option("--out", rep.out, "Output directory")->capture_default_str();

  SynthArgs syn;
  auto* synth_cmd = app.add_subcommand("synth", "Generate scripted GridHack episodes");
  synth_cmd->add_option("--out", syn.out, "Directory for .ktr files")->required();
  synth_cmd->add_option("--episodes", syn.episodes, "Episodes")->capture_default_str();
  synth_cmd->add_option("--seed", syn.seed, "Generation seed")->capture_default_str();
  synth_cmd->add_option("--horizon", syn.horizon, "Episode horizon")->capture_default_str();
  synth_cmd->add_option("--store", syn.store, "Also pack every episode into this store");
  synth_cmd->add_option("--codec", syn.codec, "Store codec")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*catalog_cmd) run_catalog(catalog_format);
    if (*inspect_cmd) run_inspect(inspect_path, inspect_index);
    if (*repack_cmd) run_repack(repack);
    if (*bench_cmd) run_bench(bench);
    if (*render_cmd) run_render(render);
    if (*sample_cmd) run_sample(sample);
    if (*train_cmd) run_train(tr);
    if (*eval_cmd) {
      if (ev.checkpoint.empty() && !ev.scripted) {
        std::cerr << "eval: pass --checkpoint or --scripted\n" << eval_cmd->help();
        return 1;
      }
      run_eval(ev);
    }
    if (*report_cmd) run_report(rep);
    if (*synth_cmd) run_synth(syn);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
