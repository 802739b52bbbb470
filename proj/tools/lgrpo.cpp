// lgrpo command-line driver.
//
// Exit codes: 0 success, 1 usage error, 2 runtime error.

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lgrpo/analytics.hpp"
#include "lgrpo/checkpoint.hpp"
#include "lgrpo/config.hpp"
#include "lgrpo/data.hpp"
#include "lgrpo/grpo.hpp"
#include "lgrpo/remote.hpp"
#include "lgrpo/scoring.hpp"

namespace fs = std::filesystem;
using namespace lgrpo;

namespace {

struct UsageError : Error {
  using Error::Error;
};

// Holds an exclusive flock on <dir>/.lgrpo.lock for the process lifetime.
class OutputLock {
 public:
  explicit OutputLock(const fs::path& dir) {
    fs::create_directories(dir);
    const auto path = dir / ".lgrpo.lock";
    fd_ = ::open(path.c_str(), O_CREAT | O_RDWR, 0644);
    if (fd_ < 0) throw Error("cannot open lock file " + path.string());
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
      ::close(fd_);
      throw Error("output directory " + dir.string() + " is in use by another lgrpo process");
    }
  }
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;
  ~OutputLock() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }

 private:
  int fd_ = -1;
};

fs::path parent_dir(const fs::path& file) {
  return file.has_parent_path() ? file.parent_path() : fs::path(".");
}

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> overrides;
};

EngineConfig build_config(const Globals& g) {
  auto cfg = load_config(g.config);
  for (const auto& kv : g.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects section.key=value, got " + kv);
    set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (g.seed) cfg.seed = *g.seed;
  validate(cfg);
  return cfg;
}

struct Data {
  PreferenceDataset all;
  int payload_dim = 0;
};

int infer_payload_dim(const PreferenceDataset& ds, int fallback) {
  for (const auto& p : ds.pairs())
    if (auto f = decode_synth_item(p.item_a)) return static_cast<int>(f->size());
  return fallback;
}

Data load_data(const EngineConfig& cfg) {
  const int fallback = cfg.data.synth.context_dim + 1;
  if (!cfg.data.path.empty()) {
    auto ds = load_dataset(cfg.data.path);
    const int p = infer_payload_dim(ds, fallback);
    return {std::move(ds), p};
  }
  auto sc = cfg.data.synth;
  sc.seed = cfg.seed;
  auto task = synth_generate(sc);
  return {std::move(task.dataset), task.payload_dim};
}

Vocabulary make_vocab(const EngineConfig& cfg) { return Vocabulary::toy(cfg.data.synth.vocab_size); }

ToyPolicy make_toy(const EngineConfig& cfg, const Vocabulary& v, int payload_dim,
                   const std::string& path) {
  if (!path.empty()) return load_toy_policy(path);
  return ToyPolicy::reference(v, payload_dim, cfg.policy.tag_logit, cfg.policy.stop_think_logit,
                              cfg.policy.misuse_logit);
}

// Remote policies see the rendered prompt templates instead of raw prompts.
PreferenceDataset with_templates(const EngineConfig& cfg, const PreferenceDataset& ds) {
  if (cfg.policy.backend != "remote") return ds;
  auto pairs = ds.pairs();
  for (auto& p : pairs) p.prompt = render_prompt(cfg.policy, p.prompt);
  return PreferenceDataset(std::move(pairs), ds.source_tag());
}

std::unique_ptr<Policy> make_policy(const EngineConfig& cfg, const Vocabulary& v, int payload_dim,
                                    const std::string& override_path = {}) {
  if (cfg.policy.backend == "remote")
    return std::make_unique<RemotePolicy>(cfg.policy.endpoint, v,
                                          RemoteOptions{cfg.policy.timeout_ms, cfg.policy.retries});
  return std::make_unique<ToyPolicy>(
      make_toy(cfg, v, payload_dim, override_path.empty() ? cfg.policy.init : override_path));
}

std::unique_ptr<Policy> make_listener(const EngineConfig& cfg, const Vocabulary& v,
                                      int payload_dim) {
  if (!cfg.listener.enabled) return nullptr;
  if (cfg.listener.backend == "remote")
    return std::make_unique<RemotePolicy>(cfg.listener.endpoint, v,
                                          RemoteOptions{cfg.policy.timeout_ms, cfg.policy.retries});
  if (!cfg.listener.init.empty()) return std::make_unique<ToyPolicy>(load_toy_policy(cfg.listener.init));
  return std::make_unique<ToyPolicy>(make_synthetic_listener(
      v, payload_dim, salient_index(cfg.data.synth), cfg.listener.cue_weight,
      cfg.listener.salient_weight));
}

ReportFormat format_for(const std::string& requested, const fs::path& out) {
  if (requested == "json") return ReportFormat::json;
  if (requested == "csv") return ReportFormat::csv;
  if (!requested.empty()) throw UsageError("--format must be json or csv");
  return out.extension() == ".csv" ? ReportFormat::csv : ReportFormat::json;
}

template <class Report>
void write_report(const Report& r, const std::string& out, const std::string& format) {
  const auto f = format_for(format, out);
  if (out.empty() || out == "-") {
    std::cout << render_report(r, f);
    return;
  }
  OutputLock lock(parent_dir(out));
  emit_report(r, out, f);
}

template <class Report>
void write_both(const Report& r, const fs::path& dir, const std::string& stem) {
  emit_report(r, dir / (stem + ".json"), ReportFormat::json);
  emit_report(r, dir / (stem + ".csv"), ReportFormat::csv);
}

// One {"id", "choice", "p_first", "k", "tie"} line per pair.
void write_pair_records(const std::vector<PairOutcome>& outcomes, int k, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& o : outcomes) {
    nlohmann::ordered_json j;
    j["id"] = o.id;
    j["choice"] = o.prediction.failed ? nlohmann::ordered_json(nullptr)
                                        : nlohmann::ordered_json(to_string(o.prediction.choice));
    j["p_first"] = o.prediction.p_first;
    j["k"] = k;
    j["tie"] = o.prediction.tie;
    j["failed"] = o.prediction.failed;
    j["correct"] = o.correct;
    out << j.dump() << "\n";
  }
}

std::string dataset_tag(const EngineConfig& cfg, const PreferenceDataset& ds) {
  if (!cfg.data.path.empty()) return fs::path(cfg.data.path).filename().string();
  return ds.source_tag().empty() ? "synth" : ds.source_tag();
}

// ---------------------------------------------------------------------------

int cmd_synth(const Globals& g) {
  if (g.out.empty()) throw UsageError("synth needs --out");
  auto cfg = build_config(g);
  auto sc = cfg.data.synth;
  sc.seed = cfg.seed;
  auto task = synth_generate(sc);
  OutputLock lock(parent_dir(g.out));
  save_dataset(g.out, task.dataset);
  std::cerr << "wrote " << task.dataset.size() << " pairs to " << g.out << "\n";
  return 0;
}

int cmd_train(const Globals& g, bool resume) {
  if (g.out.empty()) throw UsageError("train needs --out <dir>");
  const auto cfg = build_config(g);
  const fs::path dir = g.out;
  OutputLock lock(dir);

  const auto data = load_data(cfg);
  const auto vocab = make_vocab(cfg);
  const auto train = select_split(data.all, Split::train);
  const auto heldout = select_split(data.all, cfg.eval.split);
  if (cfg.policy.backend != "toy") throw Error("gradient unavailable; use remote backend's optimizer");
  const auto listener = make_listener(cfg, vocab, data.payload_dim);
  const auto hash = config_hash(cfg);

  const auto ckpt = dir / "checkpoint.json";
  std::optional<TrainState> state;
  if (resume && fs::exists(ckpt)) {
    state.emplace(load_checkpoint(ckpt));
    std::cerr << "resuming from step " << state->step << "\n";
  } else {
    state.emplace(make_toy(cfg, vocab, data.payload_dim, cfg.policy.init), cfg.seed);
  }

  std::ofstream metrics(dir / "metrics.jsonl",
                        resume ? std::ios::app | std::ios::binary : std::ios::binary);
  if (!metrics) throw Error("cannot write metrics.jsonl");

  auto heldout_accuracy = [&](const ToyPolicy& p) {
    const auto outcomes =
        evaluate_pairs(p, heldout, cfg.predict_options(derive_seed(cfg.seed, 0xe1)), cfg.eval.workers);
    std::size_t c = 0;
    for (const auto& o : outcomes) c += o.correct;
    return heldout.size() ? static_cast<double>(c) / static_cast<double>(heldout.size()) : 0.0;
  };

  LoopHooks hooks;
  hooks.on_metrics = [&](const TrainMetrics& m) { metrics << to_json(m).dump() << "\n"; };
  if (heldout.size()) {
    hooks.evaluate = heldout_accuracy;
    hooks.eval_every = cfg.eval.every > 0 ? cfg.eval.every : cfg.grpo.total_steps;
  }
  hooks.on_checkpoint = [&](const TrainState& s) { save_checkpoint(s, ckpt, hash); };

  const auto trace = train_loop(*state, train, listener.get(), cfg.trainer(), hooks);
  metrics.flush();
  save_checkpoint(*state, ckpt, hash);
  {
    std::ofstream out(dir / "policy.json", std::ios::binary);
    out << to_json(state->policy).dump() << "\n";
  }
  std::cout << "step " << state->step;
  if (!trace.empty()) std::cout << " mean_reward " << trace.back().mean_reward;
  if (!trace.empty() && trace.back().eval_accuracy)
    std::cout << " heldout_accuracy " << *trace.back().eval_accuracy;
  std::cout << "\n";
  return 0;
}

int cmd_eval(const Globals& g, const std::string& policy_path, const std::string& format,
             const std::string& pairs_path) {
  const auto cfg = build_config(g);
  const auto data = load_data(cfg);
  const auto vocab = make_vocab(cfg);
  auto ds = with_templates(cfg, select_split(data.all, cfg.eval.split));
  ds = PreferenceDataset(ds.pairs(), dataset_tag(cfg, data.all));
  const auto policy = make_policy(cfg, vocab, data.payload_dim, policy_path);
  const auto opt = cfg.predict_options(cfg.seed);
  const auto outcomes = evaluate_pairs(*policy, ds, opt, static_cast<std::size_t>(cfg.eval.workers));
  const auto report = eval_report(ds, outcomes, cfg.eval.thresholds,
                                  {ds.source_tag(), cfg.seed, config_hash(cfg), opt.k});
  write_report(report, g.out, format);
  if (!pairs_path.empty()) write_pair_records(outcomes, opt.k, pairs_path);
  return 0;
}

int cmd_rank(const Globals& g, const std::string& policy_path, const std::string& items_path,
             const std::string& prompt, std::optional<std::size_t> anchor) {
  if (items_path.empty()) throw UsageError("rank needs --items <file>");
  const auto cfg = build_config(g);
  std::ifstream in(items_path);
  if (!in) throw Error("cannot open items file " + items_path);
  std::vector<std::string> items;
  for (std::string line; std::getline(in, line);)
    if (!trim(line).empty()) items.emplace_back(trim(line));
  const auto vocab = make_vocab(cfg);
  int payload_dim = cfg.data.synth.context_dim + 1;
  if (!items.empty())
    if (auto f = decode_synth_item(items.front())) payload_dim = static_cast<int>(f->size());
  const auto policy = make_policy(cfg, vocab, payload_dim, policy_path);
  const auto text = cfg.policy.backend == "remote" ? render_prompt(cfg.policy, prompt) : prompt;
  const auto r = anchor_rank(*policy, text, items, cfg.predict_options(cfg.seed), anchor,
                             static_cast<std::size_t>(cfg.eval.workers));
  nlohmann::ordered_json j;
  j["anchor"] = r.anchor_index;
  auto& scores = j["scores"] = nlohmann::ordered_json::array();
  for (const auto& sc : r.scores) scores.push_back(sc.value);
  j["order"] = r.order;
  j["ties"] = r.ties;
  j["items"] = items;
  j["comparisons"] = r.comparisons;
  j["k"] = cfg.eval.k;
  j["seed"] = cfg.seed;
  j["config_hash"] = config_hash(cfg);
  const auto body = j.dump(2) + "\n";
  if (g.out.empty() || g.out == "-") {
    std::cout << body;
  } else {
    OutputLock lock(parent_dir(g.out));
    std::ofstream(g.out, std::ios::binary) << body;
  }
  return 0;
}

int cmd_analyze(const Globals& g, const std::string& policy_path) {
  if (g.out.empty()) throw UsageError("analyze needs --out <dir>");
  const auto cfg = build_config(g);
  const fs::path dir = g.out;
  OutputLock lock(dir);
  const auto data = load_data(cfg);
  const auto vocab = make_vocab(cfg);
  auto ds = with_templates(cfg, select_split(data.all, cfg.eval.split));
  ds = PreferenceDataset(ds.pairs(), dataset_tag(cfg, data.all));
  const auto policy = make_policy(cfg, vocab, data.payload_dim, policy_path);
  auto instruct = make_listener(cfg, vocab, data.payload_dim);
  if (!instruct) instruct = std::make_unique<ToyPolicy>(make_toy(cfg, vocab, data.payload_dim, {}));

  const int kmax = std::max(cfg.eval.k, *std::max_element(cfg.eval.k_values.begin(),
                                                           cfg.eval.k_values.end()));
  auto opt = cfg.predict_options(cfg.seed);
  opt.k = kmax;
  const auto hash = config_hash(cfg);
  const ReportMeta meta{ds.source_tag(), cfg.seed, hash, kmax};
  const auto workers = static_cast<std::size_t>(cfg.eval.workers);
  const auto outcomes = evaluate_pairs(*policy, ds, opt, workers);

  write_both(eval_report(ds, outcomes, cfg.eval.thresholds, meta), dir, "eval_report");
  write_pair_records(outcomes, kmax, dir / "pairs.jsonl");
  write_both(vote_table(outcomes, cfg.eval.k_values, meta), dir, "vote_table");
  const auto ratings = RatingVocabulary::toy_default(vocab);
  write_both(analyze_disagreement(*policy, *instruct, ds, outcomes, ratings, cfg.eval.bins, meta,
                                  workers),
             dir, "disagreement");
  auto ablation_opt = cfg.predict_options(cfg.seed);
  write_both(nothink_ablation(*policy, ds, ablation_opt, workers, hash), dir, "ablation");
  std::cerr << "wrote reports for " << ds.size() << " pairs to " << dir.string() << "\n";
  return 0;
}

int cmd_judge(const Globals& g, const std::string& policy_path, const std::string& replies,
              const std::string& format) {
  const auto cfg = build_config(g);
  std::unique_ptr<Judge> judge;
  if (!replies.empty()) {
    judge = std::make_unique<ScriptedJudge>(split(replies, ','));
  } else {
    if (cfg.eval.judge_endpoint.empty()) throw UsageError("judge needs eval.judge_endpoint or --replies");
    judge = std::make_unique<HttpJudge>(cfg.eval.judge_endpoint, cfg.eval.judge_timeout_ms,
                                        cfg.eval.judge_retries);
  }
  const auto data = load_data(cfg);
  const auto vocab = make_vocab(cfg);
  auto ds = with_templates(cfg, select_split(data.all, cfg.eval.split));
  const auto policy = make_policy(cfg, vocab, data.payload_dim, policy_path);
  const auto opt = cfg.predict_options(cfg.seed);
  const auto outcomes = evaluate_pairs(*policy, ds, opt, static_cast<std::size_t>(cfg.eval.workers));
  const auto report = judge_contradictions(
      *judge, judge_samples(outcomes), {dataset_tag(cfg, data.all), cfg.seed, config_hash(cfg), opt.k});
  write_report(report, g.out, format);
  return 0;
}

int cmd_serve(const Globals& g, const std::string& policy_path, const std::string& host, int port) {
  const auto cfg = build_config(g);
  const auto vocab = make_vocab(cfg);
  const auto policy =
      make_toy(cfg, vocab, cfg.data.synth.context_dim + 1,
               policy_path.empty() ? cfg.policy.init : policy_path);
  PolicyServer server(policy);
  std::cerr << "serving on " << host << ":" << port << "\n";
  server.serve(host, port);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Listener-shaped GRPO training and evaluation for preference reasoning"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Engine config (INI)")->required();
  app.add_option("--seed", g.seed, "Seed for every random choice");
  app.add_option("--out", g.out, "Output file or directory");
  app.add_option("--set", g.overrides, "Override a config value: section.key=value");

  std::string policy_path, format, pairs_path, items, prompt, replies, host = "127.0.0.1";
  std::optional<std::size_t> anchor;
  bool resume = false;
  int port = 8080;

  auto* synth = app.add_subcommand("synth", "Generate the synthetic preference task as JSONL");
  auto* train = app.add_subcommand("train", "Run GRPO on the toy policy");
  train->add_flag("--resume", resume, "Continue from <out>/checkpoint.json");
  auto* eval = app.add_subcommand("eval", "Accuracy by agreement threshold");
  eval->add_option("--pairs", pairs_path, "Also write per-pair records as JSONL");
  auto* rank = app.add_subcommand("rank", "Anchor-rank a list of items");
  rank->add_option("--items", items, "File with one item per line");
  rank->add_option("--prompt", prompt, "Prompt shared by all items");
  rank->add_option("--anchor", anchor, "Anchor index (default: drawn from the seed)");
  auto* analyze = app.add_subcommand("analyze", "Threshold, vote, disagreement and ablation reports");
  auto* judge = app.add_subcommand("judge", "Contradiction rate from an external judge");
  judge->add_option("--replies", replies, "Comma-separated scripted judge replies (offline)");
  auto* serve = app.add_subcommand("serve", "Serve a toy policy over the remote protocol");
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port");
  for (auto* sub : {eval, rank, analyze, judge, serve})
    sub->add_option("--policy", policy_path, "Policy JSON or checkpoint");
  for (auto* sub : {eval, judge}) sub->add_option("--format", format, "json or csv");
  // Allow global options after the subcommand name too.
  for (auto* sub : {synth, train, eval, rank, analyze, judge, serve}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (*synth) return cmd_synth(g);
    if (*train) return cmd_train(g, resume);
    if (*eval) return cmd_eval(g, policy_path, format, pairs_path);
    if (*rank) return cmd_rank(g, policy_path, items, prompt, anchor);
    if (*analyze) return cmd_analyze(g, policy_path);
    if (*judge) return cmd_judge(g, policy_path, replies, format);
    if (*serve) return cmd_serve(g, policy_path, host, port);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
