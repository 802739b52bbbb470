#pragma once

// Evaluation and analysis reports: accuracy by agreement threshold,
// majority vote against k, listener/reasoner disagreement bins, the
// contradiction judge harness and the no-thinking ablation. Every report
// serializes to JSON (schema version 1) and CSV.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "lgrpo/data.hpp"
#include "lgrpo/error.hpp"
#include "lgrpo/listener.hpp"
#include "lgrpo/policy.hpp"
#include "lgrpo/scoring.hpp"
#include "lgrpo/util.hpp"

namespace lgrpo {

inline constexpr int kReportSchemaVersion = 1;

inline constexpr std::string_view kJudgeSystemPrompt =
    "You are an expert factual verifier. Determine whether the model's final answer "
    "contradicts its reasoning. Reply with the single word YES if it contradicts, otherwise "
    "NO. Answer only YES or NO.";

// Identifies the run that produced a report.
struct ReportMeta {
  std::string dataset_tag;
  std::uint64_t seed = 0;
  std::string config_hash;
  int k = 1;
};

// ---------------------------------------------------------------------------
// Per-pair predictions shared by several reports

struct PairOutcome {
  std::string id;
  Winner winner = Winner::unknown;
  PairPrediction prediction;
  bool correct = false;  // format failures count as incorrect
};

inline std::uint64_t pair_seed(std::uint64_t seed, std::size_t index) {
  return derive_seed(seed, 0xe7a, index);
}

inline std::vector<PairOutcome> evaluate_pairs(const Policy& policy, const PreferenceDataset& ds,
                                               const PredictOptions& opt,
                                               std::size_t workers = 1) {
  std::vector<PairOutcome> out(ds.size());
  parallel_for(ds.size(), workers, [&](std::size_t i) {
    PredictOptions o = opt;
    o.seed = pair_seed(opt.seed, i);
    auto pred = predict_pair(policy, ds[i], o);
    const bool correct = !pred.failed && pred.choice == ds[i].winner;
    out[i] = {ds[i].id, ds[i].winner, std::move(pred), correct};
  });
  return out;
}

inline std::optional<double> accuracy_of(std::size_t correct, std::size_t n) {
  if (n == 0) return std::nullopt;
  return static_cast<double>(correct) / static_cast<double>(n);
}

inline std::optional<double> binomial_se(std::optional<double> acc, std::size_t n) {
  if (!acc || n == 0) return std::nullopt;
  return std::sqrt(*acc * (1.0 - *acc) / static_cast<double>(n));
}

// ---------------------------------------------------------------------------
// Accuracy by agreement threshold

struct ThresholdAccuracy {
  double threshold = 0.5;
  std::size_t n = 0;
  std::optional<double> accuracy;  // nullopt when no pair passes
};

struct EvalReport {
  ReportMeta meta;
  std::vector<ThresholdAccuracy> thresholds;
  std::size_t n = 0;
  std::optional<double> overall;
  std::size_t format_failures = 0;
};

inline EvalReport eval_report(const PreferenceDataset& ds, const std::vector<PairOutcome>& outcomes,
                              const std::vector<double>& thresholds, ReportMeta meta) {
  if (outcomes.size() != ds.size()) throw Error("outcomes do not match dataset");
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < ds.size(); ++i) index[ds[i].id] = i;

  EvalReport r;
  r.meta = std::move(meta);
  std::size_t correct = 0;
  for (const auto& o : outcomes) {
    correct += o.correct;
    r.format_failures += o.prediction.failed;
  }
  r.n = outcomes.size();
  r.overall = accuracy_of(correct, r.n);
  for (double t : thresholds) {
    const auto kept = filter_by_agreement(ds, t);
    std::size_t c = 0;
    for (const auto& p : kept.pairs()) c += outcomes[index.at(p.id)].correct;
    r.thresholds.push_back({t, kept.size(), accuracy_of(c, kept.size())});
  }
  return r;
}

inline EvalReport eval_accuracy(const Policy& policy, const PreferenceDataset& ds,
                                const std::vector<double>& thresholds, const PredictOptions& opt,
                                std::size_t workers = 1, std::string config_hash = {}) {
  for (double t : thresholds)
    if (!(t >= 0.5 && t <= 1.0)) throw Error("thresholds must lie in [0.5, 1.0]");
  const auto outcomes = evaluate_pairs(policy, ds, opt, workers);
  return eval_report(ds, outcomes, thresholds,
                     {ds.source_tag(), opt.seed, std::move(config_hash), opt.k});
}

// ---------------------------------------------------------------------------
// Majority vote and mean@k against k

struct VoteRow {
  int k = 1;
  std::size_t n = 0;
  std::optional<double> vote_accuracy;
  std::optional<double> mean_accuracy;
  std::size_t ties = 0;
};

struct VoteTable {
  ReportMeta meta;
  std::vector<VoteRow> rows;
};

// Uses the first k rollouts of each outcome; outcomes must hold at least
// max(k_values) rollouts. Vote ties resolve to "first" and are counted.
inline VoteTable vote_table(const std::vector<PairOutcome>& outcomes,
                            const std::vector<int>& k_values, ReportMeta meta) {
  VoteTable t;
  t.meta = std::move(meta);
  for (int k : k_values) {
    if (k < 1) throw Error("k must be positive");
    VoteRow row{k, outcomes.size(), {}, {}, 0};
    std::size_t vote_ok = 0, mean_ok = 0;
    for (const auto& o : outcomes) {
      const auto& rp = o.prediction.rollout_p;
      if (static_cast<int>(rp.size()) < k) throw Error("outcome has fewer rollouts than k");
      std::vector<Winner> votes;
      std::vector<double> ps;
      for (int j = 0; j < k; ++j)
        if (rp[j]) {
          votes.push_back(*rp[j] > 0.5 ? Winner::first : Winner::second);
          ps.push_back(*rp[j]);
        }
      if (votes.empty()) continue;
      const auto v = majority_vote(votes);
      row.ties += v.tie;
      vote_ok += v.choice == o.winner;
      const double m = mean_at_k(ps);
      mean_ok += (m >= 0.5 ? Winner::first : Winner::second) == o.winner;
    }
    row.vote_accuracy = accuracy_of(vote_ok, row.n);
    row.mean_accuracy = accuracy_of(mean_ok, row.n);
    t.rows.push_back(row);
  }
  return t;
}

// ---------------------------------------------------------------------------
// Listener / reasoner disagreement

struct DisagreementReport {
  ReportMeta meta;
  std::vector<DisagreementRecord> records;
  std::vector<BinStat> bins;
  std::size_t skipped = 0;  // pairs without a parsed rollout
};

// The instruct side scores each item from the items and prompt alone; the
// reasoner side scores them after its own first parsed reasoning trace.
inline DisagreementReport analyze_disagreement(const Policy& reasoner, const Policy& instruct,
                                               const PreferenceDataset& ds,
                                               const std::vector<PairOutcome>& outcomes,
                                               const RatingVocabulary& ratings, int bins,
                                               ReportMeta meta, std::size_t workers = 1) {
  if (outcomes.size() != ds.size()) throw Error("outcomes do not match dataset");
  const auto& v = reasoner.vocab();
  std::vector<std::optional<DisagreementRecord>> slots(ds.size());
  parallel_for(ds.size(), workers, [&](std::size_t i) {
    const auto& pred = outcomes[i].prediction;
    for (std::size_t j = 0; j < pred.rollouts.size(); ++j) {
      if (!pred.rollout_p[j]) continue;
      auto slot = answer_slot_context(pred.rollouts[j], v);
      const std::vector<std::string> items{ds[i].item_a, ds[i].item_b};
      const auto inst = item_soft_scores(instruct, items, ds[i].prompt, {}, ratings);
      const auto reas =
          item_soft_scores(reasoner, items, ds[i].prompt, slot->reasoning_tokens, ratings);
      slots[i] = make_disagreement_record(inst, reas, outcomes[i].correct);
      return;
    }
  });
  DisagreementReport r;
  r.meta = std::move(meta);
  for (auto& s : slots) {
    if (s)
      r.records.push_back(*s);
    else
      ++r.skipped;
  }
  r.bins = bin_accuracy_by_disagreement(r.records, default_bin_edges(bins));
  return r;
}

// ---------------------------------------------------------------------------
// Contradiction judge

class Judge {
 public:
  virtual ~Judge() = default;
  virtual std::string ask(const std::string& system, const std::string& user) = 0;
  virtual std::string endpoint() const = 0;
};

// {"system": str, "user": str} -> {"text": str} over HTTP POST.
class HttpJudge final : public Judge {
 public:
  HttpJudge(std::string url, int timeout_ms = 30000, int retries = 3)
      : url_(std::move(url)), timeout_ms_(timeout_ms), retries_(retries) {
    const auto scheme = url_.find("://");
    if (scheme == std::string::npos) throw Error("judge endpoint needs a scheme: " + url_);
    const auto slash = url_.find('/', scheme + 3);
    base_ = url_.substr(0, slash);
    path_ = slash == std::string::npos ? "/" : url_.substr(slash);
    if (retries_ < 1) throw Error("retries must be at least 1");
  }

  std::string ask(const std::string& system, const std::string& user) override {
    const auto body = nlohmann::json{{"system", system}, {"user", user}}.dump();
    std::string last = "no attempt made";
    for (int attempt = 0; attempt < retries_; ++attempt) {
      httplib::Client cli(base_);
      cli.set_connection_timeout(std::chrono::milliseconds(timeout_ms_));
      cli.set_read_timeout(std::chrono::milliseconds(timeout_ms_));
      auto res = cli.Post(path_, body, "application/json");
      if (!res) {
        last = httplib::to_string(res.error());
        continue;
      }
      if (res->status != 200) throw ServerError(res->status, res->body);
      try {
        const auto j = nlohmann::json::parse(res->body);
        if (!j.is_object() || !j.contains("text") || !j["text"].is_string())
          throw SchemaError("judge response lacks a string 'text'");
        return j["text"].get<std::string>();
      } catch (const nlohmann::json::exception&) {
        throw SchemaError("judge response is not JSON");
      }
    }
    throw TransportError(url_ + ": " + last);
  }

  std::string endpoint() const override { return url_; }

 private:
  std::string url_, base_, path_;
  int timeout_ms_;
  int retries_;
};

// Replays a fixed list of replies in order, cycling when exhausted.
class ScriptedJudge final : public Judge {
 public:
  explicit ScriptedJudge(std::vector<std::string> replies) : replies_(std::move(replies)) {
    if (replies_.empty()) throw Error("scripted judge needs at least one reply");
  }
  std::string ask(const std::string& system, const std::string& user) override {
    prompts_.push_back({system, user});
    return replies_[next_++ % replies_.size()];
  }
  std::string endpoint() const override { return "scripted"; }
  const std::vector<std::pair<std::string, std::string>>& prompts() const { return prompts_; }

 private:
  std::vector<std::string> replies_;
  std::vector<std::pair<std::string, std::string>> prompts_;
  std::size_t next_ = 0;
};

enum class JudgeVerdict { contradiction, consistent, undecided };

// First whitespace-delimited token, case-insensitive, trailing "." or "!"
// ignored. Anything else is undecided.
inline JudgeVerdict parse_judge_reply(std::string_view reply) {
  auto t = trim(reply);
  const auto end = t.find_first_of(" \t\r\n");
  std::string tok(t.substr(0, end));
  while (!tok.empty() && (tok.back() == '.' || tok.back() == '!')) tok.pop_back();
  std::transform(tok.begin(), tok.end(), tok.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  if (tok == "YES") return JudgeVerdict::contradiction;
  if (tok == "NO") return JudgeVerdict::consistent;
  return JudgeVerdict::undecided;
}

struct JudgeSample {
  std::string id;
  std::string reasoning;
  std::string answer;
};

inline std::string judge_user_message(const JudgeSample& s) {
  return "Reasoning:\n" + s.reasoning + "\n\nAnswer:\n" + s.answer;
}

// Parsed rollouts become judge samples; unparsed ones are skipped.
inline std::vector<JudgeSample> judge_samples(const std::vector<PairOutcome>& outcomes) {
  std::vector<JudgeSample> out;
  for (const auto& o : outcomes)
    for (std::size_t j = 0; j < o.prediction.rollouts.size(); ++j) {
      const auto& r = o.prediction.rollouts[j];
      if (r.parsed && o.prediction.rollout_p[j])
        out.push_back({o.id + "#" + std::to_string(j), std::string(trim(r.parsed->think)),
                       std::string(trim(r.parsed->answer))});
    }
  return out;
}

struct ContradictionReport {
  ReportMeta meta;
  std::size_t total = 0;
  std::size_t contradictory = 0;
  std::size_t undecided = 0;
  std::optional<double> rate;  // contradictory / (total - undecided)
  std::string judge_endpoint;
};

inline ContradictionReport judge_contradictions(Judge& judge,
                                                const std::vector<JudgeSample>& samples,
                                                ReportMeta meta = {}) {
  ContradictionReport r;
  r.meta = std::move(meta);
  r.judge_endpoint = judge.endpoint();
  for (const auto& s : samples) {
    ++r.total;
    JudgeVerdict v = JudgeVerdict::undecided;
    try {
      v = parse_judge_reply(judge.ask(std::string(kJudgeSystemPrompt), judge_user_message(s)));
    } catch (const TransportError&) {
    } catch (const SchemaError&) {
    } catch (const ServerError&) {
    }
    if (v == JudgeVerdict::contradiction) ++r.contradictory;
    if (v == JudgeVerdict::undecided) ++r.undecided;
  }
  r.rate = accuracy_of(r.contradictory, r.total - r.undecided);
  return r;
}

// ---------------------------------------------------------------------------
// No-thinking ablation

struct AblationReport {
  ReportMeta meta;
  std::size_t n = 0;
  std::optional<double> accuracy_with_thinking;
  std::optional<double> se_with_thinking;  // binomial standard error
  std::optional<double> accuracy_without_thinking;
  std::optional<double> se_without_thinking;
  std::string fixed_string{Vocabulary::kFinishedText};
  std::vector<std::string> ids_with;
  std::vector<std::string> ids_without;
};

// Answer-slot context whose reasoning is the fixed no-thinking filler.
inline Context nothink_context(const PreferencePair& p, const Vocabulary& v) {
  return {{p.item_a, p.item_b},
          p.prompt,
          {v.think_open(), v.finished(), v.think_close()},
          {v.answer_open()}};
}

inline AblationReport nothink_ablation(const Policy& policy, const PreferenceDataset& ds,
                                       const PredictOptions& opt, std::size_t workers = 1,
                                       std::string config_hash = {}) {
  AblationReport r;
  r.meta = {ds.source_tag(), opt.seed, std::move(config_hash), opt.k};
  r.n = ds.size();
  const auto with = evaluate_pairs(policy, ds, opt, workers);
  std::vector<char> without(ds.size(), 0);
  parallel_for(ds.size(), workers, [&](std::size_t i) {
    const double p = answer_prob_first(policy, nothink_context(ds[i], policy.vocab()));
    without[i] = (p >= 0.5 ? Winner::first : Winner::second) == ds[i].winner;
  });
  std::size_t cw = 0, cwo = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    cw += with[i].correct;
    cwo += without[i];
    r.ids_with.push_back(with[i].id);
    r.ids_without.push_back(ds[i].id);
  }
  r.accuracy_with_thinking = accuracy_of(cw, r.n);
  r.accuracy_without_thinking = accuracy_of(cwo, r.n);
  r.se_with_thinking = binomial_se(r.accuracy_with_thinking, r.n);
  r.se_without_thinking = binomial_se(r.accuracy_without_thinking, r.n);
  return r;
}

// ---------------------------------------------------------------------------
// Serialization

enum class ReportFormat { json, csv };

namespace report_detail {

inline std::string num(double x) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

inline std::string num(std::optional<double> x) { return x ? num(*x) : "NA"; }

inline nlohmann::ordered_json opt(std::optional<double> x) {
  return x ? nlohmann::ordered_json(*x) : nlohmann::ordered_json(nullptr);
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline nlohmann::ordered_json header(const char* schema, const ReportMeta& m) {
  nlohmann::ordered_json j;
  j["schema"] = schema;
  j["schema_version"] = kReportSchemaVersion;
  j["dataset_tag"] = m.dataset_tag;
  j["seed"] = m.seed;
  j["config_hash"] = m.config_hash;
  j["k"] = m.k;
  return j;
}

inline std::string meta_cells(const ReportMeta& m) {
  return csv_field(m.dataset_tag) + "," + std::to_string(m.seed) + "," +
         csv_field(m.config_hash) + "," + std::to_string(m.k);
}

inline constexpr const char* kMetaColumns = "dataset_tag,seed,config_hash,k";

}  // namespace report_detail

inline nlohmann::ordered_json to_json(const EvalReport& r) {
  using namespace report_detail;
  auto j = header("eval_report", r.meta);
  j["n"] = r.n;
  j["overall_accuracy"] = opt(r.overall);
  j["format_failures"] = r.format_failures;
  auto& t = j["thresholds"] = nlohmann::ordered_json::array();
  for (const auto& b : r.thresholds)
    t.push_back({{"threshold", b.threshold}, {"n", b.n}, {"accuracy", opt(b.accuracy)}});
  return j;
}

// Columns: dataset_tag,seed,config_hash,k,threshold,n,accuracy. The final
// row has threshold "all" and carries the overall accuracy.
inline std::string to_csv(const EvalReport& r) {
  using namespace report_detail;
  std::string s = std::string(kMetaColumns) + ",threshold,n,accuracy\n";
  for (const auto& b : r.thresholds)
    s += meta_cells(r.meta) + "," + num(b.threshold) + "," + std::to_string(b.n) + "," +
         num(b.accuracy) + "\n";
  s += meta_cells(r.meta) + ",all," + std::to_string(r.n) + "," + num(r.overall) + "\n";
  return s;
}

inline EvalReport eval_report_from_json(const nlohmann::json& j) {
  try {
    if (j.at("schema").get<std::string>() != "eval_report" ||
        j.at("schema_version").get<int>() != kReportSchemaVersion)
      throw Error("not an eval_report v1");
    EvalReport r;
    r.meta = {j.at("dataset_tag").get<std::string>(), j.at("seed").get<std::uint64_t>(),
              j.at("config_hash").get<std::string>(), j.at("k").get<int>()};
    r.n = j.at("n").get<std::size_t>();
    if (!j.at("overall_accuracy").is_null()) r.overall = j["overall_accuracy"].get<double>();
    r.format_failures = j.at("format_failures").get<std::size_t>();
    for (const auto& b : j.at("thresholds")) {
      ThresholdAccuracy t{b.at("threshold").get<double>(), b.at("n").get<std::size_t>(), {}};
      if (!b.at("accuracy").is_null()) t.accuracy = b["accuracy"].get<double>();
      r.thresholds.push_back(t);
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed eval report: ") + e.what());
  }
}

inline nlohmann::ordered_json to_json(const VoteTable& t) {
  using namespace report_detail;
  auto j = header("vote_table", t.meta);
  auto& rows = j["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : t.rows)
    rows.push_back({{"k", r.k},
                    {"n", r.n},
                    {"vote_accuracy", opt(r.vote_accuracy)},
                    {"mean_accuracy", opt(r.mean_accuracy)},
                    {"ties", r.ties}});
  return j;
}

// Columns: dataset_tag,seed,config_hash,k,rollouts,n,vote_accuracy,mean_accuracy,ties
inline std::string to_csv(const VoteTable& t) {
  using namespace report_detail;
  std::string s = std::string(kMetaColumns) + ",rollouts,n,vote_accuracy,mean_accuracy,ties\n";
  for (const auto& r : t.rows)
    s += meta_cells(t.meta) + "," + std::to_string(r.k) + "," + std::to_string(r.n) + "," +
         num(r.vote_accuracy) + "," + num(r.mean_accuracy) + "," + std::to_string(r.ties) + "\n";
  return s;
}

inline nlohmann::ordered_json to_json(const DisagreementReport& r) {
  using namespace report_detail;
  auto j = header("disagreement_report", r.meta);
  j["records"] = r.records.size();
  j["skipped"] = r.skipped;
  auto& bins = j["bins"] = nlohmann::ordered_json::array();
  for (const auto& b : r.bins)
    bins.push_back({{"bin_low", b.low},
                    {"bin_high", b.high},
                    {"count", b.count},
                    {"accuracy", opt(b.accuracy)}});
  return j;
}

// Columns: bin_low,bin_high,count,accuracy
inline std::string to_csv(const DisagreementReport& r) {
  using namespace report_detail;
  std::string s = "bin_low,bin_high,count,accuracy\n";
  for (const auto& b : r.bins)
    s += num(b.low) + "," + num(b.high) + "," + std::to_string(b.count) + "," + num(b.accuracy) +
         "\n";
  return s;
}

inline nlohmann::ordered_json to_json(const ContradictionReport& r) {
  using namespace report_detail;
  auto j = header("contradiction_report", r.meta);
  j["total"] = r.total;
  j["contradictory"] = r.contradictory;
  j["undecided"] = r.undecided;
  j["rate"] = opt(r.rate);
  j["judge_endpoint"] = r.judge_endpoint;
  return j;
}

// Columns: dataset_tag,seed,config_hash,k,total,contradictory,undecided,rate,judge_endpoint
inline std::string to_csv(const ContradictionReport& r) {
  using namespace report_detail;
  return std::string(kMetaColumns) + ",total,contradictory,undecided,rate,judge_endpoint\n" +
         meta_cells(r.meta) + "," + std::to_string(r.total) + "," +
         std::to_string(r.contradictory) + "," + std::to_string(r.undecided) + "," +
         num(r.rate) + "," + csv_field(r.judge_endpoint) + "\n";
}

inline nlohmann::ordered_json to_json(const AblationReport& r) {
  using namespace report_detail;
  auto j = header("ablation_report", r.meta);
  j["n"] = r.n;
  j["accuracy_with_thinking"] = opt(r.accuracy_with_thinking);
  j["se_with_thinking"] = opt(r.se_with_thinking);
  j["accuracy_without_thinking"] = opt(r.accuracy_without_thinking);
  j["se_without_thinking"] = opt(r.se_without_thinking);
  j["fixed_string"] = r.fixed_string;
  j["ids"] = r.ids_with;
  return j;
}

// Columns: dataset_tag,seed,config_hash,k,n,accuracy_with_thinking,se_with_thinking,
// accuracy_without_thinking,se_without_thinking,fixed_string
inline std::string to_csv(const AblationReport& r) {
  using namespace report_detail;
  return std::string(kMetaColumns) +
         ",n,accuracy_with_thinking,se_with_thinking,accuracy_without_thinking,"
         "se_without_thinking,fixed_string\n" +
         meta_cells(r.meta) + "," + std::to_string(r.n) + "," + num(r.accuracy_with_thinking) +
         "," + num(r.se_with_thinking) + "," + num(r.accuracy_without_thinking) + "," +
         num(r.se_without_thinking) + "," + csv_field(r.fixed_string) + "\n";
}

template <class Report>
std::string render_report(const Report& r, ReportFormat f) {
  return f == ReportFormat::json ? to_json(r).dump(2) + "\n" : to_csv(r);
}

template <class Report>
void emit_report(const Report& r, const std::filesystem::path& path, ReportFormat f) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write report '" + path.string() + "'");
  out << render_report(r, f);
  if (!out) throw Error("failed writing report '" + path.string() + "'");
}

// Splits one CSV record, honouring double quotes.
inline std::vector<std::string> parse_csv_record(std::string_view line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        out.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else {
      out.back() += c;
    }
  }
  if (quoted) throw ParseError("unterminated quote in CSV record");
  return out;
}

}  // namespace lgrpo
