#pragma once

// Stage orchestration shared by the CLI and the test suites: configuration
// schema, gateway/tokenizer wiring, the stage dependency graph, hash-gated
// idempotent execution, and the thirteen stage implementations.

#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "ctrlcot/answer.hpp"
#include "ctrlcot/config.hpp"
#include "ctrlcot/corpus.hpp"
#include "ctrlcot/dag.hpp"
#include "ctrlcot/eval.hpp"
#include "ctrlcot/gateway.hpp"
#include "ctrlcot/gateway_http.hpp"
#include "ctrlcot/hra.hpp"
#include "ctrlcot/manifest.hpp"
#include "ctrlcot/pruner.hpp"
#include "ctrlcot/sft.hpp"
#include "ctrlcot/templates.hpp"
#include "ctrlcot/tokenizer.hpp"

namespace ctrlcot {

// Stage output filenames inside the run directory.
namespace stage_files {
constexpr const char* splits = "splits.jsonl";
constexpr const char* hra_traces = "hra_traces.jsonl";
constexpr const char* hra_report = "hra_report.json";
constexpr const char* lpd_labels = "lpd_labels.jsonl";
constexpr const char* pruner_model = "pruner.json";
constexpr const char* lpd_train_report = "lpd_train_report.json";
constexpr const char* mcg_train = "mcg_train.jsonl";
constexpr const char* dag_traces = "dag_traces.jsonl";
constexpr const char* dag_report = "dag_report.json";
constexpr const char* pool_file = "pool.jsonl";
constexpr const char* sft_bcr = "sft_bcr.jsonl";
constexpr const char* trainer_yaml = "trainer.yaml";
constexpr const char* sft_bfr = "sft_bfr.jsonl";
constexpr const char* bfr_candidates = "bfr_candidates.jsonl";
constexpr const char* eval_traces = "eval_traces.jsonl";
constexpr const char* report_md = "report.md";
constexpr const char* report_csv = "report.csv";
constexpr const char* pareto_csv = "pareto.csv";
constexpr const char* recovered = "recovered.jsonl";
constexpr const char* manifest = "manifest.json";
}  // namespace stage_files

/// Upstream stages whose outputs must exist before a stage may start.
inline const std::map<std::string, std::vector<std::string>>& stage_upstreams() {
  static const std::map<std::string, std::vector<std::string>> graph = {
      {"split", {}},
      {"hra", {}},
      {"lpd-build", {"hra"}},
      {"lpd-train", {"lpd-build"}},
      {"dag-build", {"split", "hra", "lpd-train"}},
      {"dag-apply", {"split"}},
      {"pool", {"hra", "dag-apply"}},
      {"export-sft", {"pool"}},
      {"bfr-select", {"split"}},
      {"eval", {}},
      {"report", {"eval"}},
      {"recover", {"eval"}},
  };
  return graph;
}

class Pipeline {
 public:
  Pipeline(const std::string& config_path, std::string run_dir_override = "",
           std::string backend_override = "", bool force = false,
           std::ostream* log = &std::cerr)
      : cfg_(Config::parse_file(config_path)),
        config_hash_(file_hash(config_path)),
        force_(force),
        backend_override_(std::move(backend_override)),
        log_(log) {
    run_dir_ = !run_dir_override.empty() ? run_dir_override
                                         : cfg_.get_string_or("run.run_dir", "runs/default");
    std::filesystem::create_directories(run_dir_);
    manifest_ = RunManifest::load_or_empty(path_of(stage_files::manifest));
    manifest_.run_id = "run-" + config_hash_.substr(0, 12);
    manifest_.config_hash = config_hash_;
    tokenizer_ = make_tokenizer(cfg_.get_string_or("tokenizer.spec", "builtin"));

    const std::string backend = backend_kind();
    if (backend != "live" && backend != "replay")
      throw ConfigError("at backend.kind: expected \"live\" or \"replay\", got \"" + backend +
                        "\"");
  }

  const Config& config() const { return cfg_; }
  const std::string& run_dir() const { return run_dir_; }
  const RunManifest& manifest() const { return manifest_; }
  const Tokenizer& tokenizer() const { return *tokenizer_; }

  std::string path_of(const std::string& rel) const { return run_dir_ + "/" + rel; }

  /// Run one named stage (hash-gated unless --force). Returns the list of
  /// output files written, or empty when the stage was already up to date.
  std::vector<std::string> run_stage(const std::string& name) {
    const auto upstream_it = stage_upstreams().find(name);
    if (upstream_it == stage_upstreams().end())
      throw ConfigError("unknown stage: " + name);
    manifest_.require_upstreams(name, upstream_it->second, run_dir_);

    const std::string signature = stage_signature(name, upstream_it->second);
    const auto existing = manifest_.stages.find(name);
    if (!force_ && existing != manifest_.stages.end() &&
        existing->second.signature == signature && manifest_.outputs_intact(name, run_dir_)) {
      info(name + ": up to date, skipping (use --force to rerun)");
      return {};
    }

    const std::vector<std::string> outputs = dispatch(name);

    StageRecord record;
    record.signature = signature;
    for (const auto& rel : outputs) record.outputs[rel] = file_hash(path_of(rel));
    manifest_.stages[name] = std::move(record);
    manifest_.seeds["run"] = cfg_.get_int_or("run.seed", 7);
    manifest_.seeds["lpd"] = cfg_.get_int_or("lpd.seed", 13);
    manifest_.save(path_of(stage_files::manifest));
    info(name + ": wrote " + std::to_string(outputs.size()) + " file(s) under " + run_dir_);
    return outputs;
  }

  /// Ad-hoc single-text pruning (the `prune` subcommand); not manifest-gated.
  std::string prune_text(const std::string& text, const Rat& gamma,
                         const std::string& model_file = "") {
    const std::string path = !model_file.empty() ? model_file : path_of(stage_files::pruner_model);
    if (!file_exists(path))
      throw StageError("prune: no pruner model at " + path + " (run lpd-train first)");
    const auto scorer = make_scorer(PrunerModel::load(path));
    return prune(text, *scorer, gamma, *tokenizer_);
  }

 private:
  // ---------------------------------------------------------------------
  // Wiring
  // ---------------------------------------------------------------------

  std::string backend_kind() const {
    if (!backend_override_.empty()) return backend_override_;
    return cfg_.get_string_or("backend.kind", "replay");
  }

  struct EndpointSpec {
    std::string url;
    std::string model;
  };

  EndpointSpec endpoint(const std::string& role) const {
    EndpointSpec e;
    e.url = cfg_.get_string_or("endpoints." + role + "_url",
                               cfg_.get_string_or("endpoints.base_url", ""));
    e.model = cfg_.get_string_or("endpoints." + role + "_model",
                                 cfg_.get_string_or("endpoints.base_model", "default-model"));
    return e;
  }

  Gateway& gateway_for(const std::string& role, const std::string& stage) {
    const std::string kind = backend_kind();
    std::shared_ptr<Gateway> gw;
    if (kind == "replay") {
      const std::string cache_key = "replay";
      auto it = gateways_.find(cache_key);
      if (it == gateways_.end()) {
        const std::string fixture = cfg_.get_string("backend.replay_file");
        it = gateways_.emplace(cache_key, std::make_shared<ReplayGateway>(fixture)).first;
      }
      gw = it->second;
    } else {
      const EndpointSpec spec = endpoint(role);
      if (spec.url.empty())
        throw ConfigError("at endpoints." + role + "_url: live backend needs an endpoint URL");
      auto it = gateways_.find(spec.url);
      if (it == gateways_.end()) {
        LiveGatewayConfig live;
        live.base_url = spec.url;
        live.max_attempts = static_cast<int>(cfg_.get_int_or("backend.retries", 5));
        live.backoff_base_ms = static_cast<int>(cfg_.get_int_or("backend.backoff_base_ms", 1000));
        live.timeout_seconds = static_cast<int>(cfg_.get_int_or("backend.timeout_seconds", 120));
        it = gateways_.emplace(spec.url, std::make_shared<LiveGateway>(live)).first;
      }
      gw = it->second;
    }
    gw->set_log_path(path_of("logs/" + stage + "_calls.jsonl"));
    return *gw;
  }

  std::size_t max_in_flight() const {
    const auto v = cfg_.get_int_or("backend.max_in_flight", 4);
    if (v < 1) throw ConfigError("at backend.max_in_flight: must be >= 1");
    return static_cast<std::size_t>(v);
  }

  std::vector<Problem> load_corpus(std::optional<Split> split = std::nullopt) const {
    const std::string path = cfg_.get_string("corpus.problems");
    const std::string dataset = cfg_.get_string_or("corpus.dataset", "other");
    auto problems = load_problems(path, dataset);
    if (!split) return problems;
    std::vector<Problem> filtered;
    for (auto& p : problems)
      if (p.split == *split) filtered.push_back(std::move(p));
    return filtered;
  }

  TierTemplateSet tier_templates() const {
    const std::string dir = cfg_.get_string_or("templates.dir", "");
    return dir.empty() ? TierTemplateSet::defaults() : TierTemplateSet::from_directory(dir);
  }

  std::string template_text(const std::string& key, const std::string& fallback) const {
    return load_template_or(cfg_.get_string_or("templates." + key, ""), fallback);
  }

  RatioSet ratio_set() const {
    const Rat floor = cfg_.get_rat_or("dag.ratio_floor", Rat(3, 10));
    if (!cfg_.has("dag.ratios")) {
      auto set = RatioSet::defaults();
      set.validate(floor);
      return set;
    }
    return RatioSet::from_strings(cfg_.get_string_array("dag.ratios"), floor);
  }

  Featurizer featurizer() const {
    auto operators = default_operator_lexicon();
    auto connectives = default_connective_lexicon();
    if (cfg_.has("lpd.operators")) operators = load_lexicon(cfg_.get_string("lpd.operators"));
    if (cfg_.has("lpd.connectives"))
      connectives = load_lexicon(cfg_.get_string("lpd.connectives"));
    return Featurizer(std::move(operators), std::move(connectives));
  }

  std::vector<TokenClass> protected_classes() const {
    std::vector<TokenClass> out;
    if (!cfg_.has("lpd.protected")) return out;
    for (const auto& name : cfg_.get_string_array("lpd.protected"))
      out.push_back(token_class_from_string(name));
    return out;
  }

  std::unique_ptr<TokenScorer> make_scorer(PrunerModel model) const {
    auto protect = protected_classes();
    if (!protect.empty()) model.protected_classes = protect;
    return std::make_unique<LinearScorer>(std::move(model), featurizer());
  }

  BudgetTable budget_table() const {
    const std::string path = cfg_.get_string_or("eval.budgets_file", "");
    return path.empty() ? BudgetTable::defaults() : BudgetTable::load(path);
  }

  std::unordered_map<std::string, Bucket> bucket_index() const {
    return index_splits(load_splits(path_of(stage_files::splits)));
  }

  std::vector<Problem> bucket_problems(Bucket bucket) const {
    const auto buckets = bucket_index();
    std::vector<Problem> out;
    for (auto& p : load_corpus(Split::train)) {
      const auto it = buckets.find(p.id);
      if (it != buckets.end() && it->second == bucket) out.push_back(std::move(p));
    }
    return out;
  }

  std::string stage_signature(const std::string& name,
                              const std::vector<std::string>& upstreams) const {
    std::string acc = config_hash_ + "|" + name + "|" + manifest_.upstream_digest(upstreams);
    // stages that read the problems file directly depend on its bytes
    if (name == "split" || name == "hra" || name == "dag-apply" || name == "bfr-select" ||
        name == "eval") {
      acc += "|" + file_hash(cfg_.get_string("corpus.problems"));
    }
    return to_hex(fnv1a64(acc));
  }

  void info(const std::string& msg) const {
    if (log_) *log_ << "ctrlcot: " << msg << "\n";
  }

  // ---------------------------------------------------------------------
  // Stages
  // ---------------------------------------------------------------------

  std::vector<std::string> dispatch(const std::string& name) {
    if (name == "split") return stage_split();
    if (name == "hra") return stage_hra();
    if (name == "lpd-build") return stage_lpd_build();
    if (name == "lpd-train") return stage_lpd_train();
    if (name == "dag-build") return stage_dag_build();
    if (name == "dag-apply") return stage_dag_apply();
    if (name == "pool") return stage_pool();
    if (name == "export-sft") return stage_export_sft();
    if (name == "bfr-select") return stage_bfr_select();
    if (name == "eval") return stage_eval();
    if (name == "report") return stage_report();
    if (name == "recover") return stage_recover();
    throw ConfigError("unknown stage: " + name);
  }

  std::vector<std::string> stage_split() {
    const auto train = load_corpus(Split::train);
    const auto splits = split_ab(train, cfg_.get_int_or("run.seed", 7),
                                 cfg_.get_rat_or("corpus.fraction_a", Rat(1, 2)));
    emit_splits(path_of(stage_files::splits), splits);
    return {stage_files::splits};
  }

  std::vector<std::string> stage_hra() {
    const auto problems = load_corpus(Split::train);
    const auto templates = tier_templates();
    std::unordered_map<std::string, std::string> references;
    const std::string refs_path = cfg_.get_string_or("hra.references", "");
    if (!refs_path.empty()) references = load_references(refs_path);
    auto& gw = gateway_for("base", "hra");
    const auto result = run_hra(problems, gw, templates, references, *tokenizer_,
                                endpoint("base").model, max_in_flight(), log_);
    emit_traces(path_of(stage_files::hra_traces), result.traces);
    write_file(path_of(stage_files::hra_report), result.report.to_json().dump(2) + "\n");
    return {stage_files::hra_traces, stage_files::hra_report};
  }

  std::vector<std::string> stage_lpd_build() {
    const auto corpus = load_traces(path_of(stage_files::hra_traces), tokenizer_.get());
    auto& gw = gateway_for("teacher", "lpd-build");
    const auto result = build_lpd_dataset(
        corpus, gw, template_text("teacher", default_teacher_template()),
        endpoint("teacher").model,
        static_cast<std::size_t>(cfg_.get_int_or("lpd.sample_size", 1000)),
        cfg_.get_int_or("lpd.seed", 13), *tokenizer_, max_in_flight(), log_);
    emit_labeled_dataset(path_of(stage_files::lpd_labels), result.dataset);
    info("lpd-build: labeled " + std::to_string(result.dataset.size()) + " of " +
         std::to_string(result.requested) + " sampled traces (" +
         std::to_string(result.failed) + " failures)");
    return {stage_files::lpd_labels};
  }

  std::vector<std::string> stage_lpd_train() {
    const auto dataset = load_labeled_dataset(path_of(stage_files::lpd_labels));
    const auto report = train_pruner(
        dataset, featurizer(),
        static_cast<unsigned>(cfg_.get_int_or("lpd.epochs", 10)),
        rat_to_double(cfg_.get_rat_or("lpd.learning_rate", Rat(1, 2))),
        cfg_.get_int_or("lpd.seed", 13));
    PrunerModel model = report.model;
    model.protected_classes = protected_classes();
    model.save(path_of(stage_files::pruner_model));
    nlohmann::json train_report{{"epochs", report.loss_curve.size()},
                                {"final_loss", report.loss_curve.back()},
                                {"training_accuracy", report.training_accuracy},
                                {"loss_curve", report.loss_curve}};
    write_file(path_of(stage_files::lpd_train_report), train_report.dump(2) + "\n");
    return {stage_files::pruner_model, stage_files::lpd_train_report};
  }

  std::vector<std::string> stage_dag_build() {
    const auto buckets = bucket_index();
    const auto traces = load_traces(path_of(stage_files::hra_traces), tokenizer_.get());
    std::vector<Trace> seeds;
    for (const auto& t : traces) {
      if (t.origin.kind == Origin::Kind::hra && t.origin.tier == Tier::ultra_concise &&
          buckets.count(t.problem_id) && buckets.at(t.problem_id) == Bucket::A)
        seeds.push_back(t);
    }
    info("dag-build: " + std::to_string(seeds.size()) + " ultra-concise seeds in bucket A");
    const auto scorer = make_scorer(PrunerModel::load(path_of(stage_files::pruner_model)));
    const auto examples = build_mcg_training(
        seeds, index_problems(load_corpus(Split::train)), buckets, *scorer, ratio_set(),
        template_text("mcg", default_mcg_template_text()), *tokenizer_);
    export_sft(mcg_examples_to_sft(examples, *tokenizer_), path_of(stage_files::mcg_train));
    return {stage_files::mcg_train};
  }

  std::vector<std::string> stage_dag_apply() {
    auto& gw = gateway_for("mcg", "dag-apply");
    const auto result = apply_mcg(bucket_problems(Bucket::B), gw, ratio_set(),
                                  template_text("mcg", default_mcg_template_text()),
                                  bucket_index(), *tokenizer_, endpoint("mcg").model,
                                  max_in_flight(), log_);
    emit_traces(path_of(stage_files::dag_traces), result.traces);
    write_file(path_of(stage_files::dag_report), result.report.to_json().dump(2) + "\n");
    return {stage_files::dag_traces, stage_files::dag_report};
  }

  std::vector<std::string> stage_pool() {
    const auto hra_traces = load_traces(path_of(stage_files::hra_traces), tokenizer_.get());
    const auto dag_traces = load_traces(path_of(stage_files::dag_traces), tokenizer_.get());
    const auto pooled = pool(hra_traces, dag_traces);
    emit_traces(path_of(stage_files::pool_file), pool_to_traces(pooled));
    return {stage_files::pool_file};
  }

  std::vector<std::string> stage_export_sft() {
    const auto traces = load_traces(path_of(stage_files::pool_file), tokenizer_.get());
    std::map<std::string, std::vector<Trace>> pooled;
    for (const auto& t : traces) pooled[t.problem_id].push_back(t);
    const auto records =
        to_sft_records(pooled, index_problems(load_corpus(Split::train)),
                       template_text("budget", default_budget_template_text()));
    export_sft(records, path_of(stage_files::sft_bcr));
    emit_trainer_config(path_of(stage_files::trainer_yaml));
    return {stage_files::sft_bcr, stage_files::trainer_yaml};
  }

  BudgetGrid budget_grid() const {
    if (cfg_.has("reasoner.budget_grid")) {
      BudgetGrid grid;
      for (const auto b : cfg_.get_int_array("reasoner.budget_grid")) {
        if (b <= 0) throw ConfigError("at reasoner.budget_grid: budgets must be positive");
        grid.budgets.push_back(static_cast<std::uint64_t>(b));
      }
      grid.validate();
      return grid;
    }
    return default_budget_grid(budget_table().budgets_for_pair(
        cfg_.get_string_or("eval.model", ""), cfg_.get_string_or("eval.dataset", "")));
  }

  std::vector<std::string> stage_bfr_select() {
    auto& gw = gateway_for("bcr", "bfr-select");
    const auto result = select_bfr(bucket_problems(Bucket::A), gw, budget_grid(),
                                   template_text("budget", default_budget_template_text()),
                                   endpoint("bcr").model, *tokenizer_, max_in_flight(), log_);
    export_sft(result.records, path_of(stage_files::sft_bfr));
    std::vector<json> candidate_rows;
    for (const auto& c : result.candidates) {
      candidate_rows.push_back(json{{"problem_id", c.problem_id},
                                    {"requested_budget", c.requested_budget},
                                    {"token_count", c.token_count},
                                    {"correct", c.correct},
                                    {"selected", c.selected}});
    }
    write_jsonl(path_of(stage_files::bfr_candidates), candidate_rows);
    info("bfr-select: kept " + std::to_string(result.records.size()) + ", omitted " +
         std::to_string(result.omitted));
    return {stage_files::sft_bfr, stage_files::bfr_candidates};
  }

  struct EvalSetting {
    std::string label;
    std::optional<std::uint64_t> budget;
    std::string role;  // endpoint role
  };

  std::vector<EvalSetting> eval_settings() const {
    std::vector<EvalSetting> settings;
    if (cfg_.get_bool_or("eval.include_original", true))
      settings.push_back({"original", std::nullopt, "base"});
    std::vector<std::uint64_t> budgets;
    if (cfg_.has("eval.budgets")) {
      for (const auto b : cfg_.get_int_array("eval.budgets")) {
        if (b <= 0) throw ConfigError("at eval.budgets: budgets must be positive");
        budgets.push_back(static_cast<std::uint64_t>(b));
      }
    }
    if (cfg_.has("eval.cs")) {
      const auto table = budget_table();
      for (const auto& name : cfg_.get_string_array("eval.cs"))
        budgets.push_back(table.budget_for(cs_from_string(name),
                                           cfg_.get_string_or("eval.model", ""),
                                           cfg_.get_string_or("eval.dataset", "")));
    }
    std::sort(budgets.begin(), budgets.end());
    budgets.erase(std::unique(budgets.begin(), budgets.end()), budgets.end());
    for (const auto b : budgets)
      settings.push_back({"budget-" + std::to_string(b), b, "bcr"});
    if (cfg_.get_bool_or("eval.include_budget_free", false))
      settings.push_back({"budget-free", std::nullopt, "bfr"});
    if (settings.empty()) throw ConfigError("eval: no settings configured");
    return settings;
  }

  std::vector<std::string> stage_eval() {
    const auto problems = load_corpus(Split::test);
    if (problems.empty()) throw StageError("eval: corpus has no test problems");
    const std::string budget_template = template_text("budget", default_budget_template_text());
    std::vector<json> rows;
    for (const auto& setting : eval_settings()) {
      auto& gw = gateway_for(setting.role, "eval");
      const auto traces =
          run_eval(problems, gw, setting.budget, budget_template, endpoint(setting.role).model,
                   *tokenizer_, setting.label, max_in_flight(), log_);
      for (const auto& t : traces) {
        json row = trace_to_json(t);
        row["setting"] = setting.label;
        rows.push_back(std::move(row));
      }
    }
    write_jsonl(path_of(stage_files::eval_traces), rows);
    return {stage_files::eval_traces};
  }

  // eval_traces.jsonl rows are Trace JSON plus a "setting" field
  std::map<std::string, std::vector<Trace>> load_eval_traces() const {
    std::map<std::string, std::vector<Trace>> by_setting;
    std::size_t line_no = 0;
    for (const auto& j : read_jsonl(path_of(stage_files::eval_traces))) {
      ++line_no;
      if (!j.contains("setting"))
        throw ParseError(path_of(stage_files::eval_traces), line_no, "row has no setting");
      by_setting[j["setting"].get<std::string>()].push_back(trace_from_json(j));
    }
    return by_setting;
  }

  std::vector<std::string> stage_report() {
    const auto by_setting = load_eval_traces();
    Rat baseline;
    if (by_setting.count("original")) {
      std::uint64_t total = 0;
      for (const auto& t : by_setting.at("original")) total += t.token_count;
      baseline = Rat(static_cast<std::int64_t>(total),
                     static_cast<std::int64_t>(by_setting.at("original").size()));
    } else if (cfg_.has("eval.baseline_avg_tokens")) {
      baseline = cfg_.get_rat("eval.baseline_avg_tokens");
    } else {
      throw StageError(
          "report: no 'original' setting in eval traces and no eval.baseline_avg_tokens "
          "configured");
    }
    std::vector<EvalReportRow> rows;
    for (const auto& [setting, traces] : by_setting) {
      EvalReportRow row = compute_metrics(traces, baseline);
      row.model = cfg_.get_string_or("eval.model", "model");
      row.dataset = cfg_.get_string_or("eval.dataset", "dataset");
      row.setting = setting;
      rows.push_back(std::move(row));
    }
    emit_report(rows, ReportFormat::markdown_table, path_of(stage_files::report_md));
    emit_report(rows, ReportFormat::csv, path_of(stage_files::report_csv));
    emit_report(rows, ReportFormat::plot_csv, path_of(stage_files::pareto_csv));
    return {stage_files::report_md, stage_files::report_csv, stage_files::pareto_csv};
  }

  std::vector<std::string> stage_recover() {
    const auto problems = index_problems(load_corpus());
    const std::string recovery_template =
        template_text("recovery", default_recovery_template_text());
    auto& gw = gateway_for("base", "recover");
    const std::string model = endpoint("base").model;

    std::vector<json> rows;
    std::size_t consistent = 0;
    std::size_t line_no = 0;
    for (const auto& j : read_jsonl(path_of(stage_files::eval_traces))) {
      ++line_no;
      const Trace t = trace_from_json(j);
      if (t.text.empty()) continue;
      const auto p = problems.find(t.problem_id);
      if (p == problems.end())
        throw StageError("recover: unknown problem " + t.problem_id);
      const std::string tag = "recover:" + j.value("setting", std::string("all")) + ":" +
                              t.problem_id;
      const std::string recovered =
          recover_cot(t.text, p->second.question, gw, recovery_template, model, tag);
      const auto before = extract_answer(t.text);
      const auto after = extract_answer(recovered);
      const bool answer_consistent =
          before && after && equivalent(normalize(*before), normalize(*after));
      consistent += answer_consistent;
      rows.push_back(json{{"problem_id", t.problem_id},
                          {"setting", j.value("setting", std::string("all"))},
                          {"compressed", t.text},
                          {"recovered", recovered},
                          {"answer_consistent", answer_consistent},
                          {"compressed_tokens", t.token_count},
                          {"recovered_tokens", tokenizer_->count(recovered)}});
    }
    write_jsonl(path_of(stage_files::recovered), rows);
    info("recover: " + std::to_string(consistent) + "/" + std::to_string(rows.size()) +
         " answer-consistent recoveries");
    return {stage_files::recovered};
  }

  Config cfg_;
  std::string config_hash_;
  std::string run_dir_;
  bool force_;
  std::string backend_override_;
  std::ostream* log_;
  RunManifest manifest_;
  std::shared_ptr<Tokenizer> tokenizer_;
  std::map<std::string, std::shared_ptr<Gateway>> gateways_;
};

}  // namespace ctrlcot
