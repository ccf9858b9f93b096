// Command-line front end: dataset generation, training, evaluation, and the
// release-gate property suite, each run leaving a manifest with artifact
// checksums. Exit codes: 0 success, 1 runtime/data error, 2 usage error.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "aipo/datagen.hpp"
#include "aipo/embedding.hpp"
#include "aipo/eval.hpp"
#include "aipo/intent.hpp"
#include "aipo/losses.hpp"
#include "aipo/manifest.hpp"
#include "aipo/policy.hpp"
#include "aipo/trainer.hpp"
#include "aipo/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw aipo::IoError("cannot open config: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw aipo::ParseError(std::string("bad config json: ") + e.what(), 0);
  }
  return j;
}

template <typename T>
void maybe_get(const json& j, const char* key, T& slot) {
  if (j.contains(key)) slot = j.at(key).get<T>();
}

aipo::GenConfig gen_config_from_json(const json& j) {
  aipo::GenConfig c;
  maybe_get(j, "num_records", c.num_records);
  maybe_get(j, "num_intents", c.num_intents);
  if (j.contains("domain_mix")) {
    const auto mix = j.at("domain_mix").get<std::vector<double>>();
    if (mix.size() != 6)
      throw aipo::InvalidArgumentError("domain_mix needs six weights");
    std::copy(mix.begin(), mix.end(), c.domain_mix.begin());
  }
  maybe_get(j, "minority_fraction", c.minority_fraction);
  maybe_get(j, "response_count", c.response_count);
  maybe_get(j, "prompt_dim", c.prompt_dim);
  maybe_get(j, "embed_dim", c.embed_dim);
  maybe_get(j, "noise_rate", c.noise_rate);
  maybe_get(j, "attack_strength", c.attack_strength);
  maybe_get(j, "feature_noise", c.feature_noise);
  maybe_get(j, "opinion_skew_strength", c.opinion_skew_strength);
  maybe_get(j, "seed", c.seed);
  return c;
}

json gen_config_to_json(const aipo::GenConfig& c) {
  json j;
  j["num_records"] = c.num_records;
  j["num_intents"] = c.num_intents;
  j["domain_mix"] = c.domain_mix;
  j["minority_fraction"] = c.minority_fraction;
  j["response_count"] = c.response_count;
  j["prompt_dim"] = c.prompt_dim;
  j["embed_dim"] = c.embed_dim;
  j["noise_rate"] = c.noise_rate;
  j["attack_strength"] = c.attack_strength;
  j["feature_noise"] = c.feature_noise;
  j["opinion_skew_strength"] = c.opinion_skew_strength;
  j["seed"] = c.seed;
  return j;
}

// Pipeline knobs beyond the trainer contract (reference SFT and intent
// classifier fitting).
struct PipelineConfig {
  aipo::TrainConfig train;
  std::size_t sft_steps = 400;
  double sft_learning_rate = 0.5;
  std::size_t intent_steps = 300;
  double intent_learning_rate = 2.0;
};

PipelineConfig pipeline_from_json(const json& j) {
  PipelineConfig p;
  if (j.contains("loss")) {
    const json& l = j.at("loss");
    maybe_get(l, "beta", p.train.loss.beta);
    maybe_get(l, "lambda", p.train.loss.lambda);
    maybe_get(l, "gamma", p.train.loss.gamma);
    if (l.contains("variant"))
      p.train.loss.variant =
          aipo::loss_variant_from_string(l.at("variant").get<std::string>());
  }
  maybe_get(j, "steps", p.train.steps);
  maybe_get(j, "batch_size", p.train.batch_size);
  maybe_get(j, "learning_rate_policy", p.train.learning_rate_policy);
  maybe_get(j, "learning_rate_intent", p.train.learning_rate_intent);
  maybe_get(j, "warmup_steps", p.train.warmup_steps);
  maybe_get(j, "eval_every", p.train.eval_every);
  maybe_get(j, "patience", p.train.patience);
  maybe_get(j, "grad_clip_norm", p.train.grad_clip_norm);
  maybe_get(j, "seed", p.train.seed);
  maybe_get(j, "sft_steps", p.sft_steps);
  maybe_get(j, "sft_learning_rate", p.sft_learning_rate);
  maybe_get(j, "intent_steps", p.intent_steps);
  maybe_get(j, "intent_learning_rate", p.intent_learning_rate);
  return p;
}

json pipeline_to_json(const PipelineConfig& p) {
  json j;
  j["loss"] = {{"beta", p.train.loss.beta},
               {"lambda", p.train.loss.lambda},
               {"gamma", p.train.loss.gamma},
               {"variant", aipo::to_string(p.train.loss.variant)}};
  j["steps"] = p.train.steps;
  j["batch_size"] = p.train.batch_size;
  j["learning_rate_policy"] = p.train.learning_rate_policy;
  j["learning_rate_intent"] = p.train.learning_rate_intent;
  j["warmup_steps"] = p.train.warmup_steps;
  j["eval_every"] = p.train.eval_every;
  j["patience"] = p.train.patience;
  j["grad_clip_norm"] = p.train.grad_clip_norm;
  j["seed"] = p.train.seed;
  j["sft_steps"] = p.sft_steps;
  j["sft_learning_rate"] = p.sft_learning_rate;
  j["intent_steps"] = p.intent_steps;
  j["intent_learning_rate"] = p.intent_learning_rate;
  return j;
}

struct DatasetDims {
  std::size_t prompt_dim = 0;
  std::size_t context_dim = 0;
  std::size_t embed_dim = 0;
  std::size_t response_count = 0;
  std::size_t num_intents = 0;
};

DatasetDims infer_dims(const std::vector<aipo::PreferenceRecord>& recs) {
  if (recs.empty()) throw aipo::InvalidArgumentError("empty dataset");
  DatasetDims d;
  d.prompt_dim = recs[0].prompt.size();
  d.context_dim = recs[0].context.size();
  if (d.context_dim <= d.prompt_dim)
    throw aipo::InvalidArgumentError("context must extend the prompt");
  d.embed_dim = d.context_dim - d.prompt_dim;
  int max_y = 0, max_i = 0;
  for (const auto& r : recs) {
    max_y = std::max({max_y, r.y_w, r.y_l});
    max_i = std::max(max_i, r.intent);
    if (r.attack) max_i = std::max(max_i, r.attack->distractor_intent);
  }
  d.response_count = static_cast<std::size_t>(max_y) + 1;
  d.num_intents = static_cast<std::size_t>(max_i) + 1;
  return d;
}

int cmd_generate(const std::string& out_dir, const std::string& config_path,
                 std::uint64_t seed, bool seed_set,
                 const std::string& dataset_kind) {
  aipo::WallClock clock;
  aipo::GenConfig cfg;
  if (!config_path.empty()) cfg = gen_config_from_json(load_json(config_path));
  if (seed_set) cfg.seed = seed;

  std::vector<aipo::PreferenceRecord> records;
  if (dataset_kind == "realpref") {
    records = aipo::gen_realpref(cfg);
  } else if (dataset_kind == "attackpref") {
    records = aipo::gen_attackpref(cfg);
  } else {
    throw aipo::InvalidArgumentError("unknown dataset kind: " + dataset_kind);
  }

  fs::create_directories(out_dir);
  const std::size_t n = records.size();
  const auto n_train = static_cast<std::size_t>(0.8 * static_cast<double>(n));
  const auto n_eval = static_cast<std::size_t>(0.1 * static_cast<double>(n));
  const std::vector<aipo::PreferenceRecord> train(
      records.begin(), records.begin() + static_cast<long>(n_train));
  const std::vector<aipo::PreferenceRecord> eval_split(
      records.begin() + static_cast<long>(n_train),
      records.begin() + static_cast<long>(n_train + n_eval));
  const std::vector<aipo::PreferenceRecord> test(
      records.begin() + static_cast<long>(n_train + n_eval), records.end());

  aipo::RunManifest m;
  m.command = "generate";
  m.config_snapshot = gen_config_to_json(cfg);
  m.config_snapshot["dataset"] = dataset_kind;
  m.seed = cfg.seed;
  if (!config_path.empty()) m.inputs.push_back(config_path);

  aipo::write_dataset(out_dir + "/train.jsonl", train);
  aipo::write_dataset(out_dir + "/eval.jsonl", eval_split);
  aipo::write_dataset(out_dir + "/test.jsonl", test);
  aipo::write_taxonomy(out_dir + "/taxonomy.tsv", aipo::make_plan(cfg).taxonomy);
  m.add_output(out_dir + "/train.jsonl");
  m.add_output(out_dir + "/eval.jsonl");
  m.add_output(out_dir + "/test.jsonl");
  m.add_output(out_dir + "/taxonomy.tsv");
  m.duration_seconds = clock.seconds();
  aipo::write_manifest(out_dir + "/manifest.json", m);
  std::cout << "wrote " << train.size() << "/" << eval_split.size() << "/"
            << test.size() << " records to " << out_dir << "\n";
  return 0;
}

int cmd_train(const std::string& data_dir, const std::string& out_dir,
              const std::string& config_path, std::uint64_t seed,
              bool seed_set, const std::string& loss_name,
              const std::string& variant, double beta, double lambda,
              double gamma, bool beta_set, bool lambda_set, bool gamma_set,
              const std::string& resume_dir) {
  aipo::WallClock clock;
  PipelineConfig p;
  if (!config_path.empty()) p = pipeline_from_json(load_json(config_path));
  if (seed_set) p.train.seed = seed;
  if (!loss_name.empty()) {
    if (loss_name == "aipo") {
      p.train.loss.variant = variant == "separable"
                                 ? aipo::LossVariant::kAipoSeparable
                                 : aipo::LossVariant::kAipoLogit;
    } else {
      p.train.loss.variant = aipo::loss_variant_from_string(loss_name);
    }
  }
  if (beta_set) p.train.loss.beta = beta;
  if (lambda_set) p.train.loss.lambda = lambda;
  if (gamma_set) p.train.loss.gamma = gamma;
  p.train.validate();

  const auto train_recs = aipo::read_dataset(data_dir + "/train.jsonl");
  const auto eval_recs = aipo::read_dataset(data_dir + "/eval.jsonl");
  // Dimensions span both splits so a rare intent or response appearing only
  // in the validation data still fits the model shapes.
  auto combined = train_recs;
  combined.insert(combined.end(), eval_recs.begin(), eval_recs.end());
  const DatasetDims dims = infer_dims(combined);

  fs::create_directories(out_dir);
  aipo::RunManifest m;
  m.command = "train";
  m.config_snapshot = pipeline_to_json(p);
  m.seed = p.train.seed;
  m.inputs = {data_dir + "/train.jsonl", data_dir + "/eval.jsonl"};
  if (!config_path.empty()) m.inputs.push_back(config_path);

  aipo::PolicyModel policy;
  aipo::IntentModel intents;
  aipo::ReferencePolicy ref(aipo::PolicyModel{});
  aipo::TrainState state;
  aipo::PolicyModel resumed_best_policy;
  aipo::IntentModel resumed_best_intents;

  if (resume_dir.empty()) {
    ref = aipo::fit_reference_sft(
        train_recs, dims.response_count, dims.embed_dim,
        {p.sft_steps, p.sft_learning_rate, p.train.seed});
    std::vector<std::pair<aipo::ContextVector, int>> intent_data;
    intent_data.reserve(train_recs.size());
    for (const auto& r : train_recs) intent_data.emplace_back(r.context, r.intent);
    intents = aipo::train_intent_classifier(
                  intent_data, {dims.num_intents, dims.embed_dim,
                                p.intent_steps, p.intent_learning_rate,
                                p.train.seed})
                  .model;
    intents = aipo::prepare_intent_model(std::move(intents), p.train.loss);
    policy = aipo::PolicyModel::init(dims.response_count, dims.prompt_dim,
                                     dims.embed_dim, p.train.seed);
  } else {
    ref = aipo::ReferencePolicy(
        aipo::load_policy(resume_dir + "/reference.ckpt").model);
    policy = aipo::load_policy(resume_dir + "/policy_last.ckpt").model;
    intents = aipo::load_intent_model(resume_dir + "/intent_last.ckpt");
    const json st = load_json(resume_dir + "/state.json");
    state.start_step = st.at("completed_steps").get<std::size_t>();
    state.has_best = st.at("has_best").get<bool>();
    if (state.has_best) {
      state.best_val = st.at("best_val").get<double>();
      state.best_step = st.at("best_step").get<std::size_t>();
      state.evals_since_improve =
          st.at("evals_since_improve").get<std::size_t>();
      resumed_best_policy =
          aipo::load_policy(resume_dir + "/policy_best.ckpt").model;
      resumed_best_intents =
          aipo::load_intent_model(resume_dir + "/intent_best.ckpt");
      state.best_policy = &resumed_best_policy;
      state.best_intents = &resumed_best_intents;
    }
    m.inputs.push_back(resume_dir + "/policy_last.ckpt");
  }

  const aipo::TrainResult res = aipo::run_training(
      train_recs, eval_recs, std::move(policy), ref, std::move(intents),
      p.train, state);

  aipo::save_policy(out_dir + "/reference.ckpt", ref.model(), p.train.seed, 0);
  aipo::save_policy(out_dir + "/policy_best.ckpt", res.policy, p.train.seed,
                    static_cast<long>(res.best_step));
  aipo::save_policy(out_dir + "/policy_last.ckpt", res.final_policy,
                    p.train.seed, static_cast<long>(res.completed_steps));
  aipo::save_intent_model(out_dir + "/intent_best.ckpt", res.intents);
  aipo::save_intent_model(out_dir + "/intent_last.ckpt", res.final_intents);
  aipo::write_train_log_csv(out_dir + "/trainlog.csv", res.log);
  {
    json st;
    st["completed_steps"] = res.completed_steps;
    st["has_best"] = std::isfinite(res.best_val);
    st["best_val"] = std::isfinite(res.best_val) ? res.best_val : 0.0;
    st["best_step"] = res.best_step;
    st["evals_since_improve"] = res.evals_since_improve;
    std::ofstream out(out_dir + "/state.json");
    out << st.dump(2) << '\n';
  }
  for (const char* f : {"reference.ckpt", "policy_best.ckpt",
                        "policy_last.ckpt", "intent_best.ckpt",
                        "intent_last.ckpt", "trainlog.csv", "state.json"})
    m.add_output(out_dir + "/" + std::string(f));
  m.duration_seconds = clock.seconds();
  aipo::write_manifest(out_dir + "/manifest.json", m);
  std::cout << "trained " << aipo::to_string(p.train.loss.variant) << " for "
            << res.completed_steps << " steps; best step " << res.best_step
            << "\n";
  return 0;
}

int cmd_eval(const std::string& data_dir, const std::string& model_dir,
             const std::string& out_dir) {
  aipo::WallClock clock;
  const auto test = aipo::read_dataset(data_dir + "/test.jsonl");
  const aipo::PolicyModel policy =
      aipo::load_policy(model_dir + "/policy_best.ckpt").model;
  const aipo::ReferencePolicy ref(
      aipo::load_policy(model_dir + "/reference.ckpt").model);
  const aipo::IntentModel intents =
      aipo::load_intent_model(model_dir + "/intent_best.ckpt");

  const aipo::ConditionedPolicy cp{&policy, &intents};
  const aipo::ConditionedPolicy baseline{&ref.model(), nullptr};
  std::vector<int> baseline_responses(test.size());
  for (std::size_t i = 0; i < test.size(); ++i)
    baseline_responses[i] = baseline.argmax_response(test[i]);

  const aipo::MetricReport rep =
      aipo::slice_report(cp, &intents, test, baseline_responses);

  fs::create_directories(out_dir);
  {
    std::ofstream out(out_dir + "/metrics.json");
    if (!out) throw aipo::IoError("cannot write metrics.json");
    out << aipo::report_to_json(rep).dump(2) << '\n';
  }
  aipo::report_to_csv(rep, out_dir + "/slices.csv");

  aipo::RunManifest m;
  m.command = "eval";
  m.config_snapshot = {{"data", data_dir}, {"model", model_dir}};
  m.inputs = {data_dir + "/test.jsonl", model_dir + "/policy_best.ckpt"};
  m.add_output(out_dir + "/metrics.json");
  m.add_output(out_dir + "/slices.csv");
  m.duration_seconds = clock.seconds();
  aipo::write_manifest(out_dir + "/manifest.json", m);
  std::cout << aipo::report_to_json(rep)["overall"].dump() << "\n";
  return 0;
}

int cmd_verify(const std::string& out_dir, const std::string& mutate) {
  aipo::WallClock clock;
  const auto results =
      aipo::verify::run_property_suite(aipo::verify::fault_from_string(mutate));
  bool all_pass = true;
  json jr = json::array();
  for (const auto& r : results) {
    all_pass = all_pass && r.pass;
    std::cout << (r.pass ? "PASS " : "FAIL ") << r.name;
    if (!r.pass) std::cout << ": " << r.detail;
    std::cout << "\n";
    jr.push_back({{"name", r.name}, {"pass", r.pass}, {"detail", r.detail}});
  }
  std::cout << (all_pass ? "all properties hold" : "property failures above")
            << " (" << aipo::format_double(clock.seconds()) << "s)\n";
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    {
      std::ofstream out(out_dir + "/verify.json");
      out << jr.dump(2) << '\n';
    }
    aipo::RunManifest m;
    m.command = "verify";
    m.config_snapshot = {{"mutate", mutate}};
    m.add_output(out_dir + "/verify.json");
    m.duration_seconds = clock.seconds();
    aipo::write_manifest(out_dir + "/manifest.json", m);
  }
  return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"intent-aware preference optimization lab"};
  app.require_subcommand(1);

  std::string out_dir, config_path, data_dir, model_dir, resume_dir;
  std::string dataset_kind = "realpref";
  std::string loss_name, variant = "logit", mutate;
  std::uint64_t seed = 0;
  double beta = 0.1, lambda = 0.0, gamma = 0.0;

  auto* gen = app.add_subcommand("generate", "generate a synthetic corpus");
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--config", config_path, "generator config json");
  auto* gen_seed = gen->add_option("--seed", seed, "rng seed");
  gen->add_option("--dataset", dataset_kind,
                  "corpus kind: realpref|attackpref");

  auto* train = app.add_subcommand("train", "run the training workflow");
  train->add_option("--data", data_dir, "dataset directory")->required();
  train->add_option("--out", out_dir, "output directory")->required();
  train->add_option("--config", config_path, "trainer config json");
  auto* train_seed = train->add_option("--seed", seed, "rng seed");
  train->add_option("--loss", loss_name, "dpo|gdpo|aipo|aipo_separable|aipo_logit");
  train->add_option("--variant", variant, "aipo variant: logit|separable");
  auto* opt_beta =
      train->add_option("--beta", beta, "BT temperature")->check(CLI::PositiveNumber);
  auto* opt_lambda = train->add_option("--lambda", lambda, "similarity weight")
                         ->check(CLI::NonNegativeNumber);
  auto* opt_gamma = train->add_option("--gamma", gamma, "KL weight")
                        ->check(CLI::NonNegativeNumber);
  train->add_option("--resume", resume_dir, "resume from a run directory");

  auto* ev = app.add_subcommand("eval", "evaluate a trained run");
  ev->add_option("--data", data_dir, "dataset directory")->required();
  ev->add_option("--model", model_dir, "trained run directory")->required();
  ev->add_option("--out", out_dir, "output directory")->required();

  auto* ver = app.add_subcommand("verify", "run the property suite");
  ver->add_option("--out", out_dir, "optional report directory");
  ver->add_option("--mutate", mutate, "self-test fault id")
      ->group("");  // hidden: suite self-test hook

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed())
      return cmd_generate(out_dir, config_path, seed, gen_seed->count() > 0,
                          dataset_kind);
    if (train->parsed())
      return cmd_train(data_dir, out_dir, config_path, seed,
                       train_seed->count() > 0, loss_name, variant, beta,
                       lambda, gamma, opt_beta->count() > 0,
                       opt_lambda->count() > 0, opt_gamma->count() > 0,
                       resume_dir);
    if (ev->parsed()) return cmd_eval(data_dir, model_dir, out_dir);
    if (ver->parsed()) return cmd_verify(out_dir, mutate);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
