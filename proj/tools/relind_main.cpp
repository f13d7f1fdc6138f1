// relind: relation induction from a masked language model oracle.
//
//   relind run --config demo/demo.conf --out runs/demo
//   relind classify rome italy --relation capital_of --out runs/demo --fixture world.json
//
// Exit codes: 0 success, 1 configuration error, 2 data error, 3 oracle error.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "relind/relind.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
  std::string config_file;
  std::vector<std::pair<std::string, std::string>> overrides;
  bool json_output = false;
};

void add_setting_flag(CLI::App& app, Options& opts, const std::string& flag,
                      const std::string& key, const std::string& help) {
  app.add_option_function<std::string>(
      flag, [&opts, key](const std::string& v) { opts.overrides.emplace_back(key, v); }, help);
}

relind::RunConfig resolve_config(const Options& opts) {
  relind::RunConfig c;
  if (!opts.config_file.empty()) relind::load_config_file(c, opts.config_file);
  for (const auto& [k, v] : opts.overrides) relind::apply_setting(c, k, v, fs::current_path());
  return c;
}

void print_warnings(const relind::Diagnostics& diag) {
  for (const auto& w : diag.warnings()) std::cerr << "warning: " << w << '\n';
}

std::string pick_relation(const relind::Workspace& ws, const std::string& requested) {
  if (!requested.empty()) return requested;
  const auto rels = ws.relations();
  if (rels.size() != 1) {
    throw relind::ConfigError("workspace holds " + std::to_string(rels.size()) +
                              " relations; choose one with --relation");
  }
  return rels.front();
}

void emit(const Options& opts, const json& j, const std::string& text) {
  if (opts.json_output) {
    std::cout << j.dump(2) << '\n';
  } else {
    std::cout << text;
  }
}

json stage_summary(const std::string& stage, const relind::Workspace& ws,
                   const relind::Diagnostics& diag) {
  return {{"stage", stage}, {"output", ws.root().string()}, {"warnings", diag.warnings()}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Relation induction from a masked language model oracle"};
  app.require_subcommand(1);
  Options opts;

  app.add_option("--config", opts.config_file, "key = value configuration file");
  app.add_flag("--json", opts.json_output, "machine-readable output");
  add_setting_flag(app, opts, "--out", "output", "output directory");
  add_setting_flag(app, opts, "--corpus", "corpus", "corpus directory or file");
  add_setting_flag(app, opts, "--dataset", "dataset", "relation dataset");
  add_setting_flag(app, opts, "--format", "format", "dataset format: google|bats|diffvec|tsv");
  add_setting_flag(app, opts, "--fixture", "fixture", "fixture world JSON (oracle backend)");
  add_setting_flag(app, opts, "--remote", "remote", "oracle service URL (oracle backend)");
  add_setting_flag(app, opts, "--cache", "cache_dir", "on-disk oracle response cache");
  add_setting_flag(app, opts, "--workers", "workers", "worker threads");
  add_setting_flag(app, opts, "--seed", "seed", "global random seed");
  add_setting_flag(app, opts, "--k", "k", "top-k size for blank filling");
  add_setting_flag(app, opts, "--prefilter", "prefilter", "templates kept by the fast score");
  add_setting_flag(app, opts, "--top", "top", "templates kept by the slow score, or 'all'");
  add_setting_flag(app, opts, "--aggregation", "aggregation", "max or sum");
  add_setting_flag(app, opts, "--presplit", "presplit", "corpus has one sentence per line");
  add_setting_flag(app, opts, "--max-len", "max_len", "longest sentence in tokens");
  add_setting_flag(app, opts, "--max-window", "max_window", "most tokens between head and tail");
  add_setting_flag(app, opts, "--learning-rate", "learning_rate", "classifier learning rate");
  add_setting_flag(app, opts, "--epochs", "epochs", "training epochs");
  add_setting_flag(app, opts, "--batch-size", "batch_size", "training batch size");
  add_setting_flag(app, opts, "--weight-decay", "weight_decay", "decoupled weight decay");
  add_setting_flag(app, opts, "--warmup", "warmup_fraction", "warmup fraction of steps");
  add_setting_flag(app, opts, "--cross-ratio", "cross_ratio", "cross-pair negatives per positive");
  add_setting_flag(app, opts, "--csv", "csv", "also write report.csv (true/false)");

  auto* synth = app.add_subcommand("synth", "write a synthetic fixture world, corpus and dataset");
  relind::SyntheticSpec spec;
  std::string synth_dir = "synthetic";
  synth->add_option("dir", synth_dir, "destination directory")->required();
  synth->add_option("--relations", spec.relations, "relations (1-6)");
  synth->add_option("--facts", spec.facts_per_relation, "facts per relation");
  synth->add_option("--distractors", spec.distractors_per_relation, "distractor sentences per relation");
  synth->add_option("--noise", spec.noise_rate, "fixture noise rate");
  synth->add_option("--world-seed", spec.seed, "generator seed");

  auto* split = app.add_subcommand("split", "split the dataset into fit/tune/test pairs");
  auto* mine = app.add_subcommand("mine", "mine templates for the fit pairs (or --seeds)");
  std::string seeds_file;
  mine->add_option("--seeds", seeds_file, "seed TSV relation<TAB>head<TAB>tail");
  auto* filter = app.add_subcommand("filter", "score and select templates");
  auto* train = app.add_subcommand("train", "train one classifier per relation");

  std::string relation, head_word, tail_word, sentence;
  auto* classify = app.add_subcommand("classify", "classify a word pair");
  classify->add_option("head", head_word)->required();
  classify->add_option("tail", tail_word)->required();
  classify->add_option("--relation", relation);
  auto* links = app.add_subcommand("links", "rank tail candidates for a head word");
  links->add_option("head", head_word)->required();
  links->add_option("--relation", relation);
  auto* probe = app.add_subcommand("probe", "fill the [MASK] in a sentence");
  probe->add_option("sentence", sentence)->required();
  auto* eval = app.add_subcommand("eval", "evaluate trained models on the test split");
  auto* run = app.add_subcommand("run", "split, mine, filter, train and evaluate");

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  CLI11_PARSE(app, argc, argv);

  relind::Diagnostics diag;
  try {
    auto config = resolve_config(opts);
    const relind::Workspace ws(config.output);

    if (synth->parsed()) {
      auto data = relind::make_synthetic(spec);
      const fs::path dir = synth_dir;
      fs::create_directories(dir / "corpus");
      std::ofstream(dir / "world.json") << relind::world_to_json(data.world).dump(2) << '\n';
      for (const auto& doc : data.corpus) std::ofstream(dir / "corpus" / doc.id) << doc.text;
      std::ofstream ds(dir / "dataset.tsv");
      for (const auto& [rel, pairs] : data.relations) {
        for (const auto& p : pairs) ds << rel << '\t' << p.head << '\t' << p.tail << '\n';
      }
      std::ofstream(dir / "demo.conf")
          << "# synthetic fixture demo\ncorpus = corpus\ndataset = dataset.tsv\nformat = tsv\n"
             "fixture = world.json\npresplit = true\nk = 10\nprefilter = 1000\ntop = 10\n"
             "aggregation = max\nseed = 1\nlearning_rate = 0.05\nepochs = 20\n";
      emit(opts, {{"dir", dir.string()}, {"relations", data.relations.size()}},
           "wrote " + dir.string() + "\n");
      return 0;
    }

    if (probe->parsed()) {
      const relind::OracleStack oracles(config);
      const auto query = relind::MaskedQuery::parse(sentence);
      const auto answer = relind::probe(oracles.oracle(), query);
      emit(opts, {{"query", query.text()}, {"prediction", answer}}, answer + "\n");
      return 0;
    }

    if (split->parsed()) {
      relind::run_stage("split", [&] { relind::pipeline_split(config, ws, &diag); });
      print_warnings(diag);
      emit(opts, stage_summary("split", ws, diag), "splits written to " + ws.root().string() + "/splits\n");
      return 0;
    }

    if (mine->parsed()) {
      if (!seeds_file.empty()) {
        const auto seeds = relind::load_seeds(seeds_file);
        std::vector<std::string> names;
        for (const auto& [rel, s] : seeds) {
          names.push_back(rel);
          ws.write_pairs(rel, "fit", s.pairs);
        }
        ws.write_index(names);
      }
      relind::run_stage("mine", [&] { relind::pipeline_mine(config, ws, &diag); });
      print_warnings(diag);
      json counts = json::object();
      std::string text;
      for (const auto& rel : ws.relations()) {
        std::ifstream in(ws.templates_file(rel));
        const auto n = relind::read_templates_jsonl(in).size();
        counts[rel] = n;
        text += rel + ": " + std::to_string(n) + " templates\n";
      }
      auto j = stage_summary("mine", ws, diag);
      j["templates"] = counts;
      emit(opts, j, text);
      return 0;
    }

    if (filter->parsed() || train->parsed() || eval->parsed() || classify->parsed() ||
        links->parsed()) {
      config.validate();
    }

    if (filter->parsed()) {
      const relind::OracleStack oracles(config);
      relind::run_stage("filter", [&] { relind::pipeline_filter(config, ws, oracles.oracle(), &diag); });
      print_warnings(diag);
      emit(opts, stage_summary("filter", ws, diag), "selected templates written to " + ws.root().string() + "/filtered\n");
      return 0;
    }

    if (train->parsed()) {
      const relind::OracleStack oracles(config);
      relind::run_stage("train", [&] { relind::pipeline_train(config, ws, oracles.oracle(), &diag); });
      print_warnings(diag);
      emit(opts, stage_summary("train", ws, diag), "models written to " + ws.root().string() + "/models\n");
      return 0;
    }

    if (classify->parsed()) {
      const relind::OracleStack oracles(config);
      const auto rel = pick_relation(ws, relation);
      const auto model = relind::load_model(ws, rel);
      const auto pair = relind::WordPair::make(head_word, tail_word);
      const auto score = relind::predict_pair(model, pair, oracles.oracle(), &diag);
      print_warnings(diag);
      std::ostringstream text;
      text << std::fixed << std::setprecision(4);
      text << "relation " << rel << "  pair " << relind::to_string(pair) << '\n';
      json per = json::array();
      for (std::size_t i = 0; i < score.per_template.size(); ++i) {
        text << "  " << score.per_template[i] << "  " << model.templates[i].text() << '\n';
        per.push_back({{"template", model.templates[i].text()}, {"p", score.per_template[i]}});
      }
      const double sum = std::accumulate(score.per_template.begin(), score.per_template.end(), 0.0);
      text << "max-rule: " << (score.decision_max ? "positive" : "negative") << '\n';
      if (score.decision_sum) {
        text << "sum-rule: " << (*score.decision_sum ? "positive" : "negative") << " (sum "
             << sum << ", lambda " << *model.lambda << ")\n";
      } else {
        text << "sum-rule: unavailable (no tuned lambda)\n";
      }
      json j{{"relation", rel},
             {"pair", pair},
             {"per_template", per},
             {"decision_max", score.decision_max},
             {"sum", sum},
             {"decision_sum", score.decision_sum ? json(*score.decision_sum) : json(nullptr)}};
      emit(opts, j, text.str());
      return 0;
    }

    if (links->parsed()) {
      const relind::OracleStack oracles(config);
      const auto rel = pick_relation(ws, relation);
      const auto model = relind::load_model(ws, rel);
      const auto head = relind::tokenize(head_word);
      if (head.size() != 1) throw relind::DataError("head must be a single token");
      const auto ranked = relind::predict_links(model, head.front(), oracles.oracle(),
                                                config.eval.filter.k, &diag);
      print_warnings(diag);
      std::ostringstream text;
      text << std::fixed << std::setprecision(3);
      json arr = json::array();
      for (const auto& c : ranked) {
        text << std::setw(8) << c.votes << "  " << c.token << '\n';
        arr.push_back({{"token", c.token}, {"votes", c.votes}});
      }
      emit(opts, {{"relation", rel}, {"head", head.front()}, {"candidates", arr}}, text.str());
      return 0;
    }

    if (eval->parsed() || run->parsed()) {
      const auto started = std::chrono::steady_clock::now();
      relind::EvalReport report;
      if (run->parsed()) {
        report = relind::run_pipeline(config, &diag);
      } else {
        const relind::OracleStack oracles(config);
        report = relind::run_stage(
            "eval", [&] { return relind::pipeline_eval(config, ws, oracles.oracle(), &diag); });
      }
      print_warnings(diag);
      const auto secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      std::cerr << "finished in " << std::fixed << std::setprecision(2) << secs << " s\n";
      emit(opts, relind::report_to_json(report), relind::report_to_table(report));
      return 0;
    }
  } catch (const relind::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const relind::OracleError& e) {
    std::cerr << "oracle error: " << e.what() << '\n';
    return 3;
  } catch (const relind::InvalidQuery& e) {
    std::cerr << "invalid query: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
