#include <fcntl.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "detox.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace detox;

namespace {

// ---------------------------------------------------------------------------
// small io helpers

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::Io, "failed writing " + path.string());
}

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
  std::string text;
  for (const auto& l : lines) text += l + '\n';
  write_text(path, text);
}

void write_json(const fs::path& path, const ordered_json& j) { write_text(path, j.dump(2) + "\n"); }

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Refuses to share an output directory with a concurrent run.
class OutputLock {
 public:
  explicit OutputLock(const fs::path& dir) : path_(dir / ".lock") {
    fs::create_directories(dir);
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) {
      throw Error(ErrorCode::Io, "output directory " + dir.string() + " is locked by another run (remove " +
                                     path_.string() + " if that run is gone)");
    }
    const std::string pid = std::to_string(::getpid()) + "\n";
    if (::write(fd_, pid.data(), pid.size()) < 0) {
      // the lock still holds; the pid is informational
    }
  }
  ~OutputLock() {
    ::close(fd_);
    std::error_code ec;
    fs::remove(path_, ec);
  }
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  fs::path path_;
  int fd_ = -1;
};

std::string valid_methods() {
  std::string s;
  for (Method m : kAllMethods) s += (s.empty() ? "" : ", ") + std::string(to_string(m));
  return s;
}

Method require_method(const std::string& name) {
  auto m = parse_method(name);
  if (!m) throw Error(ErrorCode::InvalidConfig, "unknown method '" + name + "'; valid methods: " + valid_methods());
  return *m;
}

bool is_adapter(const std::string& s) { return s.rfind("adapter:", 0) == 0; }

[[noreturn]] void adapter_resource_unavailable(const std::string& kind, const std::string& spec) {
  const fs::path root = adapter_root();
  throw Error(ErrorCode::AdapterUnavailable,
              kind + " '" + spec.substr(8) + "' is not available at " +
                  (root.empty() ? std::string("(") + kAdapterDirEnv + " unset)" : (root / spec.substr(8)).string()));
}

ToxicityClassifier load_classifier(const fs::path& path) {
  auto loaded = load_model_with_metadata(path);
  auto role = loaded.metadata.find("role");
  if (role == loaded.metadata.end() || role->second != "classifier") {
    throw Error(ErrorCode::InvalidConfig, path.string() + " is not a classifier model");
  }
  auto fp = loaded.metadata.find("fingerprint");
  return ToxicityClassifier(std::move(loaded.model), fp == loaded.metadata.end() ? "" : fp->second);
}

void save_classifier(const ClassifierTraining& t, const fs::path& path) {
  ModelMetadata meta{{"role", "classifier"}, {"fingerprint", t.classifier.fingerprint()}};
  if (t.dev_accuracy) meta["dev_accuracy"] = fmt(*t.dev_accuracy);
  save_model(t.classifier.model(), path, meta);
}

std::function<void(const EpochLog&)> progress(std::string label, std::size_t epochs) {
  return [label = std::move(label), epochs](const EpochLog& e) {
    std::fprintf(stderr, "[%s] epoch %zu/%zu loss %.4f\n", label.c_str(), e.epoch, epochs, e.loss.total);
  };
}

std::vector<std::string> texts_of(const std::vector<ParallelPair>& pairs) {
  std::vector<std::string> out;
  for (const auto& p : pairs) {
    out.push_back(p.toxic);
    out.push_back(p.civil);
  }
  return out;
}

// ---------------------------------------------------------------------------
// run configuration

const char* const kPathKeys[] = {"split", "aux_split", "lexicon", "out"};

ordered_json default_config() {
  return ordered_json{
      {"method", "seq2seq"},
      {"seed", nullptr},
      {"split", nullptr},
      {"aux_split", nullptr},
      {"backbone", "micro"},
      {"embed", 32},
      {"hidden", 64},
      {"max_len", 64},
      {"attention", true},
      {"dropout", 0.1},
      {"optimizer", "adam"},
      {"epochs", 5},
      {"stage1_epochs", nullptr},
      {"lr", 1e-5},
      {"batch_size", 3},
      {"l2", 0.01},
      {"aux_weight", 1.0},
      {"lambda", 1.0},
      {"threshold", 0.5},
      {"classifier", "micro"},
      {"classifier_epochs", 5},
      {"classifier_lr", 1e-5},
      {"classifier_batch_size", 3},
      {"embedder", "hashed"},
      {"embed_dim", 256},
      {"lm", "unigram"},
      {"ref", "source"},
      {"baselines", ordered_json::array()},
      {"lexicon", nullptr},
      {"export_human_eval", 0},
      {"out", nullptr},
  };
}

struct RunConfig {
  ordered_json resolved;
  Method method = Method::seq2seq;
  std::uint64_t seed = 0;
  fs::path split, aux_split, out;
  std::optional<fs::path> lexicon;
  std::string backbone, classifier, embedder, lm;
  MicroConfig model;
  MethodConfig train;
  ClassifierConfig clf;
  std::size_t embed_dim = 256;
  ReferenceMode ref = ReferenceMode::source;
  std::vector<std::string> baselines;
  std::size_t export_human_eval = 0;
};

template <class T>
T get(const ordered_json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("config key '") + key + "': " + e.what());
  }
}

std::size_t get_count(const ordered_json& j, const char* key) {
  const auto& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw Error(ErrorCode::InvalidConfig, std::string("config key '") + key + "' must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

ordered_json load_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open config " + path.string());
  ordered_json j = ordered_json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw Error(ErrorCode::InvalidConfig, path.string() + " is not a JSON object");
  const fs::path base = path.parent_path();
  for (const char* key : kPathKeys) {
    if (j.contains(key) && j[key].is_string()) {
      const fs::path p = j[key].get<std::string>();
      if (p.is_relative()) j[key] = (base / p).lexically_normal().string();
    }
  }
  if (j.contains("classifier") && j["classifier"].is_string()) {
    const std::string c = j["classifier"];
    if (c != "micro" && !is_adapter(c) && fs::path(c).is_relative()) {
      j["classifier"] = (base / c).lexically_normal().string();
    }
  }
  return j;
}

RunConfig resolve(const ordered_json& file, const ordered_json& flags) {
  ordered_json j = default_config();
  for (const ordered_json* layer : {&file, &flags}) {
    for (auto it = layer->begin(); it != layer->end(); ++it) {
      if (!j.contains(it.key())) throw Error(ErrorCode::InvalidConfig, "unknown config key '" + it.key() + "'");
      j[it.key()] = it.value();
    }
  }
  RunConfig c;
  c.resolved = j;
  c.method = require_method(get<std::string>(j, "method"));
  if (j["seed"].is_null()) throw Error(ErrorCode::InvalidConfig, "a seed is required (config key 'seed' or --seed)");
  c.seed = get<std::uint64_t>(j, "seed");
  if (j["split"].is_null()) throw Error(ErrorCode::InvalidConfig, "config key 'split' (a split directory) is required");
  if (j["out"].is_null()) throw Error(ErrorCode::InvalidConfig, "an output directory is required (key 'out' or --out)");
  c.split = get<std::string>(j, "split");
  c.out = get<std::string>(j, "out");
  if (!j["aux_split"].is_null()) c.aux_split = get<std::string>(j, "aux_split");
  if (!j["lexicon"].is_null()) c.lexicon = fs::path(get<std::string>(j, "lexicon"));

  c.backbone = get<std::string>(j, "backbone");
  c.classifier = get<std::string>(j, "classifier");
  c.embedder = get<std::string>(j, "embedder");
  c.lm = get<std::string>(j, "lm");
  if (c.backbone != "micro" && !is_adapter(c.backbone)) {
    throw Error(ErrorCode::InvalidConfig, "backbone must be 'micro' or 'adapter:<id>'");
  }
  if (c.embedder != "hashed" && !is_adapter(c.embedder)) {
    throw Error(ErrorCode::InvalidConfig, "embedder must be 'hashed' or 'adapter:<id>'");
  }
  if (c.lm != "unigram" && !is_adapter(c.lm)) throw Error(ErrorCode::InvalidConfig, "lm must be 'unigram' or 'adapter:<id>'");

  c.model.embed = get_count(j, "embed");
  c.model.hidden = get_count(j, "hidden");
  c.model.max_len = get_count(j, "max_len");
  c.model.attention = get<bool>(j, "attention");
  c.model.dropout = get<double>(j, "dropout");
  c.model.seed = c.seed;

  const std::string opt = get<std::string>(j, "optimizer");
  if (opt != "adam" && opt != "sgd") throw Error(ErrorCode::InvalidConfig, "optimizer must be 'adam' or 'sgd'");
  c.train.method = c.method;
  c.train.seed = c.seed;
  c.train.epochs = get_count(j, "epochs");
  if (!j["stage1_epochs"].is_null()) c.train.stage1_epochs = get_count(j, "stage1_epochs");
  c.train.batch_size = get_count(j, "batch_size");
  c.train.optimizer.kind = opt == "adam" ? OptimizerKind::adam : OptimizerKind::sgd;
  c.train.optimizer.lr = get<double>(j, "lr");
  c.train.optimizer.l2 = get<double>(j, "l2");
  c.train.aux_weight = get<double>(j, "aux_weight");
  c.train.lambda = get<double>(j, "lambda");
  c.train.threshold = get<double>(j, "threshold");
  c.train.validate();

  c.clf.epochs = get_count(j, "classifier_epochs");
  c.clf.batch_size = get_count(j, "classifier_batch_size");
  c.clf.optimizer = c.train.optimizer;
  c.clf.optimizer.lr = get<double>(j, "classifier_lr");
  c.clf.seed = c.seed;

  c.embed_dim = get_count(j, "embed_dim");
  const auto ref = parse_reference_mode(get<std::string>(j, "ref"));
  if (!ref) throw Error(ErrorCode::InvalidConfig, "ref must be 'source' or 'gold'");
  c.ref = *ref;
  c.baselines = get<std::vector<std::string>>(j, "baselines");
  for (const auto& b : c.baselines) {
    if (b != "duplicate" && b != "delete") throw Error(ErrorCode::InvalidConfig, "unknown baseline '" + b + "'");
    if (b == "delete" && !c.lexicon) throw Error(ErrorCode::InvalidConfig, "the delete baseline needs 'lexicon'");
  }
  c.export_human_eval = get_count(j, "export_human_eval");

  auto must_exist = [](const fs::path& p, const std::string& what) {
    if (!fs::exists(p)) throw Error(ErrorCode::Io, what + " " + p.string() + " does not exist");
  };
  must_exist(c.split / "train.jsonl", "split file");
  if (c.method == Method::kt) {
    if (c.aux_split.empty()) throw Error(ErrorCode::InvalidConfig, "method kt needs 'aux_split'");
    must_exist(c.aux_split / "train.jsonl", "auxiliary split file");
  }
  if (c.lexicon) must_exist(*c.lexicon, "lexicon");
  if (c.classifier != "micro" && !is_adapter(c.classifier)) must_exist(c.classifier, "classifier model");
  return c;
}

// ---------------------------------------------------------------------------
// commands

int cmd_curate(const fs::path& raw, const fs::path& out, const std::string& policy_name, fs::path report) {
  const auto policy = parse_policy(policy_name);
  if (!policy) throw Error(ErrorCode::InvalidConfig, "policy must be annotated, first or shortest");
  LoadStats stats;
  const auto records = load_raw(raw, &stats);
  std::size_t replacements = 0;
  std::vector<ParallelPair> pairs;
  pairs.reserve(records.size());
  for (const auto& r : records) pairs.push_back(select_pair(r, *policy, &replacements));
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_pairs(pairs, out);
  if (report.empty()) report = out.string() + ".report.json";
  ordered_json rep{{"input", raw.string()},         {"policy", policy_name},
                   {"lines_in", stats.lines},       {"records", stats.records},
                   {"merges", stats.merges},        {"pairs_out", pairs.size()},
                   {"placeholder_replacements", replacements}};
  write_json(report, rep);
  std::fprintf(stderr, "curate: %zu lines -> %zu pairs (%zu merges, %zu number placeholders)\n", stats.lines,
               pairs.size(), stats.merges, replacements);
  return 0;
}

SplitSizes parse_sizes(const std::string& s) {
  std::vector<std::size_t> v;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) {
    try {
      std::size_t used = 0;
      const long long n = std::stoll(part, &used);
      if (used != part.size() || n < 0) throw std::invalid_argument(part);
      v.push_back(static_cast<std::size_t>(n));
    } catch (const std::exception&) {
      throw Error(ErrorCode::InvalidConfig, "bad split size '" + part + "'");
    }
  }
  if (v.size() != 3) throw Error(ErrorCode::InvalidConfig, "sizes must be train,dev,test");
  return {v[0], v[1], v[2]};
}

int cmd_split(const fs::path& pairs_path, const fs::path& out, const std::string& sizes, std::uint64_t seed) {
  const auto split = split_corpus(load_pairs(pairs_path), parse_sizes(sizes), seed);
  write_split(split, out);
  std::fprintf(stderr, "split: %zu/%zu/%zu pairs written to %s\n", split.train.size(), split.dev.size(),
               split.test.size(), out.string().c_str());
  return 0;
}

struct TrainedClassifier {
  ToxicityClassifier classifier;
  std::string reference;  // stored in the detox model's metadata
  std::optional<double> dev_accuracy;
};

TrainedClassifier obtain_classifier(const RunConfig& c, const CorpusSplit& split, const Vocab& vocab) {
  if (is_adapter(c.classifier)) adapter_resource_unavailable("classifier adapter", c.classifier);
  if (c.classifier != "micro") {
    const fs::path p = fs::absolute(c.classifier).lexically_normal();
    return {load_classifier(p), p.string(), std::nullopt};
  }
  ClassifierConfig cc = c.clf;
  cc.model = c.model;
  cc.model.vocab_size = vocab.size();
  auto training = train_toxicity_classifier(split, vocab, cc);
  save_classifier(training, c.out / "classifier.bin");
  write_loss_log(training.log, c.out / "classifier_losses.csv");
  if (training.dev_accuracy) std::fprintf(stderr, "classifier dev accuracy %.1f\n", *training.dev_accuracy);
  return {std::move(training.classifier), "classifier.bin", training.dev_accuracy};
}

int cmd_train(const fs::path& config_path, const ordered_json& flags) {
  const ordered_json file = config_path.empty() ? ordered_json::object() : load_config_file(config_path);
  const RunConfig c = resolve(file, flags);
  OutputLock lock(c.out);
  write_json(c.out / "config.resolved.json", c.resolved);
  ordered_json fp_source = c.resolved;
  fp_source.erase("out");
  const std::string fingerprint = config_fingerprint(fp_source);

  const CorpusSplit split = load_split(c.split);
  CorpusSplit aux;
  if (c.method == Method::kt) aux = load_split(c.aux_split);
  if (is_adapter(c.backbone)) {
    // Runs the generic training path so the adapter reports itself.
    MethodConfig mc = c.train;
    if (c.method == Method::kt) {
      train_kt(aux, split, mc, PretrainedAdapter(c.backbone.substr(8)));
    } else {
      mc.method = Method::seq2seq;
      train_method(split, mc, PretrainedAdapter(c.backbone.substr(8)));
    }
    throw Error(ErrorCode::AdapterUnavailable, "adapter backbone produced no model");
  }
  if (is_adapter(c.embedder)) adapter_resource_unavailable("embedder adapter", c.embedder);
  if (is_adapter(c.lm)) adapter_resource_unavailable("language model adapter", c.lm);

  auto vocab_pairs = split.train;
  vocab_pairs.insert(vocab_pairs.end(), aux.train.begin(), aux.train.end());
  const Vocab vocab = build_vocab(vocab_pairs);
  MicroConfig mcfg = c.model;
  mcfg.vocab_size = vocab.size();
  const MicroModel init(mcfg, vocab);

  const bool needs_classifier = c.method == Method::del_recon || !split.test.empty();
  std::optional<TrainedClassifier> clf;
  if (needs_classifier) clf = obtain_classifier(c, split, vocab);

  MethodConfig mc = c.train;
  const std::string method_name(to_string(c.method));
  mc.on_epoch = progress(method_name, c.train.epochs);
  ModelMetadata meta{{"role", "detox"},
                     {"method", method_name},
                     {"threshold", fmt(c.train.threshold)},
                     {"config_fingerprint", fingerprint}};
  if (clf) meta["classifier"] = clf->reference;

  MicroModel model = init;
  LossLog log;
  if (c.method == Method::kt) {
    MethodConfig kc = mc;
    kc.on_epoch = progress("kt stage1", c.train.stage1_epochs.value_or(c.train.epochs));
    auto r = train_kt(aux, split, kc, init, [&](const MicroModel& m, std::string_view stage) {
      ModelMetadata sm = meta;
      sm["stage"] = std::string(stage);
      save_model(m, c.out / (std::string(stage) + ".bin"), sm);
    });
    write_loss_log(r.stage1_log, c.out / "losses_stage1.csv");
    model = std::move(r.model);
    log = std::move(r.stage2_log);
  } else if (c.method == Method::del_recon) {
    auto r = train_del_recon(split, clf->classifier, mc, init, c.out / "deletion_cache.jsonl");
    for (const auto& w : r.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
    model = std::move(r.model);
    log = std::move(r.log);
  } else {
    auto r = train_method(split, mc, init);
    model = std::move(r.model);
    log = std::move(r.log);
  }
  save_model(model, c.out / "model.bin", meta);
  write_loss_log(log, c.out / "losses.csv");

  if (split.test.empty()) {
    std::fprintf(stderr, "warning: test split is empty; skipping outputs and report\n");
    return 0;
  }
  std::vector<std::pair<std::string, std::vector<std::string>>> systems;
  std::vector<std::string> outputs;
  for (const auto& p : split.test) {
    outputs.push_back(c.method == Method::del_recon
                          ? detoxify_filtered(model, clf->classifier, c.train.threshold, p.toxic)
                          : detoxify(model, p.toxic));
  }
  write_lines(c.out / "outputs.txt", outputs);
  systems.emplace_back(method_name, std::move(outputs));
  std::optional<ToxicLexicon> lexicon;
  if (c.lexicon) lexicon = load_lexicon(*c.lexicon, std::string(to_string(split.test.front().lang)));
  for (const auto& b : c.baselines) {
    std::vector<std::string> outs;
    for (const auto& p : split.test) outs.push_back(b == "duplicate" ? duplicate(p.toxic) : delete_lexicon(p.toxic, *lexicon));
    systems.emplace_back(b, std::move(outs));
  }

  const HashedBagEmbedder embedder(c.embed_dim);
  const UnigramLM lm(texts_of(split.train));
  const EvalResources res{clf->classifier, embedder, lm};
  EvalReport report;
  report.reference = c.ref;
  report.fingerprint = fingerprint;
  for (const auto& [name, outs] : systems) report.rows.push_back(evaluate_system(name, outs, split.test, res, c.ref));
  ordered_json rj = report.to_json();
  rj["classifier"] = {{"source", clf->reference},
                      {"dev_accuracy", clf->dev_accuracy ? ordered_json(*clf->dev_accuracy) : ordered_json(nullptr)}};
  write_json(c.out / "report.json", rj);
  write_text(c.out / "report.md", report.to_markdown());
  if (c.export_human_eval > 0) {
    export_human_eval(systems, split.test, c.export_human_eval, c.seed, c.out / "human_eval.csv",
                      c.out / "human_eval_key.csv");
  }
  std::cout << report.to_markdown();
  return 0;
}

int cmd_train_classifier(const fs::path& split_dir, const fs::path& out, const ordered_json& flags) {
  ordered_json f = flags;
  f["split"] = split_dir.string();
  f["out"] = out.parent_path().empty() ? "." : out.parent_path().string();
  const RunConfig c = resolve(ordered_json::object(), f);
  const CorpusSplit split = load_split(c.split);
  const Vocab vocab = build_vocab(split.train);
  ClassifierConfig cc = c.clf;
  cc.model = c.model;
  cc.model.vocab_size = vocab.size();
  auto t = train_toxicity_classifier(split, vocab, cc);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_classifier(t, out);
  if (t.dev_accuracy) std::fprintf(stderr, "classifier dev accuracy %.1f\n", *t.dev_accuracy);
  return 0;
}

struct DetoxifyArgs {
  std::string model, system, text, input, output, lexicon, classifier, lang = "en";
  std::optional<double> threshold;
  bool has_text = false;
};

int cmd_detoxify(const DetoxifyArgs& a) {
  if (a.has_text == !a.input.empty()) throw Error(ErrorCode::InvalidConfig, "give exactly one of --text or --input");
  std::vector<std::string> inputs = a.has_text ? std::vector<std::string>{a.text} : read_lines(a.input);
  std::function<std::string(const std::string&)> run;
  std::optional<ToxicLexicon> lexicon;
  std::optional<LoadedModel> loaded;
  std::optional<ToxicityClassifier> clf;
  double tau = a.threshold.value_or(0.5);
  if (!a.system.empty()) {
    if (!a.model.empty()) throw Error(ErrorCode::InvalidConfig, "--system and --model are exclusive");
    if (a.system == "duplicate") {
      run = [](const std::string& t) { return duplicate(t); };
    } else if (a.system == "delete") {
      if (a.lexicon.empty()) throw Error(ErrorCode::InvalidConfig, "--system delete needs --lexicon");
      lexicon = load_lexicon(a.lexicon, a.lang);
      run = [&](const std::string& t) { return delete_lexicon(t, *lexicon); };
    } else {
      throw Error(ErrorCode::InvalidConfig, "unknown system '" + a.system + "'; valid systems: duplicate, delete");
    }
  } else {
    if (a.model.empty()) throw Error(ErrorCode::InvalidConfig, "give --model or --system");
    loaded = load_model_with_metadata(a.model);
    const auto& meta = loaded->metadata;
    if (meta.count("role") && meta.at("role") == "classifier") {
      throw Error(ErrorCode::InvalidConfig, a.model + " is a classifier, not a detox model");
    }
    if (meta.count("method") && meta.at("method") == "del_recon") {
      fs::path cpath = a.classifier;
      if (cpath.empty()) {
        if (!meta.count("classifier")) throw Error(ErrorCode::InvalidConfig, "del_recon model needs --classifier");
        cpath = meta.at("classifier");
        if (cpath.is_relative()) cpath = fs::path(a.model).parent_path() / cpath;
      }
      clf = load_classifier(cpath);
      if (!a.threshold && meta.count("threshold")) tau = std::stod(meta.at("threshold"));
      run = [&](const std::string& t) { return detoxify_filtered(loaded->model, *clf, tau, t); };
    } else {
      run = [&](const std::string& t) { return detoxify(loaded->model, t); };
    }
  }
  std::vector<std::string> outputs;
  outputs.reserve(inputs.size());
  for (const auto& t : inputs) outputs.push_back(run(t));
  if (!a.output.empty()) {
    write_lines(a.output, outputs);
  } else {
    for (const auto& o : outputs) std::cout << o << '\n';
  }
  return 0;
}

struct EvaluateArgs {
  std::vector<std::string> systems;
  std::string test, classifier, lm_train, ref = "source", out;
  std::size_t export_human_eval = 0;
  std::optional<std::uint64_t> seed;
  std::size_t embed_dim = 256;
};

int cmd_evaluate(const EvaluateArgs& a) {
  const auto ref = parse_reference_mode(a.ref);
  if (!ref) throw Error(ErrorCode::InvalidConfig, "--ref must be source or gold");
  if (a.export_human_eval > 0 && !a.seed) throw Error(ErrorCode::InvalidConfig, "--export-human-eval needs --seed");
  const auto test = load_pairs(a.test);
  std::vector<std::pair<std::string, std::vector<std::string>>> systems;
  for (const auto& s : a.systems) {
    const auto eq = s.find('=');
    const fs::path path = eq == std::string::npos ? s : s.substr(eq + 1);
    const std::string name = eq == std::string::npos ? path.stem().string() : s.substr(0, eq);
    auto lines = read_lines(path);
    if (lines.size() != test.size()) {
      throw Error(ErrorCode::LengthMismatch, "system " + name + " has " + std::to_string(lines.size()) +
                                                 " lines but the test set has " + std::to_string(test.size()));
    }
    systems.emplace_back(name, std::move(lines));
  }
  const ToxicityClassifier clf = load_classifier(a.classifier);
  const HashedBagEmbedder embedder(a.embed_dim);
  const UnigramLM lm(texts_of(load_pairs(a.lm_train)));
  OutputLock lock(a.out);
  EvalReport report;
  report.reference = *ref;
  ordered_json fp{{"test", split_fingerprint(test)}, {"classifier", clf.fingerprint()}, {"ref", a.ref}};
  report.fingerprint = config_fingerprint(fp);
  for (const auto& [name, outs] : systems) {
    report.rows.push_back(evaluate_system(name, outs, test, {clf, embedder, lm}, *ref));
    for (const auto& w : report.rows.back().warnings) std::fprintf(stderr, "warning: %s: %s\n", name.c_str(), w.c_str());
  }
  write_json(fs::path(a.out) / "report.json", report.to_json());
  write_text(fs::path(a.out) / "report.md", report.to_markdown());
  if (a.export_human_eval > 0) {
    export_human_eval(systems, test, a.export_human_eval, *a.seed, fs::path(a.out) / "human_eval.csv",
                      fs::path(a.out) / "human_eval_key.csv");
  }
  std::cout << report.to_markdown();
  return 0;
}

int cmd_toy(const fs::path& out, std::uint64_t seed) {
  fs::create_directories(out);
  write_split(split_corpus(toy::detox_corpus(), toy::kSplitSizes, seed), out / "detox");
  write_split(split_corpus(toy::aux_corpus(), toy::kAuxSplitSizes, seed), out / "aux");
  write_lines(out / "lexicon.txt", toy::planted_words());
  ordered_json cfg{{"method", "seq2seq"},
                   {"seed", seed},
                   {"split", "detox"},
                   {"aux_split", "aux"},
                   {"max_len", 24},
                   {"epochs", 30},
                   {"lr", 1e-2},
                   {"batch_size", 8},
                   {"classifier_epochs", 10},
                   {"classifier_lr", 1e-2},
                   {"classifier_batch_size", 8},
                   {"baselines", {"duplicate", "delete"}},
                   {"lexicon", "lexicon.txt"},
                   {"export_human_eval", 50},
                   {"out", "run"}};
  write_json(out / "config.json", cfg);
  std::fprintf(stderr, "toy workspace written to %s\n", out.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Toxic-to-civil text rewriting: curation, training, inference and evaluation"};
  app.require_subcommand(1);

  auto* curate = app.add_subcommand("curate", "Turn raw annotated records into a parallel pair file");
  std::string raw, curate_out, policy = "annotated", report;
  curate->add_option("--raw", raw, "Raw JSONL records")->required();
  curate->add_option("--out", curate_out, "Pair file to write")->required();
  curate->add_option("--policy", policy, "annotated | first | shortest")->capture_default_str();
  curate->add_option("--report", report, "Curation report (default: <out>.report.json)");

  auto* split = app.add_subcommand("split", "Seeded train/dev/test split");
  std::string pairs, split_out, sizes = "508,100,500";
  std::uint64_t split_seed = 0;
  split->add_option("--pairs", pairs, "Pair file")->required();
  split->add_option("--out", split_out, "Output directory")->required();
  split->add_option("--sizes", sizes, "train,dev,test")->capture_default_str();
  split->add_option("--seed", split_seed, "Shuffle seed")->required();

  // Flags shared by train and train-classifier; each maps to a config key.
  std::optional<std::string> f_method, f_out, f_ref, f_split, f_aux, f_classifier, f_lexicon, f_backbone;
  std::optional<std::uint64_t> f_seed;
  std::optional<std::size_t> f_epochs, f_batch, f_export;
  std::optional<double> f_lr, f_lambda, f_aux_weight, f_threshold;
  std::string config;

  auto* train = app.add_subcommand("train", "Train one method and write the run directory");
  train->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  train->add_option("--config", config, "Run config (JSON)");
  train->add_option("--method", f_method, "seq2seq | kt | mt_cls_ip | mt_cls_gr_ip | mt_cls_op | del_recon");
  train->add_option("--seed", f_seed);
  train->add_option("--epochs", f_epochs);
  train->add_option("--lr", f_lr);
  train->add_option("--batch-size", f_batch);
  train->add_option("--lambda", f_lambda);
  train->add_option("--aux-weight", f_aux_weight);
  train->add_option("--threshold", f_threshold);
  train->add_option("--ref", f_ref, "source | gold");
  train->add_option("--export-human-eval", f_export, "Rows per system in human_eval.csv");
  train->add_option("--out", f_out, "Output directory");
  train->add_option("--split", f_split, "Split directory");
  train->add_option("--aux-split", f_aux, "Auxiliary split directory (kt)");
  train->add_option("--classifier", f_classifier, "micro | classifier model file | adapter:<id>");
  train->add_option("--lexicon", f_lexicon, "Lexicon for the delete baseline");
  train->add_option("--backbone", f_backbone, "micro | adapter:<id>");

  auto* train_clf = app.add_subcommand("train-classifier", "Train the toxicity classifier on a split");
  train_clf->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  std::string clf_split, clf_out;
  std::optional<std::uint64_t> c_seed;
  std::optional<std::size_t> c_epochs, c_batch;
  std::optional<double> c_lr;
  train_clf->add_option("--split", clf_split, "Split directory")->required();
  train_clf->add_option("--out", clf_out, "Model file to write")->required();
  train_clf->add_option("--seed", c_seed)->required();
  train_clf->add_option("--epochs", c_epochs);
  train_clf->add_option("--lr", c_lr);
  train_clf->add_option("--batch-size", c_batch);

  auto* detox = app.add_subcommand("detoxify", "Rewrite text with a trained model or a baseline");
  DetoxifyArgs d;
  std::optional<std::string> text;
  detox->add_option("--model", d.model, "Detox model file");
  detox->add_option("--system", d.system, "duplicate | delete (no model needed)");
  detox->add_option("--text", text, "Single input; result goes to standard output");
  detox->add_option("--input", d.input, "File with one input per line");
  detox->add_option("--out", d.output, "Output file (default: standard output)");
  detox->add_option("--lexicon", d.lexicon, "Lexicon for --system delete");
  detox->add_option("--lang", d.lang, "Lexicon language")->capture_default_str();
  detox->add_option("--classifier", d.classifier, "Classifier for del_recon models");
  detox->add_option("--threshold", d.threshold, "Attribution threshold for del_recon models");

  auto* eval = app.add_subcommand("evaluate", "Score system outputs against a test file");
  EvaluateArgs e;
  eval->add_option("outputs", e.systems, "NAME=PATH or PATH, one line per test pair")->required();
  eval->add_option("--test", e.test, "Test pair file")->required();
  eval->add_option("--classifier", e.classifier, "Classifier model file")->required();
  eval->add_option("--lm-train", e.lm_train, "Pair file the unigram LM is fit on")->required();
  eval->add_option("--ref", e.ref, "source | gold")->capture_default_str();
  eval->add_option("--export-human-eval", e.export_human_eval, "Items to sample for human rating");
  eval->add_option("--seed", e.seed, "Sampling seed for the human-eval export");
  eval->add_option("--embed-dim", e.embed_dim)->capture_default_str();
  eval->add_option("--out", e.out, "Output directory")->required();

  auto* toy_cmd = app.add_subcommand("toy", "Write the synthetic toy workspace");
  std::string toy_out;
  std::uint64_t toy_seed = 1;
  toy_cmd->add_option("--out", toy_out)->required();
  toy_cmd->add_option("--seed", toy_seed)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err);
  }

  auto put = [](ordered_json& j, const char* key, const auto& opt) {
    if (opt) j[key] = *opt;
  };
  try {
    if (*curate) return cmd_curate(raw, curate_out, policy, report);
    if (*split) return cmd_split(pairs, split_out, sizes, split_seed);
    if (*train) {
      ordered_json flags = ordered_json::object();
      put(flags, "method", f_method);
      put(flags, "seed", f_seed);
      put(flags, "epochs", f_epochs);
      put(flags, "lr", f_lr);
      put(flags, "batch_size", f_batch);
      put(flags, "lambda", f_lambda);
      put(flags, "aux_weight", f_aux_weight);
      put(flags, "threshold", f_threshold);
      put(flags, "ref", f_ref);
      put(flags, "export_human_eval", f_export);
      put(flags, "out", f_out);
      put(flags, "split", f_split);
      put(flags, "aux_split", f_aux);
      put(flags, "classifier", f_classifier);
      put(flags, "lexicon", f_lexicon);
      put(flags, "backbone", f_backbone);
      return cmd_train(config, flags);
    }
    if (*train_clf) {
      ordered_json flags = ordered_json::object();
      put(flags, "seed", c_seed);
      put(flags, "classifier_epochs", c_epochs);
      put(flags, "classifier_lr", c_lr);
      put(flags, "classifier_batch_size", c_batch);
      return cmd_train_classifier(clf_split, clf_out, flags);
    }
    if (*detox) {
      d.has_text = text.has_value();
      if (text) d.text = *text;
      return cmd_detoxify(d);
    }
    if (*eval) return cmd_evaluate(e);
    if (*toy_cmd) return cmd_toy(toy_out, toy_seed);
  } catch (const Error& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 1;
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 1;
  }
  return 1;
}
