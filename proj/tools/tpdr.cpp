// tpdr: tokenizer training, model training, indexing, search and evaluation.
//
// Exit codes: 0 ok, 1 unexpected, 2 validation (bad flags, stale index,
// zero-norm query), 3 I/O or file format, 4 training diverged.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "tpdr/catalog.hpp"
#include "tpdr/checkpoint.hpp"
#include "tpdr/error.hpp"
#include "tpdr/index.hpp"
#include "tpdr/metrics.hpp"
#include "tpdr/pipeline.hpp"
#include "tpdr/synthetic.hpp"
#include "tpdr/tokenizer.hpp"
#include "tpdr/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tpdr;

namespace {

enum Exit { kOk = 0, kOther = 1, kValidation = 2, kIo = 3, kDiverged = 4 };

struct Paths {
  std::string catalog, pairs, tokenizer, checkpoint, index, report, split;
};

// Everything a command may read from the config file. Flags override it.
struct RunConfig {
  Paths paths;
  EncoderConfig encoder;  // vocab_size comes from the tokenizer
  TrainConfig train;
  std::uint64_t split_seed = 2024;
  std::size_t vocab_size = 2048;
  RerankSettings rerank;
  std::string variant = "full";
};

template <typename T>
void take(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

RunConfig load_config(const std::string& path) {
  RunConfig c;
  if (path.empty()) return c;
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  json j;
  try {
    j = json::parse(in);
    if (j.contains("paths")) {
      const auto& p = j["paths"];
      take(p, "catalog", c.paths.catalog);
      take(p, "pairs", c.paths.pairs);
      take(p, "tokenizer", c.paths.tokenizer);
      take(p, "checkpoint", c.paths.checkpoint);
      take(p, "index", c.paths.index);
      take(p, "report", c.paths.report);
      take(p, "split", c.paths.split);
    }
    if (j.contains("encoder")) {
      const auto& e = j["encoder"];
      take(e, "n_layers", c.encoder.n_layers);
      take(e, "d_model", c.encoder.d_model);
      take(e, "n_heads", c.encoder.n_heads);
      take(e, "d_ff", c.encoder.d_ff);
      take(e, "max_len", c.encoder.max_len);
      take(e, "shared_embedding", c.encoder.shared_embedding);
    }
    if (j.contains("train")) {
      const auto& t = j["train"];
      take(t, "batch_size", c.train.batch_size);
      take(t, "epochs", c.train.max_epochs);
      take(t, "learning_rate", c.train.learning_rate);
      take(t, "seed", c.train.seed);
      take(t, "tag", c.train.tag_enabled);
      take(t, "same_init", c.train.same_init);
      take(t, "adam_beta1", c.train.adam_beta1);
      take(t, "adam_beta2", c.train.adam_beta2);
      take(t, "split_seed", c.split_seed);
      if (t.contains("optimizer")) {
        const auto o = t["optimizer"].get<std::string>();
        if (o != "adam" && o != "sgd") throw ValidationError("optimizer must be adam or sgd");
        c.train.optimizer = o == "sgd" ? OptimizerKind::sgd : OptimizerKind::adam;
      }
    }
    take(j, "vocab_size", c.vocab_size);
    take(j, "variant", c.variant);
    if (j.contains("rerank")) {
      const auto& r = j["rerank"];
      take(r, "k_candidates", c.rerank.k_candidates);
      take(r, "k_final", c.rerank.k_final);
      if (r.contains("weights")) {
        const auto& w = r["weights"];
        take(w, "semantic", c.rerank.weights.semantic);
        take(w, "cosine", c.rerank.weights.cosine);
        take(w, "jaccard", c.rerank.weights.jaccard);
        take(w, "bm25", c.rerank.weights.bm25);
      }
    }
  } catch (const json::exception& e) {
    throw FormatError("config " + path + ": " + e.what());
  }
  return c;
}

const std::string& need(const std::string& value, const char* what) {
  if (value.empty()) throw ValidationError(std::string("missing path: --") + what);
  return value;
}

void write_json(const json& j, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << "\n";
    return;
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(2) << "\n";
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  return out;
}

DatasetSplit split_for(const RunConfig& c, const std::vector<TrainingPair>& pairs) {
  if (!c.paths.split.empty() && fs::exists(c.paths.split))
    return load_split_manifest(c.paths.split, pairs);
  return split_dataset(pairs, c.split_seed);
}

// --- commands ---------------------------------------------------------

int cmd_generate(std::size_t products, std::size_t per_product, std::uint64_t seed,
                 const RunConfig& c) {
  SyntheticConfig sc;
  sc.n_products = products;
  sc.queries_per_product = per_product;
  sc.seed = seed;
  const auto corpus = generate_corpus(sc);
  save_catalog(corpus.catalog, need(c.paths.catalog, "catalog"));
  save_pairs(corpus.pairs, need(c.paths.pairs, "pairs"));
  std::cerr << corpus.catalog.size() << " products, " << corpus.pairs.size()
            << " pairs\n";
  return kOk;
}

int cmd_tokenize(const RunConfig& c) {
  const Catalog catalog(load_catalog(need(c.paths.catalog, "catalog")));
  std::vector<std::string> texts;
  for (const auto& r : catalog.records()) texts.push_back(r.sd_text);
  if (!c.paths.pairs.empty())
    for (const auto& p : load_pairs(c.paths.pairs, catalog)) texts.push_back(p.query_text);
  const auto model = train_bpe(texts, c.vocab_size);
  save_tokenizer(model, need(c.paths.tokenizer, "tokenizer"));
  std::cerr << "vocabulary " << model.vocab_size() << ", " << model.merges().size()
            << " merges\n";
  return kOk;
}

int cmd_train(RunConfig c, const std::string& log_path) {
  const Catalog catalog(load_catalog(need(c.paths.catalog, "catalog")));
  const auto pairs = load_pairs(need(c.paths.pairs, "pairs"), catalog);
  const auto tokenizer = load_tokenizer(need(c.paths.tokenizer, "tokenizer"));
  const auto& out_path = need(c.paths.checkpoint, "checkpoint");
  const auto split = split_for(c, pairs);
  if (!c.paths.split.empty() && !fs::exists(c.paths.split))
    save_split_manifest(split, c.paths.split);
  c.encoder.vocab_size = tokenizer.vocab_size();

  std::optional<std::ofstream> log;
  if (!log_path.empty()) log = open_out(log_path);
  TrainHooks hooks;
  hooks.on_step = [&](const StepLog& s) {
    if (log) *log << json{{"step", s.step}, {"turn", turn_name(s.turn)}, {"loss", s.loss}}.dump() << "\n";
  };
  hooks.on_epoch = [&](const EpochLog& e) {
    if (log) *log << json{{"epoch", e.epoch}, {"val_recall_at_1", e.val_recall_at_1}}.dump() << "\n";
    std::fprintf(stderr, "epoch %zu  val R@1 %.4f\n", e.epoch, e.val_recall_at_1);
  };
  try {
    const auto r = train(split, catalog, tokenizer, c.encoder, c.train,
                         c.paths.tokenizer, hooks);
    save_checkpoint(r.best, out_path);
    std::fprintf(stderr, "best epoch %zu, %zu steps\n", r.best_epoch, r.steps.size());
  } catch (const TrainingDiverged& e) {
    save_checkpoint(e.last_good(), out_path);
    std::cerr << "error: " << e.what() << " (last good checkpoint written)\n";
    return kDiverged;
  }
  return kOk;
}

int cmd_index(const RunConfig& c) {
  const Catalog catalog(load_catalog(need(c.paths.catalog, "catalog")));
  const auto ck = load_checkpoint(need(c.paths.checkpoint, "checkpoint"));
  const auto tokenizer = load_tokenizer(need(c.paths.tokenizer, "tokenizer"));
  const auto ix = index_catalog(catalog, ck, tokenizer);
  save_index(ix, need(c.paths.index, "index"));
  std::cerr << ix.size() << " rows, fingerprint " << ix.fingerprint << "\n";
  return kOk;
}

struct Loaded {
  Catalog catalog;
  Checkpoint checkpoint;
  TokenizerModel tokenizer;
  IndexSnapshot index;
};

Loaded load_artifacts(const RunConfig& c) {
  return {Catalog(load_catalog(need(c.paths.catalog, "catalog"))),
          load_checkpoint(need(c.paths.checkpoint, "checkpoint")),
          load_tokenizer(need(c.paths.tokenizer, "tokenizer")),
          load_index(need(c.paths.index, "index"))};
}

int cmd_search(const RunConfig& c, const std::vector<std::string>& query_args,
               const std::string& queries_file, std::size_t k,
               const std::optional<std::string>& dp_filter, const std::string& trace_path) {
  const auto variant = parse_variant(c.variant);
  if (k < 1) throw ValidationError("--k must be >= 1");
  std::vector<std::string> queries;
  if (!queries_file.empty()) {
    std::ifstream in(queries_file);
    if (!in) throw IoError("cannot open " + queries_file);
    for (std::string line; std::getline(in, line);)
      if (!line.empty()) queries.push_back(line);
  } else {
    std::string q;
    for (const auto& a : query_args) q += (q.empty() ? "" : " ") + a;
    if (q.empty()) throw ValidationError("no query given");
    queries.push_back(q);
  }
  const auto a = load_artifacts(c);
  auto settings = c.rerank;
  settings.k_candidates = std::max(settings.k_candidates, k);
  const Pipeline pipe(a.catalog, a.checkpoint, a.tokenizer, a.index, settings);

  std::optional<std::ofstream> trace;
  if (!trace_path.empty()) trace = open_out(trace_path);
  const bool batch = !queries_file.empty();
  std::printf("%srank\tproduct_id\tdp\tS\ts1\ts2\ts3\ts4\n", batch ? "query\t" : "");
  for (std::size_t qi = 0; qi < queries.size(); ++qi) {
    const auto out = pipe.run(queries[qi], variant, k, dp_filter);
    json rows = json::array();
    for (std::size_t i = 0; i < out.size(); ++i) {
      const auto& h = out[i];
      if (batch) std::printf("%zu\t", qi + 1);
      std::printf("%zu\t%s\t%s\t%.6f\t%.6f\t%.6f\t%.6f\t%.6f\n", i + 1, h.product_id.c_str(),
                  h.dp_label.c_str(), h.fused, h.raw.s1, h.raw.s2, h.raw.s3, h.raw.s4);
      rows.push_back({{"rank", i + 1},
                      {"product_id", h.product_id},
                      {"dp", h.dp_label},
                      {"S", h.fused},
                      {"raw", {h.raw.s1, h.raw.s2, h.raw.s3, h.raw.s4}},
                      {"normalized", {h.normalized.s1, h.normalized.s2, h.normalized.s3, h.normalized.s4}},
                      {"position_before", h.position_before},
                      {"position_after", h.position_after}});
    }
    if (trace)
      *trace << json{{"query", queries[qi]}, {"variant", c.variant}, {"results", rows}}.dump()
             << "\n";
  }
  return kOk;
}

int cmd_evaluate(const RunConfig& c, const std::string& details_path) {
  const auto a = load_artifacts(c);
  const auto pairs = load_pairs(need(c.paths.pairs, "pairs"), a.catalog);
  const auto split = split_for(c, pairs);
  const Pipeline pipe(a.catalog, a.checkpoint, a.tokenizer, a.index, c.rerank);

  std::vector<PipelineVariant> variants;
  if (c.variant == "all") {
    variants = {PipelineVariant::bm25, PipelineVariant::semantic, PipelineVariant::full};
  } else {
    variants = {parse_variant(c.variant)};
  }
  std::optional<std::ofstream> details;
  if (!details_path.empty()) details = open_out(details_path);
  json out = json::object();
  for (auto v : variants) {
    std::vector<QueryResult> per_query;
    const auto report = evaluate(pipe, a.catalog, split.test, v, &per_query);
    if (details) {
      for (const auto& q : per_query) {
        auto j = query_result_to_json(q);
        j["variant"] = variant_name(v);
        *details << j.dump() << "\n";
      }
    }
    if (variants.size() == 1) out = report_to_json(report);
    else out[variant_name(v)] = report_to_json(report);
  }
  write_json(out, c.paths.report);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tpdr: dual-encoder product search"};
  app.require_subcommand(1);

  const char* env = std::getenv("TPDR_CONFIG");
  std::string config_path = env != nullptr ? env : "";
  app.add_option("--config", config_path, "JSON config (default: $TPDR_CONFIG)");

  // Overrides. Unset optionals leave the config value alone.
  std::optional<std::string> catalog, pairs, tokenizer, checkpoint, index, report, split;
  auto path_flags = [&](CLI::App* s, std::initializer_list<const char*> which) {
    for (const char* w : which) {
      const std::string n = w;
      auto* target = n == "catalog"      ? &catalog
                     : n == "pairs"      ? &pairs
                     : n == "tokenizer"  ? &tokenizer
                     : n == "checkpoint" ? &checkpoint
                     : n == "index"      ? &index
                     : n == "report"     ? &report
                                         : &split;
      s->add_option("--" + n, *target, n + " path");
    }
  };

  auto* gen = app.add_subcommand("generate", "Write a seeded synthetic catalog and pairs");
  std::size_t n_products = 500, per_product = 2;
  std::uint64_t gen_seed = 13;
  gen->add_option("--products", n_products)->capture_default_str();
  gen->add_option("--queries-per-product", per_product)->capture_default_str();
  gen->add_option("--seed", gen_seed)->capture_default_str();
  path_flags(gen, {"catalog", "pairs"});

  auto* tok = app.add_subcommand("tokenize", "Train the BPE tokenizer on SDs and queries");
  std::optional<std::size_t> vocab;
  tok->add_option("--vocab-size", vocab);
  path_flags(tok, {"catalog", "pairs", "tokenizer"});

  auto* tr = app.add_subcommand("train", "Train both towers and write the best checkpoint");
  std::optional<std::size_t> epochs, batch, layers, d_model, heads, d_ff, max_len;
  std::optional<double> lr, beta1, beta2;
  std::optional<std::uint64_t> seed, split_seed;
  std::optional<std::string> optimizer;
  bool no_tag = false, same_init = false, shared = false;
  std::string log_path;
  tr->add_option("--epochs", epochs);
  tr->add_option("--batch-size", batch);
  tr->add_option("--lr", lr);
  tr->add_option("--adam-beta1", beta1);
  tr->add_option("--adam-beta2", beta2);
  tr->add_option("--seed", seed);
  tr->add_option("--split-seed", split_seed);
  tr->add_option("--optimizer", optimizer)->check(CLI::IsMember({"adam", "sgd"}));
  tr->add_option("--layers", layers);
  tr->add_option("--d-model", d_model);
  tr->add_option("--heads", heads);
  tr->add_option("--d-ff", d_ff);
  tr->add_option("--max-len", max_len);
  tr->add_flag("--no-tag", no_tag, "update both towers every step");
  tr->add_flag("--same-init", same_init, "initialize both towers identically");
  tr->add_flag("--shared-embedding", shared, "one token table for both towers");
  tr->add_option("--log", log_path, "JSONL training log");
  path_flags(tr, {"catalog", "pairs", "tokenizer", "checkpoint", "split"});

  auto* ix = app.add_subcommand("index", "Embed every SD with the product tower");
  path_flags(ix, {"catalog", "checkpoint", "tokenizer", "index"});

  std::optional<std::string> variant;
  std::optional<std::size_t> k_candidates, k_final;
  auto* se = app.add_subcommand("search", "Rank products for one query or a file of queries");
  std::vector<std::string> query_words;
  std::string queries_file, trace_path;
  std::size_t k = 10;
  std::optional<std::string> dp_filter;
  se->add_option("query", query_words, "query text");
  se->add_option("--queries", queries_file, "one query per line");
  se->add_option("--k", k)->capture_default_str();
  se->add_option("--variant", variant)->check(CLI::IsMember({"bm25", "semantic", "full"}));
  se->add_option("--dp-filter", dp_filter);
  se->add_option("--k-candidates", k_candidates);
  se->add_option("--trace", trace_path, "JSONL with every stage score");
  path_flags(se, {"catalog", "checkpoint", "tokenizer", "index"});

  auto* ev = app.add_subcommand("evaluate", "Score the test split");
  std::string details_path;
  ev->add_option("--variant", variant)
      ->check(CLI::IsMember({"bm25", "semantic", "full", "all"}));
  ev->add_option("--split-seed", split_seed);
  ev->add_option("--k-candidates", k_candidates);
  ev->add_option("--k-final", k_final);
  ev->add_option("--details", details_path, "per-query JSONL");
  path_flags(ev, {"catalog", "pairs", "checkpoint", "tokenizer", "index", "report", "split"});

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  try {
    RunConfig c = load_config(config_path);
    auto set = [](auto& dst, const auto& src) {
      if (src) dst = *src;
    };
    set(c.paths.catalog, catalog);
    set(c.paths.pairs, pairs);
    set(c.paths.tokenizer, tokenizer);
    set(c.paths.checkpoint, checkpoint);
    set(c.paths.index, index);
    set(c.paths.report, report);
    set(c.paths.split, split);
    set(c.vocab_size, vocab);
    set(c.train.max_epochs, epochs);
    set(c.train.batch_size, batch);
    set(c.train.learning_rate, lr);
    set(c.train.adam_beta1, beta1);
    set(c.train.adam_beta2, beta2);
    set(c.train.seed, seed);
    set(c.split_seed, split_seed);
    if (optimizer) c.train.optimizer = *optimizer == "sgd" ? OptimizerKind::sgd : OptimizerKind::adam;
    if (no_tag) c.train.tag_enabled = false;
    if (same_init) c.train.same_init = true;
    if (shared) c.encoder.shared_embedding = true;
    set(c.encoder.n_layers, layers);
    set(c.encoder.d_model, d_model);
    set(c.encoder.n_heads, heads);
    set(c.encoder.d_ff, d_ff);
    set(c.encoder.max_len, max_len);
    set(c.variant, variant);
    set(c.rerank.k_candidates, k_candidates);
    set(c.rerank.k_final, k_final);
    c.rerank.k_final = std::min(c.rerank.k_final, c.rerank.k_candidates);

    if (*gen) return cmd_generate(n_products, per_product, gen_seed, c);
    if (*tok) return cmd_tokenize(c);
    if (*tr) return cmd_train(c, log_path);
    if (*ix) return cmd_index(c);
    if (*se) return cmd_search(c, query_words, queries_file, k, dp_filter, trace_path);
    if (*ev) return cmd_evaluate(c, details_path);
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDiverged;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kOther;
  }
  return kOther;
}
