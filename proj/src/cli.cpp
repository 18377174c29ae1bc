// SPDX-License-Identifier: Apache-2.0
#include "sketch/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "sketch/checkpoint.hpp"
#include "sketch/dataset.hpp"
#include "sketch/error.hpp"
#include "sketch/refine.hpp"
#include "sketch/service.hpp"
#include "sketch/trainer.hpp"

namespace sketch {

namespace {

namespace fs = std::filesystem;

enum class Format { text, records };

/// Key/value output in either human or tab-separated record form.
class Printer {
 public:
  Printer(std::ostream& out, Format f) : out_(out), format_(f) {}
  template <typename T>
  void field(const std::string& key, const T& value) {
    if (format_ == Format::records)
      out_ << key << '\t' << value << '\n';
    else
      out_ << key << ": " << value << '\n';
  }
  void raw(const std::string& text) { out_ << text; }
  bool records() const { return format_ == Format::records; }

 private:
  std::ostream& out_;
  Format format_;
};

struct FixtureSpec {
  std::size_t clusters = 4;
  std::size_t per = 8;
  std::optional<std::size_t> val;
  std::optional<std::uint64_t> seed;
};

FixtureSpec parse_fixture(const std::string& text) {
  FixtureSpec f;
  std::istringstream in(text);
  for (std::string item; std::getline(in, item, ',');) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ValidationError("fixture item '" + item + "' is not key=value");
    const auto key = item.substr(0, eq);
    std::uint64_t v = 0;
    try {
      std::size_t used = 0;
      v = std::stoull(item.substr(eq + 1), &used);
      if (used != item.size() - eq - 1) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ValidationError("fixture value in '" + item + "' is not a non-negative integer");
    }
    if (key == "clusters") f.clusters = v;
    else if (key == "per") f.per = v;
    else if (key == "val") f.val = v;
    else if (key == "seed") f.seed = v;
    else throw ValidationError("unknown fixture key '" + key + "' (clusters, per, val, seed)");
  }
  return f;
}

/// Training data from a manifest or a fixture spec. `validation` is empty
/// when the caller should split.
struct DataSource {
  std::vector<SketchPair> train;
  std::vector<SketchPair> validation;
};

DataSource load_data(const std::string& manifest, const std::string& validation_manifest,
                     const std::string& fixture, std::uint64_t seed, std::size_t image_size) {
  DataSource d;
  if (!manifest.empty()) {
    d.train = load_manifest(manifest, image_size);
  } else {
    const auto f = parse_fixture(fixture.empty() ? "clusters=4,per=8" : fixture);
    const auto s = f.seed.value_or(seed);
    d.train = synth_fixture(f.clusters, f.per, s, image_size);
    if (f.val) d.validation = synth_fixture_sized(f.clusters, *f.val, s + 1000, image_size);
  }
  if (!validation_manifest.empty()) d.validation = load_manifest(validation_manifest, image_size);
  return d;
}

Tokenizer corpus_tokenizer(const DataSource& d) {
  std::vector<std::string> corpus;
  for (const auto* set : {&d.train, &d.validation})
    for (const auto& p : *set) corpus.push_back(p.description);
  return Tokenizer::build(corpus);
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

std::string read_file(const fs::path& path) {
  std::error_code ec;
  if (!fs::is_regular_file(path, ec)) throw IoError("cannot read " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

void print_log(Printer& p, const TrainLog& log) {
  if (p.records()) {
    p.raw(serialize_train_log(log));
    return;
  }
  char line[160];
  p.raw("epoch  loss      acc@1   acc@5   acc@10  acc@25\n");
  for (const auto& e : log.epochs) {
    std::snprintf(line, sizeof line, "%5zu  %.6f  %.4f  %.4f  %.4f  %.4f\n", e.epoch, e.loss,
                  e.accuracy[0], e.accuracy[1], e.accuracy[2], e.accuracy[3]);
    p.raw(line);
  }
  p.field("best_epoch", log.best_epoch);
}

struct TrainOptions {
  std::string manifest, validation_manifest, fixture, base, out;
  std::size_t epochs = 20, batch_size = 16, rank = 4;
  float lr = 1e-3f, alpha = 8.0f;
  double split = 0.8;
  std::string targets = "both", projections = "qkvo";
  std::uint64_t seed = 0;
};

void add_train_options(CLI::App* cmd, TrainOptions& o, bool with_targets) {
  auto* m = cmd->add_option("--manifest", o.manifest, "training manifest (id, image_path, description)");
  auto* f = cmd->add_option("--fixture", o.fixture, "synthetic data, e.g. clusters=4,per=8,val=59");
  m->excludes(f);
  cmd->add_option("--validation-manifest", o.validation_manifest,
                  "separate validation manifest instead of a split");
  cmd->add_option("--base", o.base, "checkpoint whose encoder is fine-tuned");
  cmd->add_option("--epochs", o.epochs)->check(CLI::PositiveNumber);
  cmd->add_option("--batch-size", o.batch_size)->check(CLI::Range(2, 1 << 20));
  cmd->add_option("--lr", o.lr, "Adam learning rate")->check(CLI::PositiveNumber);
  cmd->add_option("--rank", o.rank, "LoRA rank")->check(CLI::PositiveNumber);
  cmd->add_option("--alpha", o.alpha, "LoRA alpha")->check(CLI::PositiveNumber);
  cmd->add_option("--projections", o.projections, "subset of q,k,v,o to adapt");
  cmd->add_option("--split", o.split, "train fraction when splitting");
  cmd->add_option("--seed", o.seed);
  if (with_targets)
    cmd->add_option("--lora-targets", o.targets, "self, cross or both")
        ->check(CLI::IsMember({"self", "cross", "both"}));
}

TrainConfig train_config(const TrainOptions& o) {
  TrainConfig cfg;
  cfg.epochs = o.epochs;
  cfg.batch_size = o.batch_size;
  cfg.adam.learning_rate = o.lr;
  cfg.seed = o.seed;
  cfg.split_ratio = o.split;
  cfg.lora.targets = parse_lora_targets(o.targets);
  cfg.lora.rank = o.rank;
  cfg.lora.alpha = o.alpha;
  cfg.lora.projections = parse_projections(o.projections);
  cfg.lora.seed = o.seed;
  return cfg;
}

/// Base encoder and tokenizer for training: from --base, or fresh.
std::pair<EncoderModel, Tokenizer> training_base(const TrainOptions& o, const DataSource& data) {
  if (!o.base.empty()) {
    auto ckpt = load_checkpoint(o.base);
    if (adapter_count(ckpt.model) > 0) ckpt.model = merge(std::move(ckpt.model)).first;
    return {std::move(ckpt.model), std::move(ckpt.tokenizer)};
  }
  auto tok = corpus_tokenizer(data);
  EncoderConfig ec;
  ec.vocab_size = std::max<std::size_t>(tok.size(), Tokenizer::kFirstWord);
  ec.seed = o.seed;
  return {EncoderModel(ec), std::move(tok)};
}

int cmd_train(const TrainOptions& o, Printer& p) {
  const auto data = load_data(o.manifest, o.validation_manifest, o.fixture, o.seed, 64);
  auto [base, tok] = training_base(o, data);
  const auto cfg = train_config(o);
  TrainResult r = data.validation.empty() ? train(base, data.train, tok, cfg)
                                          : train(base, data.train, data.validation, tok, cfg);
  ensure_dir(o.out);
  save_checkpoint(fs::path(o.out) / "model.skch", {r.model, tok, cfg.lora});
  write_file(fs::path(o.out) / "train_log.tsv", serialize_train_log(r.log));
  print_log(p, r.log);
  p.field("checkpoint", (fs::path(o.out) / "model.skch").string());
  p.field("trainable_parameters", adapter_parameter_count(r.model));
  return kExitOk;
}

int cmd_ablate(const TrainOptions& o, Printer& p) {
  const auto data = load_data(o.manifest, o.validation_manifest, o.fixture, o.seed, 64);
  auto [base, tok] = training_base(o, data);
  const auto cfg = train_config(o);
  const AblationResult r = data.validation.empty()
                               ? run_ablation(base, data.train, tok, cfg)
                               : run_ablation(base, data.train, data.validation, tok, cfg);
  if (!o.out.empty()) {
    ensure_dir(o.out);
    const char* names[3] = {"self", "cross", "both"};
    for (std::size_t i = 0; i < 3; ++i)
      write_file(fs::path(o.out) / ("log_" + std::string(names[i]) + ".tsv"),
                 serialize_train_log(r.logs[i]));
    write_file(fs::path(o.out) / "ablation.tsv", r.table());
  }
  p.raw(r.table());
  return kExitOk;
}

struct RefineOptions {
  std::string input, description, description_file, checkpoint, reference, out;
  bool model1 = false, model2 = false, model3 = false;
  int model = 0;
  std::size_t iterations = 5;
  float strength = 0.3f, guidance = 7.5f;
  std::uint64_t seed = 0;
  std::vector<std::string> feedback;
};

int cmd_refine(const RefineOptions& o, Printer& p) {
  RefinementConfig cfg;
  cfg.iterations = o.iterations;
  cfg.strength = o.strength;
  cfg.guidance_scale = o.guidance;
  cfg.seed = o.seed;
  const int flags = int(o.model1) + int(o.model2) + int(o.model3) + int(o.model != 0);
  if (flags > 1) throw ValidationError("choose one of --model1, --model2, --model3, --model");
  if (o.model2 || o.model == 2) cfg.model_kind = ModelKind::model2;
  else if (o.model3 || o.model == 3) cfg.model_kind = ModelKind::model3;
  else cfg.model_kind = ModelKind::model1;
  cfg.validate();

  std::string description = o.description;
  if (!o.description_file.empty()) description = read_file(o.description_file);
  while (!description.empty() && (description.back() == '\n' || description.back() == '\r'))
    description.pop_back();

  std::optional<Checkpoint> ckpt;
  if (!o.checkpoint.empty()) ckpt = load_checkpoint(o.checkpoint);
  const auto enc = make_encoder_pair(std::move(ckpt), o.seed);
  const auto size = enc.frozen.config().image_size;
  const ToyLatentBackend backend({size, enc.frozen.config().conditioning_dim, o.seed});
  const RefinementContext ctx{&backend, &enc.frozen, &enc.adapted, &enc.tokenizer};

  const GrayImage input = resize_nearest(read_pgm(o.input), size, size);
  std::optional<GrayImage> reference;
  if (!o.reference.empty()) reference = resize_nearest(read_pgm(o.reference), size, size);

  const auto result = run_session(description, input, cfg, ctx, o.feedback, reference);
  ensure_dir(o.out);
  const fs::path out(o.out);
  write_pgm(out / "iter_0.pgm", input);
  for (const auto& it : result.session.iterations)
    write_pgm(out / ("iter_" + std::to_string(it.index) + ".pgm"), it.image);
  for (const auto& r : result.reports)
    write_file(out / ("report_" + to_string(r.reference) + ".tsv"), serialize_report(r));

  p.field("model", to_string(cfg.model_kind));
  p.field("iterations", result.session.iterations.size());
  for (const auto& it : result.session.iterations) p.field("prompt_" + std::to_string(it.index), it.prompt);
  for (const auto& r : result.reports) p.raw(serialize_report(r));
  p.field("output", out.string());
  return kExitOk;
}

struct EvalOptions {
  std::string checkpoint, manifest, fixture, image_a, image_b;
  std::uint64_t seed = 0;
};

int cmd_eval(const EvalOptions& o, Printer& p) {
  std::optional<Checkpoint> ckpt;
  if (!o.checkpoint.empty()) ckpt = load_checkpoint(o.checkpoint);
  if (!o.image_a.empty() || !o.image_b.empty()) {
    if (o.image_a.empty() || o.image_b.empty())
      throw ValidationError("--image-a and --image-b go together");
    const auto enc = make_encoder_pair(std::move(ckpt), o.seed);
    const auto size = enc.adapted.config().image_size;
    const auto a = read_pgm(o.image_a), b = read_pgm(o.image_b);
    p.field("ssim", ssim(a, b));
    const double db = psnr(a, b);
    p.field("psnr", std::isinf(db) ? std::string("inf") : std::to_string(db));
    p.field("perceptual_distance",
            perceptual_distance(resize_nearest(a, size, size), resize_nearest(b, size, size),
                                enc.adapted));
    return kExitOk;
  }
  if (!ckpt) throw ValidationError("retrieval evaluation needs --checkpoint");
  const auto data = load_data(o.manifest, "", o.fixture, o.seed, ckpt->model.config().image_size);
  const auto acc = evaluate_retrieval(ckpt->model, ckpt->tokenizer, data.train);
  p.field("pairs", data.train.size());
  for (std::size_t i = 0; i < kTopK.size(); ++i) p.field("acc@" + std::to_string(kTopK[i]), acc[i]);
  return kExitOk;
}

struct ServeOptions {
  std::string host = "127.0.0.1", checkpoint;
  int port = 8080;
  std::size_t max_sessions = 64;
  std::uint64_t seed = 0;
};

int cmd_serve(ServeOptions o, bool host_given, bool port_given, Printer& p) {
  if (const char* bind = std::getenv("SKETCH_BIND")) {
    const std::string b = bind;
    const auto colon = b.rfind(':');
    if (!host_given) o.host = b.substr(0, colon);
    if (!port_given && colon != std::string::npos) {
      try {
        o.port = std::stoi(b.substr(colon + 1));
      } catch (const std::exception&) {
        throw ConfigError("SKETCH_BIND port is not a number: " + b);
      }
    }
  }
  std::optional<Checkpoint> ckpt;
  if (!o.checkpoint.empty()) ckpt = load_checkpoint(o.checkpoint);
  SessionService service(std::move(ckpt), {o.max_sessions, o.seed, o.seed});
  HttpServer server(service);
  p.field("listening", o.host + ":" + std::to_string(o.port));
  std::cout.flush();
  server.run(o.host, o.port);
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sketch refinement toolkit: datasets, LoRA training, refinement and serving"};
  app.require_subcommand(1);
  std::string format = "text";
  app.add_option("--format", format, "output style")->check(CLI::IsMember({"text", "records"}));

  // dataset
  auto* dataset = app.add_subcommand("dataset", "create or check (description, sketch) datasets");
  dataset->require_subcommand(1);
  std::string synth_out, ingest_manifest;
  std::size_t synth_clusters = 4, synth_per = 8, synth_count = 0, image_size = 64;
  std::uint64_t synth_seed = 0;
  auto* synth = dataset->add_subcommand("synth", "write a synthetic clustered fixture");
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--clusters", synth_clusters)->check(CLI::Range(2, 1 << 16));
  synth->add_option("--per", synth_per, "pairs per cluster")->check(CLI::PositiveNumber);
  synth->add_option("--count", synth_count, "total pairs, round-robin over clusters");
  synth->add_option("--seed", synth_seed);
  synth->add_option("--image-size", image_size)->check(CLI::PositiveNumber);
  auto* ingest = dataset->add_subcommand("ingest", "load and validate a manifest");
  ingest->add_option("--manifest", ingest_manifest)->required();
  ingest->add_option("--image-size", image_size)->check(CLI::PositiveNumber);

  TrainOptions train_opts, ablate_opts;
  auto* train_cmd = app.add_subcommand("train", "fine-tune LoRA adapters contrastively");
  add_train_options(train_cmd, train_opts, true);
  train_cmd->add_option("--out", train_opts.out, "output directory")->required();

  auto* ablate_cmd = app.add_subcommand("ablate", "compare self, cross and both adapter targets");
  add_train_options(ablate_cmd, ablate_opts, false);
  ablate_cmd->add_option("--out", ablate_opts.out, "output directory for logs and table");

  RefineOptions ro;
  auto* refine_cmd = app.add_subcommand("refine", "run an iterative refinement session");
  refine_cmd->add_option("--input", ro.input, "input sketch (PGM)")->required();
  auto* desc = refine_cmd->add_option("--description", ro.description);
  auto* desc_file = refine_cmd->add_option("--description-file", ro.description_file);
  desc->excludes(desc_file);
  refine_cmd->add_flag("--model1", ro.model1, "generator only");
  refine_cmd->add_flag("--model2", ro.model2, "frozen encoder conditioning");
  refine_cmd->add_flag("--model3", ro.model3, "adapted encoder conditioning");
  refine_cmd->add_option("--model", ro.model, "1, 2 or 3")->check(CLI::Range(1, 3));
  refine_cmd->add_option("--iterations", ro.iterations)->check(CLI::PositiveNumber);
  refine_cmd->add_option("--strength", ro.strength)->check(CLI::Range(0.0, 1.0));
  refine_cmd->add_option("--guidance", ro.guidance)->check(CLI::NonNegativeNumber);
  refine_cmd->add_option("--seed", ro.seed);
  refine_cmd->add_option("--checkpoint", ro.checkpoint);
  refine_cmd->add_option("--feedback", ro.feedback, "feedback for each iteration, in order");
  refine_cmd->add_option("--reference", ro.reference, "ground-truth sketch (PGM)");
  refine_cmd->add_option("--out", ro.out, "output directory")->required();

  EvalOptions eo;
  auto* eval_cmd = app.add_subcommand("eval", "retrieval accuracy or image-pair metrics");
  eval_cmd->add_option("--checkpoint", eo.checkpoint);
  auto* em = eval_cmd->add_option("--manifest", eo.manifest);
  auto* ef = eval_cmd->add_option("--fixture", eo.fixture);
  em->excludes(ef);
  eval_cmd->add_option("--image-a", eo.image_a);
  eval_cmd->add_option("--image-b", eo.image_b);
  eval_cmd->add_option("--seed", eo.seed);

  ServeOptions so;
  auto* serve_cmd = app.add_subcommand("serve", "HTTP session service (SKETCH_BIND=host:port)");
  auto* host_opt = serve_cmd->add_option("--host", so.host);
  auto* port_opt = serve_cmd->add_option("--port", so.port)->check(CLI::Range(0, 65535));
  serve_cmd->add_option("--checkpoint", so.checkpoint);
  serve_cmd->add_option("--max-sessions", so.max_sessions)->check(CLI::PositiveNumber);
  serve_cmd->add_option("--seed", so.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  Printer p(out, format == "records" ? Format::records : Format::text);
  try {
    if (*synth) {
      const auto pairs = synth_count > 0
                             ? synth_fixture_sized(synth_clusters, synth_count, synth_seed, image_size)
                             : synth_fixture(synth_clusters, synth_per, synth_seed, image_size);
      const auto manifest = write_manifest(synth_out, pairs);
      p.field("manifest", manifest.string());
      p.field("pairs", pairs.size());
      return kExitOk;
    }
    if (*ingest) {
      const auto pairs = load_manifest(ingest_manifest, image_size);
      p.field("pairs", pairs.size());
      for (const auto& pr : pairs) p.field("pair", pr.id + "\t" + pr.description);
      return kExitOk;
    }
    if (*train_cmd) {
      if (train_opts.manifest.empty() && train_opts.fixture.empty())
        throw ValidationError("train needs --manifest or --fixture");
      return cmd_train(train_opts, p);
    }
    if (*ablate_cmd) return cmd_ablate(ablate_opts, p);
    if (*refine_cmd) {
      if (ro.description.empty() && ro.description_file.empty())
        throw ValidationError("refine needs --description or --description-file");
      return cmd_refine(ro, p);
    }
    if (*eval_cmd) return cmd_eval(eo, p);
    if (*serve_cmd) return cmd_serve(so, host_opt->count() > 0, port_opt->count() > 0, p);
  } catch (const IngestionError& e) {
    err << "error: " << e.what() << '\n';
    for (const auto& issue : e.issues()) err << "  " << issue << '\n';
    return kExitIngestion;
  } catch (const DegenerateCombinationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitDegenerate;
  } catch (const BackendError& e) {
    err << "error: " << e.what() << '\n';
    return kExitBackend;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const StateError& e) {
    err << "error: " << e.what() << '\n';
    return kExitState;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace sketch
