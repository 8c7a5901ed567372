// xfer: command-line front end for corpora, training phases, evaluation,
// sweeps and result tables.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "xfer/bash_sim.hpp"
#include "xfer/bitext.hpp"
#include "xfer/checkpoint.hpp"
#include "xfer/manifest.hpp"
#include "xfer/metrics.hpp"
#include "xfer/pipeline.hpp"

namespace fs = std::filesystem;
using namespace xfer;

namespace {

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::IoError, "cannot read " + path);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    out.push_back(line);
  }
  return out;
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::IoError, "cannot write " + path);
  out << text;
}

// Corpora carry their transform history in a sidecar "<path>.history.json".
void write_corpus(const BitextCorpus& c, const std::string& path, BitextFormat format) {
  write_bitext(c, path, format);
  nlohmann::ordered_json meta{{"task", c.meta.task}, {"history", history_to_json(c.meta.history)}};
  write_file(path + ".history.json", meta.dump(2) + "\n");
}

struct GenArgs {
  std::string task = "copy";
  SyntheticOptions opt;
  std::string out;
  std::string format = "tsv";
};

void cmd_gen(const GenArgs& a) {
  const BitextCorpus c = a.task == "copy" ? gen_copy(a.opt) : gen_reversal(a.opt);
  write_corpus(c, a.out, parse_format(a.format));
  std::cerr << "wrote " << c.size() << " pairs to " << a.out << '\n';
}

struct PrepArgs {
  std::string in, out, format = "tsv";
  std::string mask_sql;
  bool swap = false;
  std::size_t downsample = 0;
  double split = 0.0;
  std::string test_out;
  std::uint64_t seed = 0;
};

void cmd_prep(const PrepArgs& a) {
  const BitextFormat fmt = parse_format(a.format);
  BitextCorpus c = load_bitext(a.in, fmt);
  if (!a.mask_sql.empty()) c = mask_sql(c, parse_side(a.mask_sql));
  if (a.swap) c = swap_direction(c);
  if (a.downsample > 0) c = downsample(c, a.downsample, a.seed);
  if (a.split > 0.0) {
    require(!a.test_out.empty(), ErrorKind::InvalidArgument, "--split needs --test-out");
    const SplitCorpus parts = split(c, a.split, a.seed);
    write_corpus(parts.train, a.out, fmt);
    write_corpus(parts.test, a.test_out, fmt);
    std::cerr << "wrote " << parts.train.size() << " train and " << parts.test.size() << " test pairs\n";
    return;
  }
  write_corpus(c, a.out, fmt);
  std::cerr << "wrote " << c.size() << " pairs to " << a.out << '\n';
}

void cmd_pretrain(const std::string& manifest_path, const fs::path& out, bool quiet) {
  const ExperimentManifest m = ExperimentManifest::load(manifest_path);
  fs::create_directories(out);
  m.save((out / "manifest.txt").string());
  std::ofstream log((out / "train.log"), std::ios::binary);
  const TaskData up = prepare_upstream(m);
  up.src_vocab.save((out / "upstream.src.vocab").string());
  up.tgt_vocab.save((out / "upstream.tgt.vocab").string());
  const PhaseOutput pre = pretrain(m, up, &log);
  save_checkpoint(pre.model, checkpoint_info(m, up.src_vocab, up.tgt_vocab), (out / "pretrained.ckpt").string());
  if (!quiet) {
    std::cout << "pretrained " << pre.train.steps << " steps (best val nll " << pre.train.best_val_loss << " at step "
              << pre.train.best_step << ") -> " << (out / "pretrained.ckpt").string() << '\n';
  }
}

void cmd_finetune(const std::string& manifest_path, const std::string& ckpt, const fs::path& out, bool quiet) {
  const ExperimentManifest m = ExperimentManifest::load(manifest_path);
  const auto loaded = load_checkpoint<float>(ckpt);
  fs::create_directories(out);
  std::ofstream log((out / "finetune.log"), std::ios::binary);
  const TaskData down = prepare_downstream(m);
  save_downstream(down, out);
  const PhaseOutput fin = finetune_frozen(loaded.model, m, down, &log);
  save_checkpoint(fin.model, checkpoint_info(m, down.src_vocab, down.tgt_vocab), (out / "finetuned.ckpt").string());
  if (!quiet) {
    std::cout << "finetuned embeddings for " << fin.train.steps << " steps, core checksum "
              << fin.model.partition_checksum(Partition::Core) << " unchanged -> "
              << (out / "finetuned.ckpt").string() << '\n';
  }
}

struct EvalArgs {
  std::string checkpoint, src_vocab, tgt_vocab, test, format = "tsv";
  std::string score_mode = "exact_match";
  std::string experiment;
  std::string out;
  std::size_t max_len = 64;
  std::size_t batch_size = 64;
  bool any_phase = false;
};

void cmd_eval(const EvalArgs& a) {
  const auto loaded = load_checkpoint<float>(a.checkpoint);
  const Vocab sv = Vocab::load(a.src_vocab);
  const Vocab tv = Vocab::load(a.tgt_vocab);
  require(sv.content_hash() == loaded.info.src_vocab_hash && tv.content_hash() == loaded.info.tgt_vocab_hash,
          ErrorKind::InvalidArgument, "vocabularies do not match the ones recorded in the checkpoint");
  const BitextCorpus test = load_bitext(a.test, parse_format(a.format));
  const MetricReport r = evaluate_full(loaded.model, sv, tv, test, DecodeConfig{a.max_len, a.batch_size},
                                       parse_score_mode(a.score_mode), a.experiment, a.any_phase);
  if (!a.out.empty()) write_file(a.out, r.to_json_text());
  std::cout << r.to_json_text();
}

void cmd_run(const std::string& manifest_path, const fs::path& out, bool quiet) {
  const ExperimentManifest m = ExperimentManifest::load(manifest_path);
  const RunOutcome r = run_experiment(m, out, quiet ? nullptr : &std::cerr);
  std::cout << r.report.to_json_text();
}

void cmd_sweep(const std::string& manifest_path, const std::string& grid, const fs::path& out, bool quiet) {
  ExperimentManifest m = ExperimentManifest::load(manifest_path);
  if (!grid.empty()) m.sweep_grid = grid;
  const auto cells = m.grid();
  require(!cells.empty(), ErrorKind::InvalidArgument, "no sweep grid (set sweep.grid or pass --grid)");
  const auto rows = run_sweep(m, cells, out, quiet ? nullptr : &std::cerr);
  std::cout << emit_table(rows, TableStyle::Compute).text();
  bool any_failed = false;
  for (const auto& r : rows) any_failed = any_failed || !r.report;
  require(!any_failed, ErrorKind::TrainingDiverged, "some sweep cells failed; see the table above");
}

int cmd_score_bash(const std::string& pred_path, const std::string& ref_path) {
  const auto preds = read_lines(pred_path);
  const auto refs = read_lines(ref_path);
  require(preds.size() == refs.size(), ErrorKind::InvalidArgument,
          "prediction and reference files differ in length (" + std::to_string(preds.size()) + " vs " +
              std::to_string(refs.size()) + ")");
  std::cout << "line\tscore\n";
  for (std::size_t i = 0; i < refs.size(); ++i) {
    std::cout << i + 1 << '\t' << bash::bash_similarity(preds[i], refs[i]).value << '\n';
  }
  std::cout << "mean\t" << bash::bash_corpus_score(preds, refs) << '\n';
  return 0;
}

void cmd_report(const std::vector<std::string>& inputs, const std::string& style, const std::string& tsv_out,
                const std::string& format) {
  std::vector<fs::path> args(inputs.begin(), inputs.end());
  std::vector<TableRow> rows;
  for (const auto& dir : collect_runs(args)) {
    try {
      rows.push_back(load_run_row(dir));
    } catch (const Error& e) {
      TableRow failed;
      failed.experiment = dir.filename().string();
      failed.error = e.what();
      rows.push_back(failed);
    }
  }
  const ResultsTable table = emit_table(rows, parse_table_style(style));
  if (!tsv_out.empty()) write_file(tsv_out, table.tsv());
  if (format == "tsv") {
    std::cout << table.tsv();
  } else {
    std::cout << table.text();
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"xfer: frozen-core transfer experiments for small sequence-to-sequence transformers"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a synthetic copy or reversal corpus");
  g->add_option("--task", gen.task, "copy or reversal")->check(CLI::IsMember({"copy", "reversal"}));
  g->add_option("--n", gen.opt.n, "Number of pairs")->capture_default_str();
  g->add_option("--vocab-size", gen.opt.vocab_size, "Synthetic vocabulary size")->capture_default_str();
  g->add_option("--len-min", gen.opt.len_min, "Minimum sequence length")->capture_default_str();
  g->add_option("--len-max", gen.opt.len_max, "Maximum sequence length")->capture_default_str();
  g->add_option("--seed", gen.opt.seed, "Generator seed")->capture_default_str();
  g->add_option("--prefix", gen.opt.prefix, "Token prefix (distinct prefixes give disjoint vocabularies)")
      ->capture_default_str();
  g->add_flag("--identity", gen.opt.identity, "Copy task: keep tokens instead of permuting them");
  g->add_option("--format", gen.format, "tsv or jsonl")->check(CLI::IsMember({"tsv", "jsonl"}));
  g->add_option("--out", gen.out, "Output corpus path")->required();

  PrepArgs prep;
  auto* p = app.add_subcommand("prep", "Mask SQL constants, swap direction, downsample or split a corpus");
  p->add_option("--in", prep.in, "Input corpus")->required()->check(CLI::ExistingFile);
  p->add_option("--out", prep.out, "Output corpus (train part when splitting)")->required();
  p->add_option("--format", prep.format, "tsv or jsonl")->check(CLI::IsMember({"tsv", "jsonl"}));
  p->add_option("--mask-sql", prep.mask_sql, "Mask SQL literals on source, target or both")
      ->check(CLI::IsMember({"source", "target", "both"}));
  p->add_flag("--swap", prep.swap, "Swap source and target");
  p->add_option("--downsample", prep.downsample, "Keep a random subset of this many pairs");
  p->add_option("--split", prep.split, "Hold out this fraction as a test set")->check(CLI::Range(0.0, 1.0));
  p->add_option("--test-out", prep.test_out, "Output path for the held-out part");
  p->add_option("--seed", prep.seed, "Seed for downsampling and splitting")->capture_default_str();

  std::string manifest, out_dir, checkpoint, grid;
  bool quiet = false;
  auto* pt = app.add_subcommand("pretrain", "Train a whole model on the upstream task of a manifest");
  pt->add_option("--manifest", manifest, "Experiment manifest")->required()->check(CLI::ExistingFile);
  pt->add_option("--out", out_dir, "Output directory")->required();
  pt->add_flag("--quiet", quiet, "Print nothing on success");

  bool unfreeze = false;
  auto* ft = app.add_subcommand("finetune", "Swap embeddings, freeze the core and train embeddings downstream");
  ft->add_option("--manifest", manifest, "Experiment manifest")->required()->check(CLI::ExistingFile);
  ft->add_option("--checkpoint", checkpoint, "Pretrained checkpoint")->required()->check(CLI::ExistingFile);
  ft->add_option("--out", out_dir, "Output directory")->required();
  ft->add_flag("--quiet", quiet, "Print nothing on success");
  ft->add_flag("--unfreeze", unfreeze, "Not supported: the core always stays frozen")->group("");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Score a checkpoint on a test corpus");
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint to evaluate")->required()->check(CLI::ExistingFile);
  e->add_option("--src-vocab", ev.src_vocab, "Source vocabulary file")->required()->check(CLI::ExistingFile);
  e->add_option("--tgt-vocab", ev.tgt_vocab, "Target vocabulary file")->required()->check(CLI::ExistingFile);
  e->add_option("--test", ev.test, "Test corpus")->required()->check(CLI::ExistingFile);
  e->add_option("--format", ev.format, "tsv or jsonl")->check(CLI::IsMember({"tsv", "jsonl"}));
  e->add_option("--score-mode", ev.score_mode, "bash or exact_match")->check(CLI::IsMember({"bash", "exact_match"}));
  e->add_option("--max-len", ev.max_len, "Greedy decoding length limit")->capture_default_str();
  e->add_option("--batch-size", ev.batch_size, "Evaluation batch size")->capture_default_str();
  e->add_option("--experiment", ev.experiment, "Label stored in the report");
  e->add_option("--out", ev.out, "Also write the report JSON here");
  e->add_flag("--any-phase", ev.any_phase, "Allow checkpoints that are not finetuned (baselines)");

  auto* r = app.add_subcommand("run", "Run the full protocol of a manifest into a run directory");
  r->add_option("--manifest", manifest, "Experiment manifest")->required()->check(CLI::ExistingFile);
  r->add_option("--out", out_dir, "Run directory")->required();
  r->add_flag("--quiet", quiet, "Do not echo the training log");

  auto* sw = app.add_subcommand("sweep", "Run a manifest over a (samples, steps) grid");
  sw->add_option("--manifest", manifest, "Base manifest (mode = transfer)")->required()->check(CLI::ExistingFile);
  sw->add_option("--grid", grid, "Cells as samples:steps,... (overrides sweep.grid)");
  sw->add_option("--out", out_dir, "Sweep directory")->required();
  sw->add_flag("--quiet", quiet, "Do not echo training logs");

  std::string pred_path, ref_path;
  auto* sb = app.add_subcommand("score-bash", "Score predicted shell commands against references, line by line");
  sb->add_option("--pred", pred_path, "Predictions, one command per line")->required()->check(CLI::ExistingFile);
  sb->add_option("--ref", ref_path, "References, one command per line")->required()->check(CLI::ExistingFile);

  std::vector<std::string> report_inputs;
  std::string style = "results", tsv_out, report_format = "text";
  auto* rp = app.add_subcommand("report", "Tabulate finished runs or sweeps");
  rp->add_option("runs", report_inputs, "Run, sweep or parent directories")->required();
  rp->add_option("--style", style, "results (experiment, ppl, Acc., BaSH) or compute (Samples, Steps, ...)")
      ->check(CLI::IsMember({"results", "compute"}));
  rp->add_option("--format", report_format, "text or tsv on stdout")->check(CLI::IsMember({"text", "tsv"}));
  rp->add_option("--tsv", tsv_out, "Also write the TSV table here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*g) cmd_gen(gen);
    if (*p) cmd_prep(prep);
    if (*pt) cmd_pretrain(manifest, out_dir, quiet);
    if (*ft) {
      if (unfreeze) {
        std::cerr << "xfer: finetune keeps the core frozen; use a manifest with mode = end_to_end for full training\n";
        return 2;
      }
      cmd_finetune(manifest, checkpoint, out_dir, quiet);
    }
    if (*e) cmd_eval(ev);
    if (*r) cmd_run(manifest, out_dir, quiet);
    if (*sw) cmd_sweep(manifest, grid, out_dir, quiet);
    if (*sb) return cmd_score_bash(pred_path, ref_path);
    if (*rp) cmd_report(report_inputs, style, tsv_out, report_format);
  } catch (const Error& err) {
    std::cerr << "xfer: " << err.what() << '\n';
    return 1;
  } catch (const std::exception& err) {
    std::cerr << "xfer: " << err.what() << '\n';
    return 1;
  }
  return 0;
}
