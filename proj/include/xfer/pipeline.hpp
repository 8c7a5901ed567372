#pragma once

// The three-phase protocol (pretrain, frozen-core finetune, evaluate), the
// baseline modes, compute sweeps and result tables.

#include <array>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <streambuf>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xfer/bitext.hpp"
#include "xfer/checkpoint.hpp"
#include "xfer/error.hpp"
#include "xfer/manifest.hpp"
#include "xfer/metrics.hpp"
#include "xfer/model.hpp"
#include "xfer/trainer.hpp"
#include "xfer/vocab.hpp"

namespace xfer {

using Model = PartitionedModel<float>;

/// A task corpus after transforms and splitting, with vocabularies built on
/// the training part only.
struct TaskData {
  std::size_t total_pairs = 0;
  BitextCorpus train, val, test;
  Vocab src_vocab, tgt_vocab;
  std::vector<EncodedPair> train_pairs, val_pairs;
};

/// Generates or loads the corpus and applies the configured transforms.
inline BitextCorpus materialize_task(const TaskSpec& t, std::uint64_t data_seed) {
  BitextCorpus c;
  if (t.source == "file") {
    c = load_bitext(t.path, parse_format(t.format));
  } else {
    SyntheticOptions o;
    o.n = t.n;
    o.vocab_size = t.vocab_size;
    o.len_min = t.len_min;
    o.len_max = t.len_max;
    o.seed = t.seed;
    o.prefix = t.prefix;
    o.identity = t.identity;
    c = t.source == "copy" ? gen_copy(o) : gen_reversal(o);
  }
  if (t.mask_sql != "none") c = mask_sql(c, parse_side(t.mask_sql));
  if (t.swap) c = swap_direction(c);
  if (t.samples > 0) c = downsample(c, t.samples, derive_seed(data_seed, 0xD0));
  return c;
}

inline TaskData prepare_task(const TaskSpec& t, std::uint64_t data_seed, bool with_test) {
  TaskData d;
  BitextCorpus rest = materialize_task(t, data_seed);
  d.total_pairs = rest.size();
  if (with_test) {
    auto parts = split(rest, t.test_fraction, derive_seed(data_seed, 1));
    rest = std::move(parts.train);
    d.test = std::move(parts.test);
  }
  auto parts = split(rest, t.val_fraction, derive_seed(data_seed, 2));
  d.train = std::move(parts.train);
  d.val = std::move(parts.test);
  d.src_vocab = Vocab::build(d.train.sources());
  d.tgt_vocab = Vocab::build(d.train.targets());
  for (const auto& p : d.train.pairs) d.train_pairs.push_back(encode_pair(d.src_vocab, d.tgt_vocab, p.source, p.target));
  for (const auto& p : d.val.pairs) d.val_pairs.push_back(encode_pair(d.src_vocab, d.tgt_vocab, p.source, p.target));
  return d;
}

struct PhaseOutput {
  Model model;
  TrainResult train;
};

namespace detail {

/// Re-raises an error with the pipeline phase prepended, keeping its kind.
template <typename Fn>
auto tagged(const char* phase, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error& e) {
    throw Error(e.kind(), std::string("[") + phase + "] " + e.what());
  }
}

inline bool same_bits(const Tensor<float>& a, const Tensor<float>& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(), a.data().size() * sizeof(float)) == 0;
}

}  // namespace detail

/// Fails with FreezeViolation unless every core tensor of `after` is
/// bit-identical to `core_ref` and some embedding differs from `embed_ref`.
inline void check_freeze(const Model& core_ref, const Model& embed_ref, const Model& after) {
  require(core_ref.params().size() == after.params().size(), ErrorKind::FreezeViolation, "tensor inventory changed");
  bool embedding_moved = false;
  for (std::size_t i = 0; i < after.params().size(); ++i) {
    const auto& p = after.params()[i];
    if (Model::partition_of(p.name) == Partition::Core) {
      require(detail::same_bits(core_ref.params()[i].value, p.value), ErrorKind::FreezeViolation,
              "core tensor '" + p.name + "' changed during finetuning");
    } else if (!detail::same_bits(embed_ref.params()[i].value, p.value)) {
      embedding_moved = true;
    }
  }
  require(core_ref.partition_checksum(Partition::Core) == after.partition_checksum(Partition::Core),
          ErrorKind::FreezeViolation, "core checksum changed during finetuning");
  require(embedding_moved, ErrorKind::FreezeViolation, "no embedding tensor changed during finetuning");
}

/// Trains every parameter on the upstream task.
inline PhaseOutput pretrain(const ExperimentManifest& m, const TaskData& up, std::ostream* log = nullptr) {
  return detail::tagged("pretrain", [&] {
    PhaseOutput out{Model::build(m.model, up.src_vocab.size(), up.tgt_vocab.size(), m.init_scheme(), m.seed_model), {}};
    out.model.set_trainable(PartitionSelector::All, true);
    if (log) *log << "pretrain: " << up.train_pairs.size() << " train / " << up.val_pairs.size() << " val pairs, "
                  << out.model.parameter_count() << " parameters\n";
    out.train = train(out.model, std::span<const EncodedPair>(up.train_pairs), std::span<const EncodedPair>(up.val_pairs),
                      m.train_options(m.pretrain, 1), log);
    out.model.set_phase(Phase::Pretrained);
    return out;
  });
}

/// Trains only the embeddings of `model` on the downstream task and checks
/// the freeze contract against `core_ref`.
inline PhaseOutput finetune_embeddings(Model model, const Model& core_ref, const ExperimentManifest& m,
                                       const TaskData& down, std::ostream* log = nullptr) {
  return detail::tagged("finetune", [&] {
    model.set_trainable(PartitionSelector::All, false);
    model.set_trainable(PartitionSelector::Embeddings, true);
    const Model embed_ref = model;
    PhaseOutput out{std::move(model), {}};
    if (log) *log << "finetune: " << down.train_pairs.size() << " train / " << down.val_pairs.size() << " val pairs\n";
    out.train = train(out.model, std::span<const EncodedPair>(down.train_pairs),
                      std::span<const EncodedPair>(down.val_pairs), m.train_options(m.finetune, 2), log);
    check_freeze(core_ref, embed_ref, out.model);
    if (log) *log << "finetune: core unchanged (checksum " << out.model.partition_checksum(Partition::Core) << ")\n";
    out.model.set_phase(Phase::Finetuned);
    return out;
  });
}

/// Swaps in fresh embeddings sized for the downstream vocabularies, freezes
/// the core and trains the embeddings.
inline PhaseOutput finetune_frozen(const Model& pretrained, const ExperimentManifest& m, const TaskData& down,
                                   std::ostream* log = nullptr) {
  Model swapped = detail::tagged("finetune", [&] {
    return pretrained.swap_embeddings(down.src_vocab.size(), down.tgt_vocab.size(), derive_seed(m.seed_model, 0xE0));
  });
  return finetune_embeddings(std::move(swapped), pretrained, m, down, log);
}

/// Frozen random core (Xavier or Uniform): fresh model, embeddings trained.
inline PhaseOutput random_core_baseline(const ExperimentManifest& m, InitScheme scheme, const TaskData& down,
                                        std::ostream* log = nullptr) {
  const Model init = detail::tagged("init", [&] {
    return Model::build(m.model, down.src_vocab.size(), down.tgt_vocab.size(), scheme, m.seed_model);
  });
  return finetune_embeddings(init, init, m, down, log);
}

/// Whole model trained on the downstream task only, with the finetune budget.
inline PhaseOutput end_to_end(const ExperimentManifest& m, const TaskData& down, std::ostream* log = nullptr) {
  return detail::tagged("end_to_end", [&] {
    PhaseOutput out{
        Model::build(m.model, down.src_vocab.size(), down.tgt_vocab.size(), m.init_scheme(), m.seed_model), {}};
    out.model.set_trainable(PartitionSelector::All, true);
    out.train = train(out.model, std::span<const EncodedPair>(down.train_pairs),
                      std::span<const EncodedPair>(down.val_pairs), m.train_options(m.finetune, 3), log);
    out.model.set_phase(Phase::Pretrained);
    return out;
  });
}

inline CheckpointInfo checkpoint_info(const ExperimentManifest& m, const Vocab& src, const Vocab& tgt) {
  CheckpointInfo info;
  info.src_vocab_hash = src.content_hash();
  info.tgt_vocab_hash = tgt.content_hash();
  info.extra["experiment"] = m.experiment;
  info.extra["mode"] = m.mode;
  const std::string text = m.serialize();
  info.extra["manifest_hash"] = std::to_string(fnv1a(text.data(), text.size()));
  return info;
}

/// Bookkeeping beside report.json: sizes and step counts per phase.
struct RunInfo {
  std::string experiment;
  std::string mode;
  std::uint64_t upstream_pairs = 0;
  std::uint64_t pretrain_max_steps = 0;
  std::uint64_t pretrain_steps = 0;
  std::uint64_t downstream_pairs = 0;
  std::uint64_t finetune_steps = 0;
  std::uint64_t core_checksum = 0;

  nlohmann::ordered_json to_json() const {
    return {{"experiment", experiment},         {"mode", mode},
            {"upstream_pairs", upstream_pairs}, {"pretrain_max_steps", pretrain_max_steps},
            {"pretrain_steps", pretrain_steps}, {"downstream_pairs", downstream_pairs},
            {"finetune_steps", finetune_steps}, {"core_checksum", core_checksum}};
  }
  static RunInfo from_json(const nlohmann::json& j) {
    RunInfo r;
    try {
      r.experiment = j.at("experiment").get<std::string>();
      r.mode = j.at("mode").get<std::string>();
      r.upstream_pairs = j.at("upstream_pairs").get<std::uint64_t>();
      r.pretrain_max_steps = j.at("pretrain_max_steps").get<std::uint64_t>();
      r.pretrain_steps = j.at("pretrain_steps").get<std::uint64_t>();
      r.downstream_pairs = j.at("downstream_pairs").get<std::uint64_t>();
      r.finetune_steps = j.at("finetune_steps").get<std::uint64_t>();
      r.core_checksum = j.at("core_checksum").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::ParseError, std::string("run info: ") + e.what());
    }
    return r;
  }
};

struct RunOutcome {
  MetricReport report;
  RunInfo info;
};

namespace detail {

/// Writes everything to two streams.
class TeeBuf : public std::streambuf {
 public:
  TeeBuf(std::streambuf* a, std::streambuf* b) : a_(a), b_(b) {}

 protected:
  int overflow(int c) override {
    if (c == EOF) return 0;
    const int ra = a_->sputc(static_cast<char>(c));
    const int rb = b_ ? b_->sputc(static_cast<char>(c)) : c;
    return ra == EOF || rb == EOF ? EOF : c;
  }
  int sync() override { return (a_->pubsync() == 0 && (!b_ || b_->pubsync() == 0)) ? 0 : -1; }

 private:
  std::streambuf* a_;
  std::streambuf* b_;
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::IoError, "cannot write " + path.string());
  out << text;
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::IoError, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace detail

inline TaskData prepare_upstream(const ExperimentManifest& m) {
  return detail::tagged("data", [&] { return prepare_task(m.upstream, m.seed_data, false); });
}

inline TaskData prepare_downstream(const ExperimentManifest& m) {
  return detail::tagged("data", [&] { return prepare_task(m.downstream, derive_seed(m.seed_data, 0xD5), true); });
}

/// Writes the downstream vocabularies and held-out test split into `dir`.
inline void save_downstream(const TaskData& down, const std::filesystem::path& dir) {
  down.src_vocab.save((dir / "downstream.src.vocab").string());
  down.tgt_vocab.save((dir / "downstream.tgt.vocab").string());
  write_bitext(down.test, (dir / "downstream.test.tsv").string(), BitextFormat::Tsv);
}

/// Runs the experiment described by `m` into `dir`: manifest copy, vocabularies,
/// every checkpoint, the training log, report.json and run.json.
inline RunOutcome run_experiment(const ExperimentManifest& m, const std::filesystem::path& dir,
                                 std::ostream* echo = nullptr) {
  m.validate();
  std::filesystem::create_directories(dir);
  m.save((dir / "manifest.txt").string());
  std::ofstream log_file(dir / "train.log", std::ios::binary);
  require(static_cast<bool>(log_file), ErrorKind::IoError, "cannot write " + (dir / "train.log").string());
  detail::TeeBuf tee(log_file.rdbuf(), echo ? echo->rdbuf() : nullptr);
  std::ostream log(&tee);

  RunOutcome out;
  out.info.experiment = m.experiment;
  out.info.mode = m.mode;
  const ExperimentMode mode = m.parsed_mode();
  log << "experiment " << m.experiment << " (mode " << m.mode << ")\n";

  PhaseOutput fin;
  if (mode == ExperimentMode::Transfer) {
    const TaskData up = prepare_upstream(m);
    up.src_vocab.save((dir / "upstream.src.vocab").string());
    up.tgt_vocab.save((dir / "upstream.tgt.vocab").string());
    PhaseOutput pre = pretrain(m, up, &log);
    save_checkpoint(pre.model, checkpoint_info(m, up.src_vocab, up.tgt_vocab), (dir / "pretrained.ckpt").string());
    out.info.upstream_pairs = up.total_pairs;
    out.info.pretrain_max_steps = m.pretrain.max_steps;
    out.info.pretrain_steps = pre.train.steps;
    const TaskData down = prepare_downstream(m);
    save_downstream(down, dir);
    fin = finetune_frozen(pre.model, m, down, &log);
    save_checkpoint(fin.model, checkpoint_info(m, down.src_vocab, down.tgt_vocab), (dir / "finetuned.ckpt").string());
    out.info.downstream_pairs = down.total_pairs;
    out.report = detail::tagged("eval", [&] {
      return evaluate_full(fin.model, down.src_vocab, down.tgt_vocab, down.test,
                           DecodeConfig{m.decode_max_len, m.decode_batch_size}, parse_score_mode(m.score_mode),
                           m.experiment);
    });
  } else {
    const TaskData down = prepare_downstream(m);
    save_downstream(down, dir);
    out.info.downstream_pairs = down.total_pairs;
    const CheckpointInfo info = checkpoint_info(m, down.src_vocab, down.tgt_vocab);
    if (mode == ExperimentMode::EndToEnd) {
      fin = end_to_end(m, down, &log);
      save_checkpoint(fin.model, info, (dir / "end_to_end.ckpt").string());
    } else {
      const InitScheme scheme =
          mode == ExperimentMode::Xavier ? InitScheme::xavier() : InitScheme::uniform(m.init_half_width);
      save_checkpoint(Model::build(m.model, down.src_vocab.size(), down.tgt_vocab.size(), scheme, m.seed_model), info,
                      (dir / "initial.ckpt").string());
      fin = random_core_baseline(m, scheme, down, &log);
      save_checkpoint(fin.model, info, (dir / "finetuned.ckpt").string());
    }
    out.report = detail::tagged("eval", [&] {
      return evaluate_full(fin.model, down.src_vocab, down.tgt_vocab, down.test,
                           DecodeConfig{m.decode_max_len, m.decode_batch_size}, parse_score_mode(m.score_mode),
                           m.experiment, mode == ExperimentMode::EndToEnd);
    });
  }
  out.info.finetune_steps = fin.train.steps;
  out.info.core_checksum = fin.model.partition_checksum(Partition::Core);
  detail::write_text(dir / "report.json", out.report.to_json_text());
  detail::write_text(dir / "run.json", out.info.to_json().dump(2) + "\n");
  log << "ppl " << out.report.perplexity << " acc " << out.report.accuracy_pct << " score " << out.report.bash_score
      << "\n";
  log.flush();
  return out;
}

// ---------------------------------------------------------------------------
// Tables

enum class TableStyle { Results, Compute };

inline TableStyle parse_table_style(std::string_view s) {
  if (s == "results") return TableStyle::Results;
  if (s == "compute") return TableStyle::Compute;
  fail(ErrorKind::InvalidArgument, "unknown table style '" + std::string(s) + "' (results or compute)");
}

struct TableRow {
  std::string experiment;
  std::uint64_t samples = 0;
  std::uint64_t steps = 0;
  std::optional<MetricReport> report;  // empty when the run failed
  std::string error;
};

struct ResultsTable {
  TableStyle style = TableStyle::Results;
  std::vector<TableRow> rows;

  std::vector<std::string> header() const {
    if (style == TableStyle::Results) return {"experiment", "ppl", "Acc.", "BaSH"};
    return {"Samples", "Steps", "ppl", "Acc.", "BaSH"};
  }

  /// Per row, whether its ppl / Acc. / BaSH is the column best (lowest ppl,
  /// highest Acc. and BaSH). Ties are all marked.
  std::vector<std::array<bool, 3>> best() const {
    std::array<double, 3> target{};
    std::array<bool, 3> seen{};
    for (const auto& r : rows) {
      if (!r.report) continue;
      const std::array<double, 3> v{r.report->perplexity, r.report->accuracy_pct, r.report->bash_score};
      for (int k = 0; k < 3; ++k) {
        if (!seen[k] || (k == 0 ? v[k] < target[k] : v[k] > target[k])) target[k] = v[k];
        seen[k] = true;
      }
    }
    std::vector<std::array<bool, 3>> out;
    for (const auto& r : rows) {
      std::array<bool, 3> b{};
      if (r.report) {
        b = {r.report->perplexity == target[0], r.report->accuracy_pct == target[1], r.report->bash_score == target[2]};
      }
      out.push_back(b);
    }
    return out;
  }

  /// Cells as strings; best markers are added by text() only.
  std::vector<std::vector<std::string>> cells() const {
    auto fixed = [](double v, int digits) {
      std::ostringstream os;
      os << std::fixed << std::setprecision(digits) << v;
      return os.str();
    };
    std::vector<std::vector<std::string>> out;
    for (const auto& r : rows) {
      std::vector<std::string> c;
      if (style == TableStyle::Results) {
        c.push_back(r.experiment);
      } else {
        c.push_back(std::to_string(r.samples));
        c.push_back(std::to_string(r.steps));
      }
      if (r.report) {
        c.push_back(fixed(r.report->perplexity, 2));
        c.push_back(fixed(r.report->accuracy_pct, 1));
        c.push_back(fixed(r.report->bash_score, 1));
      } else {
        c.insert(c.end(), 3, "");
      }
      out.push_back(std::move(c));
    }
    return out;
  }

  std::string tsv() const {
    std::string out;
    auto line = [&](const std::vector<std::string>& c) {
      for (std::size_t i = 0; i < c.size(); ++i) out += (i ? "\t" : "") + c[i];
      out += '\n';
    };
    line(header());
    for (const auto& c : cells()) line(c);
    return out;
  }

  /// Aligned plain text; column bests carry a trailing '*', failed runs a note.
  std::string text() const {
    auto body = cells();
    const auto marks = best();
    const std::size_t first_metric = style == TableStyle::Results ? 1 : 2;
    for (std::size_t r = 0; r < body.size(); ++r) {
      for (std::size_t k = 0; k < 3; ++k) {
        if (marks[r][k]) body[r][first_metric + k] += "*";
      }
      if (!rows[r].report) body[r][first_metric] = "failed: " + rows[r].error;
    }
    const auto head = header();
    std::vector<std::size_t> width(head.size());
    for (std::size_t i = 0; i < head.size(); ++i) width[i] = head[i].size();
    for (const auto& c : body) {
      for (std::size_t i = 0; i < c.size(); ++i) width[i] = std::max(width[i], c[i].size());
    }
    std::string out;
    auto line = [&](const std::vector<std::string>& c) {
      std::string l;
      for (std::size_t i = 0; i < c.size(); ++i) {
        const bool left = style == TableStyle::Results && i == 0;
        const std::string pad(width[i] - c[i].size(), ' ');
        l += (i ? "  " : "") + (left ? c[i] + pad : pad + c[i]);
      }
      while (!l.empty() && l.back() == ' ') l.pop_back();
      out += l + '\n';
    };
    line(head);
    std::size_t total = 0;
    for (std::size_t w : width) total += w;
    out += std::string(total + 2 * (width.size() - 1), '-') + '\n';
    for (const auto& c : body) line(c);
    out += "* best in column\n";
    return out;
  }
};

inline ResultsTable emit_table(std::vector<TableRow> rows, TableStyle style) {
  require(!rows.empty(), ErrorKind::InvalidArgument, "a table needs at least one run");
  return ResultsTable{style, std::move(rows)};
}

/// Reads a finished run directory back as a table row.
inline TableRow load_run_row(const std::filesystem::path& dir) {
  TableRow row;
  const MetricReport report = MetricReport::parse(detail::read_text(dir / "report.json"));
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_text(dir / "run.json"));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::ParseError, (dir / "run.json").string() + ": " + e.what());
  }
  const RunInfo info = RunInfo::from_json(j);
  row.experiment = report.experiment.empty() ? info.experiment : report.experiment;
  row.samples = info.upstream_pairs;
  row.steps = info.pretrain_max_steps;
  row.report = report;
  return row;
}

/// The manifest for one sweep cell: upstream downsampled to `samples`, a
/// fixed pretraining budget of `steps` (early stopping off).
inline ExperimentManifest sweep_cell(const ExperimentManifest& base, std::uint64_t samples, std::uint64_t steps) {
  ExperimentManifest m = base;
  m.experiment = base.experiment + "-n" + std::to_string(samples) + "-s" + std::to_string(steps);
  m.upstream.samples = samples;
  m.pretrain.max_steps = steps;
  m.pretrain.patience = 0;
  m.sweep_grid.clear();
  return m;
}

/// One run per grid cell, in grid order, each in its own subdirectory. A
/// failing cell is recorded and the sweep continues.
inline std::vector<TableRow> run_sweep(const ExperimentManifest& base,
                                       const std::vector<std::pair<std::uint64_t, std::uint64_t>>& grid,
                                       const std::filesystem::path& dir, std::ostream* echo = nullptr) {
  require(!grid.empty(), ErrorKind::InvalidArgument, "empty sweep grid");
  require(base.parsed_mode() == ExperimentMode::Transfer, ErrorKind::InvalidArgument,
          "sweeps vary the pretraining budget and need mode = transfer");
  std::filesystem::create_directories(dir);
  std::vector<TableRow> rows;
  nlohmann::ordered_json cells = nlohmann::ordered_json::array();
  for (const auto& [samples, steps] : grid) {
    const ExperimentManifest m = sweep_cell(base, samples, steps);
    cells.push_back(m.experiment);
    TableRow row;
    row.experiment = m.experiment;
    row.samples = samples;
    row.steps = steps;
    try {
      const RunOutcome r = run_experiment(m, dir / m.experiment, echo);
      row.samples = r.info.upstream_pairs;
      row.report = r.report;
    } catch (const Error& e) {
      row.error = e.what();
      if (echo) *echo << "cell " << m.experiment << " failed: " << e.what() << '\n';
    }
    rows.push_back(std::move(row));
    detail::write_text(dir / "sweep.json", nlohmann::ordered_json{{"cells", cells}}.dump(2) + "\n");
  }
  const ResultsTable table = emit_table(rows, TableStyle::Compute);
  detail::write_text(dir / "table.tsv", table.tsv());
  detail::write_text(dir / "table.txt", table.text());
  return rows;
}

/// Expands report arguments into run directories: a sweep directory yields its
/// cells in grid order, a run directory itself, anything else its
/// subdirectories by name.
inline std::vector<std::filesystem::path> collect_runs(const std::vector<std::filesystem::path>& args) {
  std::vector<std::filesystem::path> out;
  for (const auto& a : args) {
    if (std::filesystem::exists(a / "sweep.json")) {
      const auto j = nlohmann::json::parse(detail::read_text(a / "sweep.json"));
      for (const auto& c : j.at("cells")) out.push_back(a / c.get<std::string>());
    } else if (std::filesystem::exists(a / "report.json")) {
      out.push_back(a);
    } else {
      require(std::filesystem::is_directory(a), ErrorKind::IoError, "no run found at " + a.string());
      std::vector<std::filesystem::path> subs;
      for (const auto& e : std::filesystem::directory_iterator(a)) {
        if (e.is_directory() && std::filesystem::exists(e.path() / "report.json")) subs.push_back(e.path());
      }
      std::sort(subs.begin(), subs.end());
      require(!subs.empty(), ErrorKind::IoError, "no run found under " + a.string());
      out.insert(out.end(), subs.begin(), subs.end());
    }
  }
  return out;
}

}  // namespace xfer
