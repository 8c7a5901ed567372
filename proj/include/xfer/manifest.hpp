#pragma once

// Experiment manifests: flat "key = value" text. Every key has a default, and
// the canonical form written into run directories lists all of them, so a
// copied manifest replays the run without any other input.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

#include "xfer/error.hpp"
#include "xfer/model.hpp"
#include "xfer/trainer.hpp"

namespace xfer {

/// Where a corpus comes from and what happens to it before use.
struct TaskSpec {
  std::string source = "copy";  // copy | reversal | file
  std::string path;             // for source = file
  std::string format = "tsv";
  std::uint64_t n = 10000;
  std::uint64_t vocab_size = 50;
  std::uint64_t len_min = 3;
  std::uint64_t len_max = 12;
  std::uint64_t seed = 0;
  std::string prefix = "w";
  bool identity = false;
  std::string mask_sql = "none";  // none | source | target | both
  bool swap = false;
  std::uint64_t samples = 0;  // downsample to this many pairs; 0 keeps all
  double test_fraction = 0.1;
  double val_fraction = 0.05;
  friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

struct BudgetSpec {
  std::uint64_t max_steps = 5000;
  std::uint64_t batch_size = 64;
  double lr = 3e-4;
  std::uint64_t warmup = 400;
  std::uint64_t eval_every = 250;
  std::uint64_t patience = 5;
  bool restore_best = true;
  std::uint64_t bucket_window = 16;
  friend bool operator==(const BudgetSpec&, const BudgetSpec&) = default;
};

enum class ExperimentMode { Transfer, Xavier, Uniform, EndToEnd };

inline ExperimentMode parse_mode(std::string_view s) {
  if (s == "transfer") return ExperimentMode::Transfer;
  if (s == "xavier") return ExperimentMode::Xavier;
  if (s == "uniform") return ExperimentMode::Uniform;
  if (s == "end_to_end") return ExperimentMode::EndToEnd;
  fail(ErrorKind::ParseError, "unknown mode '" + std::string(s) + "' (transfer, xavier, uniform, end_to_end)");
}

struct ExperimentManifest {
  std::string experiment = "experiment";
  std::string mode = "transfer";
  TaskSpec upstream;
  TaskSpec downstream;
  ModelConfig model = ModelConfig::base();
  std::string init = "xavier";  // core init for transfer mode
  double init_half_width = 0.1;
  BudgetSpec pretrain{50000};
  BudgetSpec finetune{5000};
  std::uint64_t decode_max_len = 64;
  std::uint64_t decode_batch_size = 64;
  std::string score_mode = "exact_match";
  std::uint64_t seed_model = 0;
  std::uint64_t seed_data = 0;
  std::uint64_t seed_order = 0;
  std::string sweep_grid;  // "samples:steps,samples:steps"

  friend bool operator==(const ExperimentManifest&, const ExperimentManifest&) = default;

  ExperimentMode parsed_mode() const { return parse_mode(mode); }
  InitScheme init_scheme() const {
    return init == "uniform" ? InitScheme::uniform(init_half_width) : InitScheme::xavier();
  }

  /// Calls v(key, member) for every key in canonical order.
  template <typename Self, typename V>
  static void visit(Self& m, V&& v) {
    v("experiment", m.experiment);
    v("mode", m.mode);
    auto task = [&](const std::string& p, auto& t) {
      v(p + ".source", t.source);
      v(p + ".path", t.path);
      v(p + ".format", t.format);
      v(p + ".n", t.n);
      v(p + ".vocab_size", t.vocab_size);
      v(p + ".len_min", t.len_min);
      v(p + ".len_max", t.len_max);
      v(p + ".seed", t.seed);
      v(p + ".prefix", t.prefix);
      v(p + ".identity", t.identity);
      v(p + ".mask_sql", t.mask_sql);
      v(p + ".swap", t.swap);
      v(p + ".samples", t.samples);
      v(p + ".test_fraction", t.test_fraction);
      v(p + ".val_fraction", t.val_fraction);
    };
    task("upstream", m.upstream);
    task("downstream", m.downstream);
    v("model.layers", m.model.layers);
    v("model.heads", m.model.heads);
    v("model.d_model", m.model.d_model);
    v("model.d_ffn", m.model.d_ffn);
    v("model.dropout", m.model.dropout);
    v("model.label_smoothing", m.model.label_smoothing);
    v("model.max_positions", m.model.max_positions);
    v("model.init", m.init);
    v("model.init_half_width", m.init_half_width);
    auto budget = [&](const std::string& p, auto& b) {
      v(p + ".max_steps", b.max_steps);
      v(p + ".batch_size", b.batch_size);
      v(p + ".lr", b.lr);
      v(p + ".warmup", b.warmup);
      v(p + ".eval_every", b.eval_every);
      v(p + ".patience", b.patience);
      v(p + ".restore_best", b.restore_best);
      v(p + ".bucket_window", b.bucket_window);
    };
    budget("pretrain", m.pretrain);
    budget("finetune", m.finetune);
    v("decode.max_len", m.decode_max_len);
    v("decode.batch_size", m.decode_batch_size);
    v("eval.score_mode", m.score_mode);
    v("seeds.model", m.seed_model);
    v("seeds.data", m.seed_data);
    v("seeds.order", m.seed_order);
    v("sweep.grid", m.sweep_grid);
  }

  void validate() const {
    (void)parsed_mode();
    require(!experiment.empty() && experiment.find_first_of("/\\ \t") == std::string::npos, ErrorKind::ParseError,
            "experiment name must be a non-empty word without slashes");
    require(init == "xavier" || init == "uniform", ErrorKind::ParseError, "model.init must be xavier or uniform");
    require(init_half_width > 0, ErrorKind::ParseError, "model.init_half_width must be positive");
    require(score_mode == "bash" || score_mode == "exact_match", ErrorKind::ParseError,
            "eval.score_mode must be bash or exact_match");
    for (const auto* t : {&upstream, &downstream}) {
      require(t->source == "copy" || t->source == "reversal" || t->source == "file", ErrorKind::ParseError,
              "task source must be copy, reversal or file");
      require(t->source != "file" || !t->path.empty(), ErrorKind::ParseError, "file task needs a path");
      require(t->mask_sql == "none" || t->mask_sql == "source" || t->mask_sql == "target" || t->mask_sql == "both",
              ErrorKind::ParseError, "mask_sql must be none, source, target or both");
      require(t->format == "tsv" || t->format == "jsonl", ErrorKind::ParseError, "format must be tsv or jsonl");
      require(t->test_fraction > 0 && t->test_fraction < 1 && t->val_fraction > 0 && t->val_fraction < 1,
              ErrorKind::ParseError, "split fractions must lie in (0, 1)");
    }
    for (const auto* b : {&pretrain, &finetune}) {
      require(b->batch_size > 0 && b->lr > 0, ErrorKind::ParseError, "batch_size and lr must be positive");
    }
    require(decode_max_len > 0 && decode_batch_size > 0, ErrorKind::ParseError, "decode sizes must be positive");
    try {
      model.validate();
    } catch (const Error& e) {
      fail(ErrorKind::ParseError, std::string("model: ") + e.what());
    }
    (void)grid();
  }

  /// The sweep grid as (samples, steps) cells.
  std::vector<std::pair<std::uint64_t, std::uint64_t>> grid() const {
    std::vector<std::pair<std::uint64_t, std::uint64_t>> out;
    std::stringstream ss(sweep_grid);
    for (std::string cell; std::getline(ss, cell, ',');) {
      const std::size_t colon = cell.find(':');
      std::uint64_t n = 0, s = 0;
      bool ok = colon != std::string::npos;
      if (ok) {
        const auto a = std::from_chars(cell.data(), cell.data() + colon, n);
        const auto b = std::from_chars(cell.data() + colon + 1, cell.data() + cell.size(), s);
        ok = a.ec == std::errc{} && a.ptr == cell.data() + colon && b.ec == std::errc{} &&
             b.ptr == cell.data() + cell.size() && n > 0 && s > 0;
      }
      require(ok, ErrorKind::ParseError, "bad sweep cell '" + cell + "' (want samples:steps)");
      out.emplace_back(n, s);
    }
    return out;
  }

  TrainOptions train_options(const BudgetSpec& b, std::uint64_t phase_tag) const {
    TrainOptions o;
    o.max_steps = b.max_steps;
    o.batch_size = b.batch_size;
    o.adam.lr = b.lr;
    o.warmup = b.warmup;
    o.eval_every = b.eval_every;
    o.patience = b.patience;
    o.restore_best = b.restore_best;
    o.bucket_window = b.bucket_window;
    o.order_seed = derive_seed(seed_order, phase_tag);
    o.dropout_seed = derive_seed(seed_order, phase_tag + 100);
    return o;
  }

  /// Canonical text: every key, in fixed order, one per line.
  std::string serialize() const;
  /// Parses manifest text. Unknown or repeated keys are errors; missing keys
  /// keep their defaults. Relative file paths resolve against `base_dir`.
  static ExperimentManifest parse(std::string_view text, const std::filesystem::path& base_dir = {});
  static ExperimentManifest load(const std::string& path);
  void save(const std::string& path) const;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string format_value(const std::string& v) { return v; }
inline std::string format_value(bool v) { return v ? "true" : "false"; }
inline std::string format_value(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}
template <typename I>
  requires std::is_integral_v<I>
std::string format_value(I v) {
  return std::to_string(v);
}

inline void parse_value(const std::string& key, const std::string& s, std::string& out) {
  (void)key;
  out = s;
}
inline void parse_value(const std::string& key, const std::string& s, bool& out) {
  if (s == "true" || s == "1") {
    out = true;
  } else if (s == "false" || s == "0") {
    out = false;
  } else {
    fail(ErrorKind::ParseError, "'" + key + "' wants true or false, got '" + s + "'");
  }
}
inline void parse_value(const std::string& key, const std::string& s, double& out) {
  std::size_t used = 0;
  try {
    out = std::stod(s, &used);
  } catch (const std::logic_error&) {
    used = 0;
  }
  require(!s.empty() && used == s.size(), ErrorKind::ParseError, "'" + key + "' wants a number, got '" + s + "'");
}
template <typename I>
  requires std::is_integral_v<I>
void parse_value(const std::string& key, const std::string& s, I& out) {
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  require(!s.empty() && ec == std::errc{} && end == s.data() + s.size(), ErrorKind::ParseError,
          "'" + key + "' wants a non-negative integer, got '" + s + "'");
}

}  // namespace detail

inline std::string ExperimentManifest::serialize() const {
  std::string out;
  visit(*this, [&](const std::string& key, const auto& value) {
    out += key + " = " + detail::format_value(value) + "\n";
  });
  return out;
}

inline ExperimentManifest ExperimentManifest::parse(std::string_view text, const std::filesystem::path& base_dir) {
  std::map<std::string, std::string> kv;
  std::istringstream in{std::string(text)};
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const std::size_t eq = t.find('=');
    require(eq != std::string::npos, ErrorKind::ParseError,
            "manifest line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = detail::trim(std::string_view(t).substr(0, eq));
    require(!key.empty(), ErrorKind::ParseError, "manifest line " + std::to_string(lineno) + ": empty key");
    require(kv.emplace(key, detail::trim(std::string_view(t).substr(eq + 1))).second, ErrorKind::ParseError,
            "manifest key '" + key + "' given twice");
  }
  ExperimentManifest m;
  std::size_t used = 0;
  visit(m, [&](const std::string& key, auto& member) {
    auto it = kv.find(key);
    if (it == kv.end()) return;
    detail::parse_value(key, it->second, member);
    ++used;
  });
  if (used != kv.size()) {
    std::map<std::string, bool> known;
    visit(m, [&](const std::string& key, const auto&) { known[key] = true; });
    for (const auto& [k, v] : kv) require(known.contains(k), ErrorKind::ParseError, "unknown manifest key '" + k + "'");
  }
  if (!base_dir.empty()) {
    for (TaskSpec* t : {&m.upstream, &m.downstream}) {
      if (!t->path.empty() && std::filesystem::path(t->path).is_relative()) {
        t->path = (base_dir / t->path).lexically_normal().string();
      }
    }
  }
  m.validate();
  return m;
}

inline ExperimentManifest ExperimentManifest::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::IoError, "cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), std::filesystem::absolute(path).parent_path());
}

inline void ExperimentManifest::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::IoError, "cannot write " + path);
  out << serialize();
}

}  // namespace xfer
