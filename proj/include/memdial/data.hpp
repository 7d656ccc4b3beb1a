#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "memdial/hash.hpp"
#include "memdial/rng.hpp"
#include "memdial/tokenizer.hpp"

#include <json.hpp>

namespace memdial {

using Json = nlohmann::json;

// ---------------------------------------------------------------------------
// Vocabulary pools for the synthetic world. Pools are letter-disjoint enough
// that byte frequencies order the tiers by construction: filler text is
// dominated by the common pool, the rare pool leans on q/x/z/j/k letters.
// ---------------------------------------------------------------------------
namespace words {

inline const std::vector<std::string>& common() {
  static const std::vector<std::string> v = {
      "the", "and", "state", "main", "time", "line", "data", "rate",
      "note", "site", "rest", "near", "tone", "train", "sense", "store"};
  return v;
}

inline const std::vector<std::string>& mid() {
  static const std::vector<std::string> v = {
      "cloud", "plum",  "chart", "gulf",  "dome",  "pulse", "lamp",  "crumb",
      "humid", "ladle", "punch", "glide", "bloom", "chalk", "mound", "pouch",
      "clamp", "dune",  "mulch", "plume", "lodge", "chump", "gland", "hedge"};
  return v;
}

inline const std::vector<std::string>& rare() {
  static const std::vector<std::string> v = {
      "quiz",  "waxy",  "jinx",  "vex",   "zeal",  "quay",  "jazz",  "wick",
      "knack", "vixen", "zinc",  "xylem", "wizen", "jackal", "kayak", "wax",
      "java",  "knave", "quark", "zebec", "xenon", "jibe",  "kudzu", "vim",
      "zarf",  "waltz", "junk",  "kiwi",  "verve", "quip",  "xebec", "jowl",
      "whiz",  "vying", "qoph",  "zloty", "kempt", "knez",  "vozhd", "qadi"};
  return v;
}

inline const std::vector<std::string>& once() {
  static const std::vector<std::string> v = {
      "orbit", "ember",  "frost",  "tulip",  "crane",  "maple", "ridge",  "comet",
      "pearl", "cedar",  "birch",  "otter",  "heron",  "lagoon", "mesa",  "delta",
      "atoll", "grove",  "marsh",  "spire",  "flint",  "cobalt", "umber", "ochre",
      "indigo", "sepia", "basalt", "shale",  "slate",  "gneiss", "loess", "amber"};
  return v;
}

inline const std::vector<std::string>& keys() {
  static const std::vector<std::string> v = {
      "fox",    "owl",    "elk",    "lynx",  "hare",  "wolf",   "bear",   "crow",
      "swan",   "dove",   "wren",   "toad",  "newt",  "carp",   "pike",   "sole",
      "slug",   "wasp",   "moth",   "bee",   "ant",   "ram",    "ewe",    "colt",
      "mare",   "bull",   "calf",   "hen",   "drake", "goose",  "finch",  "stork",
      "crab",   "clam",   "squid",  "eel",   "orca",  "seal",   "mink",   "vole",
      "shrew",  "mole",   "bat",    "lark",  "teal",  "rook",   "jay",    "tern",
      "gull",   "auk",    "ibis",   "egret", "kite",  "hawk",   "kestrel", "osprey",
      "raven",  "magpie", "robin",  "thrush", "siskin", "plover", "curlew", "avocet"};
  return v;
}

inline const std::vector<std::string>& values() {
  static const std::vector<std::string> v = {
      "red",    "blue",   "green",  "gold",  "gray",  "pink",   "black",  "white",
      "brown",  "violet", "coral",  "cream", "olive", "navy",   "silver", "bronze",
      "copper", "ivory",  "jade",   "ruby",  "topaz", "onyx",   "beryl",  "agate",
      "opal",   "flax",   "rose",   "sage",  "mint",  "rust",   "sand",   "snow"};
  return v;
}

}  // namespace words

// ---------------------------------------------------------------------------
// Core data types
// ---------------------------------------------------------------------------

enum class SeqKind { filler, background, tier_high, tier_mid, tier_rare, once };

inline std::string to_string(SeqKind k) {
  switch (k) {
    case SeqKind::filler: return "filler";
    case SeqKind::background: return "background";
    case SeqKind::tier_high: return "tier_high";
    case SeqKind::tier_mid: return "tier_mid";
    case SeqKind::tier_rare: return "tier_rare";
    case SeqKind::once: return "once";
  }
  return "?";
}

struct CorpusSeq {
  std::string text;
  SeqKind kind = SeqKind::filler;

  /// Training token stream: BOS + bytes + EOS.
  std::vector<int> tokens() const {
    std::vector<int> t;
    t.reserve(text.size() + 2);
    t.push_back(tok::kBos);
    for (unsigned char c : text) t.push_back(static_cast<int>(c));
    t.push_back(tok::kEos);
    return t;
  }
};

/// Base training sequences plus the injected (leaked) ones; an injected
/// sequence never appears in the base portion.
struct Corpus {
  std::vector<CorpusSeq> base;
  std::vector<std::vector<int>> injected;  // serialized seen items (token streams)
};

struct BenchmarkItem {
  std::string prompt;
  std::vector<std::string> choices;
  int gold_index = 0;

  void validate() const {
    if (choices.size() < 2 || choices.size() > 4) {
      throw std::invalid_argument("BenchmarkItem: need 2..4 choices");
    }
    if (gold_index < 0 || gold_index >= static_cast<int>(choices.size())) {
      throw std::invalid_argument("BenchmarkItem: gold_index out of range");
    }
    for (std::size_t i = 0; i < choices.size(); ++i) {
      for (std::size_t j = i + 1; j < choices.size(); ++j) {
        if (choices[i] == choices[j]) throw std::invalid_argument("BenchmarkItem: duplicate choices");
      }
    }
  }

  /// BOS + prompt bytes + SEP.
  std::vector<int> prompt_tokens() const {
    std::vector<int> t;
    t.reserve(prompt.size() + 2);
    t.push_back(tok::kBos);
    for (unsigned char c : prompt) t.push_back(static_cast<int>(c));
    t.push_back(tok::kSep);
    return t;
  }

  /// prompt tokens + choice bytes + EOS.
  std::vector<int> full_tokens(int choice) const {
    std::vector<int> t = prompt_tokens();
    for (unsigned char c : choices[static_cast<std::size_t>(choice)]) {
      t.push_back(static_cast<int>(c));
    }
    t.push_back(tok::kEos);
    return t;
  }

  std::vector<int> gold_tokens() const { return full_tokens(gold_index); }
};

/// Injection parameters for the seen/unseen protocol.
struct LeakSpec {
  std::vector<BenchmarkItem> seen_items;
  double p_leak = 0.75;
  int repeat_factor = 4;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(p_leak >= 0.0 && p_leak <= 1.0)) throw std::invalid_argument("LeakSpec: p_leak not in [0,1]");
    if (repeat_factor < 1) throw std::invalid_argument("LeakSpec: repeat_factor < 1");
  }
};

enum class MixMode { bernoulli, joint };

inline std::string to_string(MixMode m) { return m == MixMode::bernoulli ? "bernoulli" : "joint"; }

inline MixMode mix_mode_from_string(const std::string& s) {
  if (s == "bernoulli") return MixMode::bernoulli;
  if (s == "joint") return MixMode::joint;
  throw std::invalid_argument("unknown mix_mode: " + s);
}

enum class BatchSource { base, leak, joint };

struct Batch {
  int step = 0;
  BatchSource source = BatchSource::base;
  std::vector<std::vector<int>> sequences;  // token streams incl. BOS/EOS
};

struct BatchSchedule {
  std::vector<Batch> batches;

  int leak_steps() const {
    int n = 0;
    for (const Batch& b : batches) n += (b.source == BatchSource::leak) ? 1 : 0;
    return n;
  }

  /// Digest of the full schedule bytes; alpha never enters the builder, so
  /// this must be identical across a sweep within one seed.
  std::string digest() const {
    Fnv64 f;
    for (const Batch& b : batches) {
      f.update_pod(b.step);
      int src = static_cast<int>(b.source);
      f.update_pod(src);
      for (const auto& seq : b.sequences) {
        int len = static_cast<int>(seq.size());
        f.update_pod(len);
        f.update_ints(seq);
      }
    }
    return f.hex();
  }
};

enum class Tier { high, mid, rare };

inline std::string to_string(Tier t) {
  switch (t) {
    case Tier::high: return "high";
    case Tier::mid: return "mid";
    case Tier::rare: return "rare";
  }
  return "?";
}

struct TierAssignment {
  std::map<int, Tier> tiers;           // base-corpus sequence id -> tier
  std::map<int, double> mean_freq;     // per tiered sequence
  int prefix_len = 32;
  int suffix_len = 16;

  std::vector<int> ids_of(Tier t) const {
    std::vector<int> out;
    for (const auto& [id, tt] : tiers) {
      if (tt == t) out.push_back(id);
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Deterministic uniform split without replacement: returns (seen, unseen)
/// index lists, each sorted ascending.
inline std::pair<std::vector<int>, std::vector<int>> build_splits(
    const std::vector<BenchmarkItem>& items, int n_seen, std::uint64_t seed) {
  if (n_seen < 0 || n_seen >= static_cast<int>(items.size())) {
    throw std::invalid_argument("build_splits: n_seen must be in [0, n_items)");
  }
  std::vector<int> idx(items.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  Rng rng(mix64(seed, hash_str64("build_splits")));
  rng.shuffle(idx);
  std::vector<int> seen(idx.begin(), idx.begin() + n_seen);
  std::vector<int> unseen(idx.begin() + n_seen, idx.end());
  std::sort(seen.begin(), seen.end());
  std::sort(unseen.begin(), unseen.end());
  return {seen, unseen};
}

/// Precomputes the full batch schedule. Each step draws from the leak loader
/// with probability p_leak (seeded Bernoulli, its own stream) and otherwise
/// from the base loader; the leak loader is the seen set repeated
/// repeat_factor times, sampled uniformly. In joint mode every step carries
/// a base half and a leak half. The schedule is a function of
/// (corpus, spec, total_steps, batch sizes, mode) only — never of alpha.
inline BatchSchedule build_leak_stream(const Corpus& base, const LeakSpec& spec,
                                       int total_steps, int batch_base = 8,
                                       int batch_leak = 8,
                                       MixMode mode = MixMode::bernoulli) {
  spec.validate();
  if (base.base.empty()) throw std::invalid_argument("build_leak_stream: empty base corpus");
  if (total_steps < 1) throw std::invalid_argument("build_leak_stream: total_steps < 1");
  if (batch_base < 1 || batch_leak < 1) throw std::invalid_argument("build_leak_stream: bad batch size");

  // Leak multiset: each seen item repeated repeat_factor times.
  std::vector<std::vector<int>> leak_multiset;
  for (int r = 0; r < spec.repeat_factor; ++r) {
    for (const BenchmarkItem& it : spec.seen_items) leak_multiset.push_back(it.gold_tokens());
  }
  if (leak_multiset.empty() && (spec.p_leak > 0.0 || mode == MixMode::joint)) {
    throw std::invalid_argument("build_leak_stream: empty seen set with p_leak > 0");
  }

  Rng coin(mix64(spec.seed, hash_str64("leak_bernoulli")));
  Rng base_rng(mix64(spec.seed, hash_str64("base_loader")));
  Rng leak_rng(mix64(spec.seed, hash_str64("leak_loader")));

  // Base loader: shuffled epochs over the base corpus.
  std::vector<int> order(base.base.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  base_rng.shuffle(order);
  std::size_t cursor = 0;
  auto next_base = [&]() -> const CorpusSeq& {
    if (cursor >= order.size()) {
      base_rng.shuffle(order);
      cursor = 0;
    }
    return base.base[static_cast<std::size_t>(order[cursor++])];
  };

  BatchSchedule sched;
  sched.batches.reserve(static_cast<std::size_t>(total_steps));
  for (int step = 0; step < total_steps; ++step) {
    Batch b;
    b.step = step;
    if (mode == MixMode::joint) {
      b.source = BatchSource::joint;
      for (int i = 0; i < batch_base; ++i) b.sequences.push_back(next_base().tokens());
      for (int i = 0; i < batch_leak; ++i) {
        b.sequences.push_back(leak_multiset[leak_rng.below(leak_multiset.size())]);
      }
    } else {
      const bool is_leak = coin.bernoulli(spec.p_leak);
      if (is_leak) {
        b.source = BatchSource::leak;
        for (int i = 0; i < batch_leak; ++i) {
          b.sequences.push_back(leak_multiset[leak_rng.below(leak_multiset.size())]);
        }
      } else {
        b.source = BatchSource::base;
        for (int i = 0; i < batch_base; ++i) b.sequences.push_back(next_base().tokens());
      }
    }
    sched.batches.push_back(std::move(b));
  }
  return sched;
}

/// Frequency tiers over length-matched base sequences. Per-token counts are
/// taken over the whole corpus (base + injected); per-sequence score is mean
/// token frequency; the sorted sequences are cut into tertiles whose sizes
/// differ by at most one. Ties break by ascending sequence id.
inline TierAssignment assign_frequency_tiers(const Corpus& corpus, int target_len,
                                             int prefix_len = 32, int suffix_len = 16) {
  if (target_len < prefix_len + suffix_len) {
    throw std::invalid_argument("assign_frequency_tiers: target_len < prefix+suffix");
  }
  std::unordered_map<int, std::int64_t> freq;
  auto count_tokens = [&](const std::vector<int>& ts) {
    for (int t : ts) freq[t] += 1;
  };
  for (const CorpusSeq& s : corpus.base) count_tokens(s.tokens());
  for (const std::vector<int>& ts : corpus.injected) count_tokens(ts);

  std::vector<std::pair<int, double>> scored;  // (seq id, mean freq)
  for (std::size_t i = 0; i < corpus.base.size(); ++i) {
    const std::string& text = corpus.base[i].text;
    if (static_cast<int>(text.size()) != target_len) continue;
    std::vector<int> ts = corpus.base[i].tokens();
    double acc = 0.0;
    for (int t : ts) acc += static_cast<double>(freq[t]);
    scored.emplace_back(static_cast<int>(i), acc / static_cast<double>(ts.size()));
  }
  if (scored.size() < 3) {
    throw std::invalid_argument("assign_frequency_tiers: need >= 3 length-matched sequences");
  }
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;  // descending frequency
    return a.first < b.first;                              // stable id order on ties
  });

  const int n = static_cast<int>(scored.size());
  const int n_high = (n + 2) / 3;
  const int n_mid = (n + 1) / 3;

  TierAssignment out;
  out.prefix_len = prefix_len;
  out.suffix_len = suffix_len;
  for (int i = 0; i < n; ++i) {
    Tier t = (i < n_high) ? Tier::high : (i < n_high + n_mid) ? Tier::mid : Tier::rare;
    out.tiers[scored[static_cast<std::size_t>(i)].first] = t;
    out.mean_freq[scored[static_cast<std::size_t>(i)].first] =
        scored[static_cast<std::size_t>(i)].second;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic benchmark + corpus generators
// ---------------------------------------------------------------------------

struct BenchmarkParams {
  int n_items = 1000;
  int n_choices = 4;
  int n_background = 200;  // extra template facts kept out of the benchmark
};

namespace detail_data {

struct FactTable {
  std::vector<std::pair<int, int>> key_pairs;  // indices into words::keys()
  std::vector<std::pair<int, int>> val_pairs;  // indices into words::values()
};

/// Distinct (k1,k2) pairs, k1 != k2, deterministic order.
inline FactTable make_fact_table(int n_total, Rng& rng) {
  const int K = static_cast<int>(words::keys().size());
  std::vector<int> all;
  all.reserve(static_cast<std::size_t>(K) * (K - 1));
  for (int a = 0; a < K; ++a) {
    for (int b = 0; b < K; ++b) {
      if (a != b) all.push_back(a * K + b);
    }
  }
  if (n_total > static_cast<int>(all.size())) {
    throw std::invalid_argument("make_fact_table: key space too small");
  }
  rng.shuffle(all);
  FactTable t;
  const int V = static_cast<int>(words::values().size());
  for (int i = 0; i < n_total; ++i) {
    t.key_pairs.emplace_back(all[static_cast<std::size_t>(i)] / K,
                             all[static_cast<std::size_t>(i)] % K);
    t.val_pairs.emplace_back(rng.below_int(V), rng.below_int(V));
  }
  return t;
}

inline std::string key_text(const FactTable& t, int i) {
  return words::keys()[static_cast<std::size_t>(t.key_pairs[static_cast<std::size_t>(i)].first)] +
         " " +
         words::keys()[static_cast<std::size_t>(t.key_pairs[static_cast<std::size_t>(i)].second)];
}

inline std::string val_text(const FactTable& t, int i) {
  return words::values()[static_cast<std::size_t>(t.val_pairs[static_cast<std::size_t>(i)].first)] +
         " " +
         words::values()[static_cast<std::size_t>(t.val_pairs[static_cast<std::size_t>(i)].second)];
}

inline std::string fact_prompt(const std::string& key) { return "code of " + key + " is"; }

}  // namespace detail_data

/// Templated key->value lookup items over a synthetic fact table. Gold
/// answers are random value-word pairs, so they are learnable only by
/// exposure; distractors are other items' values.
inline std::vector<BenchmarkItem> make_synthetic_benchmark(const BenchmarkParams& params,
                                                           std::uint64_t seed) {
  if (params.n_items < 1) throw std::invalid_argument("make_synthetic_benchmark: n_items < 1");
  if (params.n_choices < 2 || params.n_choices > 4) {
    throw std::invalid_argument("make_synthetic_benchmark: n_choices must be 2..4");
  }
  Rng rng(mix64(seed, hash_str64("benchmark")));
  detail_data::FactTable table =
      detail_data::make_fact_table(params.n_items + params.n_background, rng);

  std::vector<BenchmarkItem> items;
  items.reserve(static_cast<std::size_t>(params.n_items));
  for (int i = 0; i < params.n_items; ++i) {
    BenchmarkItem it;
    it.prompt = detail_data::fact_prompt(detail_data::key_text(table, i));
    const std::string gold = detail_data::val_text(table, i);
    std::set<std::string> used = {gold};
    std::vector<std::string> distractors;
    while (static_cast<int>(distractors.size()) < params.n_choices - 1) {
      int j = rng.below_int(params.n_items + params.n_background);
      std::string cand = detail_data::val_text(table, j);
      if (used.insert(cand).second) distractors.push_back(cand);
    }
    it.gold_index = rng.below_int(params.n_choices);
    int d = 0;
    for (int c = 0; c < params.n_choices; ++c) {
      it.choices.push_back(c == it.gold_index ? gold : distractors[static_cast<std::size_t>(d++)]);
    }
    it.validate();
    items.push_back(std::move(it));
  }
  return items;
}

/// Background facts share the template but use key pairs disjoint from the
/// benchmark's; they live in the base corpus so the answer-slot grammar is
/// learnable at every alpha.
inline std::vector<std::string> make_background_facts(const BenchmarkParams& params,
                                                      std::uint64_t seed) {
  Rng rng(mix64(seed, hash_str64("benchmark")));
  detail_data::FactTable table =
      detail_data::make_fact_table(params.n_items + params.n_background, rng);
  std::vector<std::string> out;
  for (int i = params.n_items; i < params.n_items + params.n_background; ++i) {
    out.push_back(detail_data::fact_prompt(detail_data::key_text(table, i)) + " " +
                  detail_data::val_text(table, i));
  }
  return out;
}

struct CorpusParams {
  int n_filler = 120;
  int n_tier = 16;   // per tier
  int n_once = 24;
  int tier_len = 48;
  int once_len = 52;
  int max_line = 62;
};

namespace detail_data {

inline std::string word_stream_exact(const std::vector<std::string>& pool, int len, Rng& rng) {
  std::string s;
  while (static_cast<int>(s.size()) < len) {
    if (!s.empty()) s += " ";
    s += pool[static_cast<std::size_t>(rng.below_int(static_cast<int>(pool.size())))];
  }
  s.resize(static_cast<std::size_t>(len));
  if (s.back() == ' ') s.back() = '.';
  return s;
}

}  // namespace detail_data

/// Deterministic synthetic base corpus: weighted-grammar fillers, background
/// facts, three frequency-controlled tier pools of identical length, and a
/// pool of exactly-once sequences at a different length.
inline Corpus make_synthetic_corpus(const CorpusParams& cp, const BenchmarkParams& bp,
                                    std::uint64_t seed) {
  Corpus corpus;
  Rng rng(mix64(seed, hash_str64("corpus")));

  for (int i = 0; i < cp.n_filler; ++i) {
    const int n_words = 6 + rng.below_int(4);
    std::string line;
    for (int w = 0; w < n_words; ++w) {
      const auto& pool = rng.bernoulli(0.7) ? words::common() : words::mid();
      std::string word = pool[static_cast<std::size_t>(rng.below_int(static_cast<int>(pool.size())))];
      if (!line.empty()) line += " ";
      if (static_cast<int>(line.size() + word.size()) > cp.max_line) break;
      line += word;
    }
    corpus.base.push_back({line, SeqKind::filler});
  }

  for (const std::string& fact : make_background_facts(bp, seed)) {
    corpus.base.push_back({fact, SeqKind::background});
  }

  auto add_tier = [&](const std::vector<std::string>& pool, SeqKind kind, int n, int len) {
    std::set<std::string> seen_text;
    int made = 0;
    while (made < n) {
      std::string s = detail_data::word_stream_exact(pool, len, rng);
      if (seen_text.insert(s).second) {
        corpus.base.push_back({s, kind});
        ++made;
      }
    }
  };
  add_tier(words::common(), SeqKind::tier_high, cp.n_tier, cp.tier_len);
  add_tier(words::mid(), SeqKind::tier_mid, cp.n_tier, cp.tier_len);
  add_tier(words::rare(), SeqKind::tier_rare, cp.n_tier, cp.tier_len);
  add_tier(words::once(), SeqKind::once, cp.n_once, cp.once_len);

  return corpus;
}

// ---------------------------------------------------------------------------
// Bundle: everything one run needs, derived from one DataConfig.
// ---------------------------------------------------------------------------

struct DataConfig {
  std::uint64_t seed = 1;
  BenchmarkParams bench;
  CorpusParams corpus;
  int n_seen = 50;
  double p_leak = 0.75;
  int repeat_factor = 4;
  MixMode mix_mode = MixMode::bernoulli;

  Json to_json() const {
    return Json{{"seed", seed},
                {"n_items", bench.n_items},
                {"n_choices", bench.n_choices},
                {"n_background", bench.n_background},
                {"n_filler", corpus.n_filler},
                {"n_tier", corpus.n_tier},
                {"n_once", corpus.n_once},
                {"tier_len", corpus.tier_len},
                {"once_len", corpus.once_len},
                {"n_seen", n_seen},
                {"p_leak", p_leak},
                {"repeat_factor", repeat_factor},
                {"mix_mode", to_string(mix_mode)}};
  }

  static DataConfig from_json(const Json& j) {
    DataConfig c;
    c.seed = j.value("seed", std::uint64_t{1});
    c.bench.n_items = j.value("n_items", 1000);
    c.bench.n_choices = j.value("n_choices", 4);
    c.bench.n_background = j.value("n_background", 200);
    c.corpus.n_filler = j.value("n_filler", 120);
    c.corpus.n_tier = j.value("n_tier", 16);
    c.corpus.n_once = j.value("n_once", 24);
    c.corpus.tier_len = j.value("tier_len", 48);
    c.corpus.once_len = j.value("once_len", 52);
    c.n_seen = j.value("n_seen", 50);
    c.p_leak = j.value("p_leak", 0.75);
    c.repeat_factor = j.value("repeat_factor", 4);
    c.mix_mode = mix_mode_from_string(j.value("mix_mode", std::string("bernoulli")));
    return c;
  }
};

struct DataBundle {
  DataConfig config;
  Corpus corpus;
  std::vector<BenchmarkItem> items;
  std::vector<int> seen_ids;
  std::vector<int> unseen_ids;

  std::vector<BenchmarkItem> seen_items() const {
    std::vector<BenchmarkItem> out;
    for (int i : seen_ids) out.push_back(items[static_cast<std::size_t>(i)]);
    return out;
  }
  std::vector<BenchmarkItem> unseen_items() const {
    std::vector<BenchmarkItem> out;
    for (int i : unseen_ids) out.push_back(items[static_cast<std::size_t>(i)]);
    return out;
  }

  LeakSpec leak_spec() const {
    LeakSpec s;
    s.seen_items = seen_items();
    s.p_leak = config.p_leak;
    s.repeat_factor = config.repeat_factor;
    s.seed = config.seed;
    return s;
  }

  /// Manifest digest: detects any drift in corpus, items or split.
  std::string data_hash() const {
    Fnv64 f;
    f.update(config.to_json().dump());
    for (const CorpusSeq& s : corpus.base) {
      f.update(to_string(s.kind));
      f.update(s.text);
      f.update("\n");
    }
    for (const BenchmarkItem& it : items) {
      f.update(it.prompt);
      for (const auto& c : it.choices) f.update(c);
      f.update_pod(it.gold_index);
    }
    f.update_ints(seen_ids);
    f.update_ints(unseen_ids);
    return f.hex();
  }
};

inline DataBundle build_data_bundle(const DataConfig& cfg) {
  DataBundle b;
  b.config = cfg;
  b.items = make_synthetic_benchmark(cfg.bench, cfg.seed);
  b.corpus = make_synthetic_corpus(cfg.corpus, cfg.bench, cfg.seed);
  auto [seen, unseen] = build_splits(b.items, cfg.n_seen, cfg.seed);
  b.seen_ids = std::move(seen);
  b.unseen_ids = std::move(unseen);
  for (const BenchmarkItem& it : b.seen_items()) {
    b.corpus.injected.push_back(it.gold_tokens());
  }
  return b;
}

/// Exhaustive contamination scan: counts unseen items whose prompt+gold token
/// stream occurs as a substring of any scheduled training sequence.
inline int contamination_hits(const BatchSchedule& sched,
                              const std::vector<BenchmarkItem>& unseen) {
  // Dedup training sequences first.
  std::set<std::vector<int>> uniq;
  for (const Batch& b : sched.batches) {
    for (const auto& s : b.sequences) uniq.insert(s);
  }
  int hits = 0;
  for (const BenchmarkItem& it : unseen) {
    const std::vector<int> needle = it.gold_tokens();
    bool found = false;
    for (const auto& hay : uniq) {
      if (hay.size() < needle.size()) continue;
      if (std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) != hay.end()) {
        found = true;
        break;
      }
    }
    hits += found ? 1 : 0;
  }
  return hits;
}

// ---------------------------------------------------------------------------
// File I/O: corpus.txt + benchmark.jsonl + manifest.json
// ---------------------------------------------------------------------------

inline void save_data_bundle(const DataBundle& b, const std::string& dir);
inline DataBundle load_data_bundle(const std::string& dir);
inline bool verify_data_manifest(const std::string& dir, std::string* why = nullptr);

namespace detail_data {

inline std::string file_digest(const std::string& content) {
  Fnv64 f;
  f.update(content);
  return f.hex();
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
}

}  // namespace detail_data

inline void save_data_bundle(const DataBundle& b, const std::string& dir) {
  std::string corpus_txt;
  std::string kinds;
  for (const CorpusSeq& s : b.corpus.base) {
    corpus_txt += s.text;
    corpus_txt += "\n";
    kinds += to_string(s.kind);
    kinds += "\n";
  }
  std::string bench_jsonl;
  for (const BenchmarkItem& it : b.items) {
    Json j{{"prompt", it.prompt}, {"choices", it.choices}, {"gold", it.gold_index}};
    bench_jsonl += j.dump();
    bench_jsonl += "\n";
  }
  detail_data::write_file(dir + "/corpus.txt", corpus_txt);
  detail_data::write_file(dir + "/corpus_kinds.txt", kinds);
  detail_data::write_file(dir + "/benchmark.jsonl", bench_jsonl);

  Fnv64 seen_h, unseen_h;
  for (int i : b.seen_ids) {
    seen_h.update(b.items[static_cast<std::size_t>(i)].prompt);
    seen_h.update(b.items[static_cast<std::size_t>(i)].choices[static_cast<std::size_t>(
        b.items[static_cast<std::size_t>(i)].gold_index)]);
  }
  for (int i : b.unseen_ids) {
    unseen_h.update(b.items[static_cast<std::size_t>(i)].prompt);
    unseen_h.update(b.items[static_cast<std::size_t>(i)].choices[static_cast<std::size_t>(
        b.items[static_cast<std::size_t>(i)].gold_index)]);
  }

  Json manifest{
      {"format", "memdial-data-v1"},
      {"config", b.config.to_json()},
      {"counts",
       {{"corpus", b.corpus.base.size()},
        {"items", b.items.size()},
        {"seen", b.seen_ids.size()},
        {"unseen", b.unseen_ids.size()}}},
      {"seen_ids", b.seen_ids},
      {"hashes",
       {{"corpus", detail_data::file_digest(corpus_txt)},
        {"benchmark", detail_data::file_digest(bench_jsonl)},
        {"seen_split", seen_h.hex()},
        {"unseen_split", unseen_h.hex()},
        {"bundle", b.data_hash()}}}};
  detail_data::write_file(dir + "/manifest.json", manifest.dump(2) + "\n");
}

inline DataBundle load_data_bundle(const std::string& dir) {
  Json manifest = Json::parse(detail_data::read_file(dir + "/manifest.json"));
  DataBundle b;
  b.config = DataConfig::from_json(manifest.at("config"));

  std::string corpus_txt = detail_data::read_file(dir + "/corpus.txt");
  std::string kinds_txt = detail_data::read_file(dir + "/corpus_kinds.txt");
  std::vector<std::string> lines, kinds;
  auto split_lines = [](const std::string& s, std::vector<std::string>& out) {
    std::size_t start = 0;
    while (start < s.size()) {
      std::size_t nl = s.find('\n', start);
      if (nl == std::string::npos) nl = s.size();
      out.push_back(s.substr(start, nl - start));
      start = nl + 1;
    }
  };
  split_lines(corpus_txt, lines);
  split_lines(kinds_txt, kinds);
  if (lines.size() != kinds.size()) throw std::runtime_error("corpus/kinds length mismatch");
  for (std::size_t i = 0; i < lines.size(); ++i) {
    SeqKind k = SeqKind::filler;
    if (kinds[i] == "background") k = SeqKind::background;
    else if (kinds[i] == "tier_high") k = SeqKind::tier_high;
    else if (kinds[i] == "tier_mid") k = SeqKind::tier_mid;
    else if (kinds[i] == "tier_rare") k = SeqKind::tier_rare;
    else if (kinds[i] == "once") k = SeqKind::once;
    b.corpus.base.push_back({lines[i], k});
  }

  std::string bench = detail_data::read_file(dir + "/benchmark.jsonl");
  std::vector<std::string> bench_lines;
  split_lines(bench, bench_lines);
  for (const std::string& line : bench_lines) {
    if (line.empty()) continue;
    Json j = Json::parse(line);
    BenchmarkItem it;
    it.prompt = j.at("prompt").get<std::string>();
    it.choices = j.at("choices").get<std::vector<std::string>>();
    it.gold_index = j.at("gold").get<int>();
    it.validate();
    b.items.push_back(std::move(it));
  }

  b.seen_ids = manifest.at("seen_ids").get<std::vector<int>>();
  std::set<int> seen_set(b.seen_ids.begin(), b.seen_ids.end());
  for (int i = 0; i < static_cast<int>(b.items.size()); ++i) {
    if (!seen_set.count(i)) b.unseen_ids.push_back(i);
  }
  for (const BenchmarkItem& it : b.seen_items()) {
    b.corpus.injected.push_back(it.gold_tokens());
  }
  return b;
}

/// Recomputes the manifest hashes from the files on disk; any mismatch is
/// contamination drift.
inline bool verify_data_manifest(const std::string& dir, std::string* why) {
  Json manifest = Json::parse(detail_data::read_file(dir + "/manifest.json"));
  const std::string corpus_txt = detail_data::read_file(dir + "/corpus.txt");
  const std::string bench = detail_data::read_file(dir + "/benchmark.jsonl");
  auto fail = [&](const std::string& m) {
    if (why) *why = m;
    return false;
  };
  if (manifest.at("hashes").at("corpus").get<std::string>() != detail_data::file_digest(corpus_txt)) {
    return fail("corpus.txt hash mismatch");
  }
  if (manifest.at("hashes").at("benchmark").get<std::string>() != detail_data::file_digest(bench)) {
    return fail("benchmark.jsonl hash mismatch");
  }
  DataBundle b = load_data_bundle(dir);
  Fnv64 seen_h, unseen_h;
  for (int i : b.seen_ids) {
    seen_h.update(b.items[static_cast<std::size_t>(i)].prompt);
    seen_h.update(b.items[static_cast<std::size_t>(i)].choices[static_cast<std::size_t>(
        b.items[static_cast<std::size_t>(i)].gold_index)]);
  }
  for (int i : b.unseen_ids) {
    unseen_h.update(b.items[static_cast<std::size_t>(i)].prompt);
    unseen_h.update(b.items[static_cast<std::size_t>(i)].choices[static_cast<std::size_t>(
        b.items[static_cast<std::size_t>(i)].gold_index)]);
  }
  if (manifest.at("hashes").at("seen_split").get<std::string>() != seen_h.hex()) {
    return fail("seen split hash mismatch");
  }
  if (manifest.at("hashes").at("unseen_split").get<std::string>() != unseen_h.hex()) {
    return fail("unseen split hash mismatch");
  }
  if (why) why->clear();
  return true;
}

}  // namespace memdial
