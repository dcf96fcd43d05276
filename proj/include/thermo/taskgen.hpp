#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "thermo/mathcore.hpp"

namespace thermo::taskgen {

using Token = std::int32_t;

inline constexpr std::size_t kVocabSize = 24;

// Reserved ids. BOS renders as '?', which doubles as the input sigil.
inline constexpr Token kPad = 0;
inline constexpr Token kBos = 1;
inline constexpr Token kHalt = 2;

/// Closed 24-symbol character vocabulary.
///
/// Order: <PAD>, ? (BOS), <HALT>, 0-9, A-F, ^, =, :, +, space.
class Vocabulary {
 public:
  static const Vocabulary& instance();

  std::size_t size() const { return symbols_.size(); }
  const std::string& symbol(Token id) const;
  std::optional<Token> id_of(std::string_view symbol) const;
  std::span<const std::string> symbols() const { return symbols_; }

  static Token digit(int d) { return static_cast<Token>(3 + d); }
  static Token letter(char c) { return static_cast<Token>(13 + (c - 'A')); }

 private:
  Vocabulary();
  std::vector<std::string> symbols_;
  std::array<Token, 256> char_to_id_{};
};

/// Text -> ids. Multi-character sentinels "<HALT>" and "<PAD>" are
/// recognised; every other character must be a vocabulary symbol.
std::vector<Token> tokenize(std::string_view text);
std::string detokenize(std::span<const Token> ids);

enum class Task { Parity, Sorting, Arithmetic };
enum class Tier { T0, T1, T2, OOD };

std::string_view to_string(Task t);
std::string_view to_string(Tier t);
Task task_from_string(std::string_view s);
Tier tier_from_string(std::string_view s);

/// Inclusive input-length ranges for T0, T1, T2.
struct TierRanges {
  std::array<std::pair<int, int>, 3> bounds;

  static TierRanges defaults(Task task);
  /// Tier for a given input length; OOD when outside every range.
  Tier tier_of(int length) const;
  int min_length() const { return bounds[0].first; }
  int max_length() const { return bounds[2].second; }
};

struct Example {
  Task task = Task::Parity;
  Tier tier = Tier::T0;
  std::string input;          // payload, e.g. "1101", "CAB", "3+4"
  std::vector<Token> prompt;  // ? payload ' '
  std::vector<Token> trace;   // steps, ':' answer, HALT
  std::string answer;
  std::size_t optimal_stop = 0;  // index into prompt+trace of the last answer symbol

  std::size_t length() const { return prompt.size() + trace.size(); }
  std::vector<Token> tokens() const;
  std::string prompt_text() const { return detokenize(prompt); }
  std::string trace_text() const { return detokenize(trace); }

  bool operator==(const Example&) const = default;
};

// Builders from an explicit input. Tier is assigned from `ranges`.
Example make_parity(std::string_view bits, const TierRanges& ranges = TierRanges::defaults(Task::Parity));
Example make_sort(std::string_view symbols, const TierRanges& ranges = TierRanges::defaults(Task::Sorting));
Example make_arithmetic(std::span<const int> operands,
                        const TierRanges& ranges = TierRanges::defaults(Task::Arithmetic));

Example gen_parity(int n_bits, mathcore::SeededRng& rng);
Example gen_sort(int length, mathcore::SeededRng& rng);
Example gen_arithmetic(int n_operands, mathcore::SeededRng& rng);

/// label(t) = 1 for t >= optimal_stop over the full prompt+trace.
std::vector<std::uint8_t> halt_labels(const Example& ex);

/// Answer symbols after the first ':' in `generated` (trace tokens only),
/// up to HALT, a space or the end. nullopt when no ':' was produced.
std::optional<std::string> parse_answer(std::span<const Token> generated);

/// Bubble-sort statistics used by the sorting grammar.
struct BubbleStats {
  std::string sorted;
  int comparisons = 0;
  int swaps = 0;
  int passes = 0;
};
BubbleStats bubble_sort_stats(std::string_view symbols);

// ---------------------------------------------------------------------------
// Datasets

struct SplitSizes {
  std::size_t train = 0, val = 0, test = 0;
};

enum class Sampling {
  /// Every example has a distinct input across all splits.
  Distinct,
  /// Tiers with too few distinct inputs are partitioned into disjoint
  /// per-split pools and sampled with replacement inside each pool.
  DisjointPools,
};

struct Dataset {
  Task task = Task::Parity;
  std::uint64_t seed = 0;
  std::vector<Example> train, val, test;

  bool operator==(const Dataset&) const = default;
};

/// Number of distinct inputs of a given length.
std::uint64_t distinct_inputs(Task task, int length);

Dataset build_dataset(Task task, SplitSizes sizes, const TierRanges& ranges, std::uint64_t seed,
                      Sampling sampling = Sampling::Distinct);

/// Parity examples of exactly `n_bits` (outside the training range).
std::vector<Example> ood_parity(int n_bits, std::size_t count, std::uint64_t seed);

// Line format: task \t tier \t prompt-text \t trace-text \t optimal_stop
void write_examples(std::ostream& os, std::span<const Example> examples);
std::vector<Example> read_examples(std::istream& is);
void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

}  // namespace thermo::taskgen
