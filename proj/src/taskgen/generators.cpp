#include <algorithm>

#include "thermo/errors.hpp"
#include "thermo/taskgen.hpp"

namespace thermo::taskgen {

namespace {

constexpr Token kCaret = 19;
constexpr Token kEquals = 20;
constexpr Token kColon = 21;
constexpr Token kPlus = 22;
constexpr Token kSpace = 23;

Token sym(char c) { return *Vocabulary::instance().id_of(std::string_view(&c, 1)); }

std::vector<Token> make_prompt(std::string_view payload) {
  std::vector<Token> p{kBos};
  for (char c : payload) p.push_back(sym(c));
  p.push_back(kSpace);
  return p;
}

// Appends ':' answer HALT and fixes optimal_stop to the last answer symbol.
void finish(Example& ex) {
  ex.trace.push_back(kColon);
  for (char c : ex.answer) ex.trace.push_back(sym(c));
  ex.optimal_stop = ex.prompt.size() + ex.trace.size() - 1;
  ex.trace.push_back(kHalt);
}

void check_range(int v, int lo, int hi, const char* what) {
  if (v < lo || v > hi)
    throw DomainError(std::string(what) + " = " + std::to_string(v) + " outside [" + std::to_string(lo) + ", " +
                      std::to_string(hi) + "]");
}

}  // namespace

std::vector<Token> Example::tokens() const {
  std::vector<Token> all(prompt);
  all.insert(all.end(), trace.begin(), trace.end());
  return all;
}

TierRanges TierRanges::defaults(Task task) {
  switch (task) {
    case Task::Parity: return {{{{2, 4}, {5, 6}, {7, 8}}}};
    case Task::Sorting: return {{{{3, 4}, {5, 6}, {7, 8}}}};
    case Task::Arithmetic: return {{{{2, 2}, {3, 3}, {4, 5}}}};
  }
  return {};
}

Tier TierRanges::tier_of(int length) const {
  for (std::size_t i = 0; i < bounds.size(); ++i)
    if (length >= bounds[i].first && length <= bounds[i].second) return static_cast<Tier>(i);
  return Tier::OOD;
}

Example make_parity(std::string_view bits, const TierRanges& ranges) {
  check_range(static_cast<int>(bits.size()), 2, 10, "n_bits");
  for (char c : bits)
    if (c != '0' && c != '1') throw DomainError("parity input must be binary");
  Example ex;
  ex.task = Task::Parity;
  ex.tier = ranges.tier_of(static_cast<int>(bits.size()));
  ex.input = std::string(bits);
  ex.prompt = make_prompt(bits);
  int acc = bits[0] - '0';
  for (std::size_t i = 1; i < bits.size(); ++i) {
    const int b = bits[i] - '0';
    const int next = acc ^ b;
    ex.trace.insert(ex.trace.end(),
                    {Vocabulary::digit(acc), kCaret, Vocabulary::digit(b), kEquals, Vocabulary::digit(next), kSpace});
    acc = next;
  }
  ex.answer = std::string(1, static_cast<char>('0' + acc));
  finish(ex);
  return ex;
}

BubbleStats bubble_sort_stats(std::string_view symbols) {
  BubbleStats s;
  s.sorted = std::string(symbols);
  const int n = static_cast<int>(s.sorted.size());
  for (int pass = 0; pass < n - 1; ++pass) {
    bool swapped = false;
    ++s.passes;
    for (int j = 0; j + 1 < n - pass; ++j) {
      ++s.comparisons;
      if (s.sorted[j] > s.sorted[j + 1]) {
        std::swap(s.sorted[j], s.sorted[j + 1]);
        ++s.swaps;
        swapped = true;
      }
    }
    if (!swapped) break;
  }
  return s;
}

Example make_sort(std::string_view symbols, const TierRanges& ranges) {
  check_range(static_cast<int>(symbols.size()), 3, 8, "length");
  for (char c : symbols)
    if (c < 'A' || c > 'F') throw DomainError("sorting symbols must be in A..F");
  Example ex;
  ex.task = Task::Sorting;
  ex.tier = ranges.tier_of(static_cast<int>(symbols.size()));
  ex.input = std::string(symbols);
  ex.prompt = make_prompt(symbols);
  std::string arr(symbols);
  const int n = static_cast<int>(arr.size());
  // Same pass structure as bubble_sort_stats: shrinking range, stop after a
  // pass without swaps.
  for (int pass = 0; pass < n - 1; ++pass) {
    bool swapped = false;
    for (int j = 0; j + 1 < n - pass; ++j) {
      const bool swap = arr[j] > arr[j + 1];
      ex.trace.insert(ex.trace.end(), {sym(arr[j]), sym(arr[j + 1]), swap ? kCaret : kEquals, kSpace});
      if (swap) {
        std::swap(arr[j], arr[j + 1]);
        swapped = true;
      }
    }
    for (char c : arr) ex.trace.push_back(sym(c));
    ex.trace.push_back(kSpace);
    if (!swapped) break;
  }
  ex.answer = arr;
  finish(ex);
  return ex;
}

Example make_arithmetic(std::span<const int> operands, const TierRanges& ranges) {
  check_range(static_cast<int>(operands.size()), 2, 5, "n_operands");
  Example ex;
  ex.task = Task::Arithmetic;
  ex.tier = ranges.tier_of(static_cast<int>(operands.size()));
  for (std::size_t i = 0; i < operands.size(); ++i) {
    check_range(operands[i], 0, 9, "operand");
    if (i) ex.input += '+';
    ex.input += static_cast<char>('0' + operands[i]);
  }
  ex.prompt = make_prompt(ex.input);
  int acc = operands[0];
  for (std::size_t i = 1; i < operands.size(); ++i) {
    const int next = (acc + operands[i]) % 10;
    ex.trace.insert(ex.trace.end(), {Vocabulary::digit(acc), kPlus, Vocabulary::digit(operands[i]), kEquals,
                                     Vocabulary::digit(next), kSpace});
    acc = next;
  }
  ex.answer = std::string(1, static_cast<char>('0' + acc));
  finish(ex);
  return ex;
}

Example gen_parity(int n_bits, mathcore::SeededRng& rng) {
  check_range(n_bits, 2, 10, "n_bits");
  std::string bits;
  for (int i = 0; i < n_bits; ++i) bits += rng.below(2) ? '1' : '0';
  return make_parity(bits);
}

Example gen_sort(int length, mathcore::SeededRng& rng) {
  check_range(length, 3, 8, "length");
  std::string s;
  for (int i = 0; i < length; ++i) s += static_cast<char>('A' + rng.below(6));
  return make_sort(s);
}

Example gen_arithmetic(int n_operands, mathcore::SeededRng& rng) {
  check_range(n_operands, 2, 5, "n_operands");
  std::vector<int> ops;
  for (int i = 0; i < n_operands; ++i) ops.push_back(static_cast<int>(rng.below(10)));
  return make_arithmetic(ops);
}

std::vector<std::uint8_t> halt_labels(const Example& ex) {
  std::vector<std::uint8_t> labels(ex.length(), 0);
  for (std::size_t t = ex.optimal_stop; t < labels.size(); ++t) labels[t] = 1;
  return labels;
}

std::optional<std::string> parse_answer(std::span<const Token> generated) {
  const auto colon = std::find(generated.begin(), generated.end(), kColon);
  if (colon == generated.end()) return std::nullopt;
  std::string out;
  for (auto it = colon + 1; it != generated.end(); ++it) {
    if (*it == kHalt || *it == kSpace || *it == kColon) break;
    out += Vocabulary::instance().symbol(*it);
  }
  if (out.empty()) return std::nullopt;
  return out;
}

}  // namespace thermo::taskgen
