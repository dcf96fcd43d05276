#include <filesystem>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "thermo/errors.hpp"
#include "thermo/taskgen.hpp"

namespace thermo::taskgen {

namespace {

std::pair<int, int> domain(Task task) {
  switch (task) {
    case Task::Parity: return {2, 10};
    case Task::Sorting: return {3, 8};
    case Task::Arithmetic: return {2, 5};
  }
  return {0, 0};
}

// The idx-th input of the given length in lexicographic order.
Example make_indexed(Task task, int length, std::uint64_t idx, const TierRanges& ranges) {
  switch (task) {
    case Task::Parity: {
      std::string bits(static_cast<std::size_t>(length), '0');
      for (int i = length - 1; i >= 0; --i, idx >>= 1) bits[static_cast<std::size_t>(i)] = (idx & 1) ? '1' : '0';
      return make_parity(bits, ranges);
    }
    case Task::Sorting: {
      std::string s(static_cast<std::size_t>(length), 'A');
      for (int i = length - 1; i >= 0; --i, idx /= 6) s[static_cast<std::size_t>(i)] = static_cast<char>('A' + idx % 6);
      return make_sort(s, ranges);
    }
    case Task::Arithmetic: {
      std::vector<int> ops(static_cast<std::size_t>(length));
      for (int i = length - 1; i >= 0; --i, idx /= 10) ops[static_cast<std::size_t>(i)] = static_cast<int>(idx % 10);
      return make_arithmetic(ops, ranges);
    }
  }
  throw DomainError("unknown task");
}

void validate_ranges(Task task, const TierRanges& ranges) {
  const auto [lo, hi] = domain(task);
  for (std::size_t i = 0; i < ranges.bounds.size(); ++i) {
    const auto [a, b] = ranges.bounds[i];
    if (a > b) throw ConfigError("tier range " + std::to_string(i) + " is empty");
    if (a < lo || b > hi) throw ConfigError("tier range " + std::to_string(i) + " outside the task's length domain");
    if (i > 0 && a != ranges.bounds[i - 1].second + 1) throw ConfigError("tier ranges must partition a contiguous range");
  }
}

// Per-split counts for one tier: n / 3 each, remainder to the lower tiers.
std::size_t tier_share(std::size_t n, std::size_t tier) { return n / 3 + (tier < n % 3 ? 1 : 0); }

}  // namespace

std::uint64_t distinct_inputs(Task task, int length) {
  const std::uint64_t base = task == Task::Parity ? 2 : task == Task::Sorting ? 6 : 10;
  std::uint64_t n = 1;
  for (int i = 0; i < length; ++i) n *= base;
  return n;
}

Dataset build_dataset(Task task, SplitSizes sizes, const TierRanges& ranges, std::uint64_t seed, Sampling sampling) {
  if (sizes.train == 0) throw ConfigError("train split size must be positive");
  validate_ranges(task, ranges);

  Dataset ds;
  ds.task = task;
  ds.seed = seed;
  std::array<std::vector<Example>*, 3> splits{&ds.train, &ds.val, &ds.test};
  const std::array<std::size_t, 3> split_sizes{sizes.train, sizes.val, sizes.test};
  const auto base = mathcore::split_rng(seed, std::string("dataset/") + std::string(to_string(task)));

  for (std::size_t tier = 0; tier < 3; ++tier) {
    const auto [lo, hi] = ranges.bounds[tier];
    std::array<std::size_t, 3> need{};
    std::size_t total = 0;
    for (std::size_t s = 0; s < 3; ++s) total += need[s] = tier_share(split_sizes[s], tier);
    std::uint64_t available = 0;
    for (int n = lo; n <= hi; ++n) available += distinct_inputs(task, n);
    auto rng = base.split("tier" + std::to_string(tier));

    if (total <= available) {
      // Rejection sampling over non-exhausted lengths; first occurrence wins.
      std::vector<int> lengths;
      std::vector<std::uint64_t> used_per_length;
      for (int n = lo; n <= hi; ++n) {
        lengths.push_back(n);
        used_per_length.push_back(0);
      }
      std::unordered_set<std::string> seen;
      std::size_t split = 0, in_split = 0;
      while (seen.size() < total) {
        while (in_split == need[split]) {
          ++split;
          in_split = 0;
        }
        std::vector<std::size_t> open;
        for (std::size_t i = 0; i < lengths.size(); ++i)
          if (used_per_length[i] < distinct_inputs(task, lengths[i])) open.push_back(i);
        const std::size_t li = open[rng.below(open.size())];
        const int n = lengths[li];
        Example ex = make_indexed(task, n, rng.below(distinct_inputs(task, n)), ranges);
        if (!seen.insert(ex.input).second) continue;
        ++used_per_length[li];
        splits[split]->push_back(std::move(ex));
        ++in_split;
      }
      continue;
    }

    if (sampling == Sampling::Distinct)
      throw InfeasibleError("tier " + std::string(to_string(static_cast<Tier>(tier))) + " needs " +
                            std::to_string(total) + " distinct inputs but only " + std::to_string(available) +
                            " exist");

    std::size_t active = 0;
    for (auto n : need) active += n > 0;
    if (available < active || available > 5'000'000)
      throw InfeasibleError("tier " + std::string(to_string(static_cast<Tier>(tier))) +
                            " cannot be split into disjoint pools (" + std::to_string(available) + " inputs)");

    std::vector<Example> all;
    for (int n = lo; n <= hi; ++n)
      for (std::uint64_t i = 0; i < distinct_inputs(task, n); ++i) all.push_back(make_indexed(task, n, i, ranges));
    rng.shuffle(all.begin(), all.end());

    // Pool sizes proportional to demand (largest remainder), at least one
    // input per split that requests this tier.
    std::array<std::size_t, 3> pool{};
    std::size_t assigned = 0;
    for (std::size_t s = 0; s < 3; ++s) {
      if (!need[s]) continue;
      pool[s] = std::max<std::size_t>(1, need[s] * all.size() / total);
      assigned += pool[s];
    }
    for (std::size_t s = 0; assigned > all.size(); s = (s + 1) % 3)
      if (pool[s] > 1) --pool[s], --assigned;
    for (std::size_t s = 0; assigned < all.size(); s = (s + 1) % 3)
      if (need[s]) ++pool[s], ++assigned;

    std::size_t offset = 0;
    for (std::size_t s = 0; s < 3; ++s) {
      for (std::size_t k = 0; k < need[s]; ++k) splits[s]->push_back(all[offset + rng.below(pool[s])]);
      offset += pool[s];
    }
  }

  for (std::size_t s = 0; s < 3; ++s) {
    auto rng = base.split("order" + std::to_string(s));
    rng.shuffle(splits[s]->begin(), splits[s]->end());
  }
  return ds;
}

std::vector<Example> ood_parity(int n_bits, std::size_t count, std::uint64_t seed) {
  auto rng = mathcore::split_rng(seed, "ood/parity/" + std::to_string(n_bits));
  std::vector<Example> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(gen_parity(n_bits, rng));
  return out;
}

void write_examples(std::ostream& os, std::span<const Example> examples) {
  for (const auto& ex : examples)
    os << to_string(ex.task) << '\t' << to_string(ex.tier) << '\t' << ex.prompt_text() << '\t' << ex.trace_text()
       << '\t' << ex.optimal_stop << '\n';
}

std::vector<Example> read_examples(std::istream& is) {
  std::vector<Example> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::size_t start = 0;
    for (std::size_t pos; (pos = line.find('\t', start)) != std::string::npos; start = pos + 1)
      cols.push_back(line.substr(start, pos - start));
    cols.push_back(line.substr(start));
    if (cols.size() != 5) throw ConfigError("line " + std::to_string(lineno) + ": expected 5 tab-separated columns");
    Example ex;
    ex.task = task_from_string(cols[0]);
    ex.tier = tier_from_string(cols[1]);
    ex.prompt = tokenize(cols[2]);
    ex.trace = tokenize(cols[3]);
    if (ex.prompt.size() < 3 || ex.prompt.front() != kBos)
      throw ConfigError("line " + std::to_string(lineno) + ": malformed prompt");
    ex.input = detokenize(std::span(ex.prompt).subspan(1, ex.prompt.size() - 2));
    const auto answer = parse_answer(ex.trace);
    if (!answer) throw ConfigError("line " + std::to_string(lineno) + ": trace has no answer");
    ex.answer = *answer;
    ex.optimal_stop = std::stoul(cols[4]);
    if (ex.optimal_stop >= ex.length()) throw ConfigError("line " + std::to_string(lineno) + ": optimal_stop out of range");
    out.push_back(std::move(ex));
  }
  return out;
}

void save_dataset(const Dataset& ds, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const std::array<std::pair<const char*, const std::vector<Example>*>, 3> parts{
      {{"train.tsv", &ds.train}, {"val.tsv", &ds.val}, {"test.tsv", &ds.test}}};
  for (const auto& [name, examples] : parts) {
    std::ofstream os(std::filesystem::path(dir) / name, std::ios::binary);
    write_examples(os, *examples);
  }
  std::ofstream meta(std::filesystem::path(dir) / "dataset.txt");
  meta << "task\t" << to_string(ds.task) << "\nseed\t" << ds.seed << '\n';
}

Dataset load_dataset(const std::string& dir) {
  Dataset ds;
  std::ifstream meta(std::filesystem::path(dir) / "dataset.txt");
  if (!meta) throw ConfigError("no dataset in " + dir);
  std::string key, value;
  while (meta >> key >> value) {
    if (key == "task") ds.task = task_from_string(value);
    if (key == "seed") ds.seed = std::stoull(value);
  }
  const std::array<std::pair<const char*, std::vector<Example>*>, 3> parts{
      {{"train.tsv", &ds.train}, {"val.tsv", &ds.val}, {"test.tsv", &ds.test}}};
  for (const auto& [name, examples] : parts) {
    std::ifstream is(std::filesystem::path(dir) / name, std::ios::binary);
    if (!is) throw ConfigError(std::string("missing ") + name + " in " + dir);
    *examples = read_examples(is);
  }
  return ds;
}

}  // namespace thermo::taskgen
