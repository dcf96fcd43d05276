#include <algorithm>

#include "thermo/errors.hpp"
#include "thermo/taskgen.hpp"

namespace thermo::taskgen {

Vocabulary::Vocabulary() {
  symbols_ = {"<PAD>", "?", "<HALT>"};
  for (char c = '0'; c <= '9'; ++c) symbols_.emplace_back(1, c);
  for (char c = 'A'; c <= 'F'; ++c) symbols_.emplace_back(1, c);
  for (char c : {'^', '=', ':', '+', ' '}) symbols_.emplace_back(1, c);
  char_to_id_.fill(-1);
  for (std::size_t i = 0; i < symbols_.size(); ++i)
    if (symbols_[i].size() == 1) char_to_id_[static_cast<unsigned char>(symbols_[i][0])] = static_cast<Token>(i);
}

const Vocabulary& Vocabulary::instance() {
  static const Vocabulary v;
  return v;
}

const std::string& Vocabulary::symbol(Token id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= symbols_.size())
    throw EncodingError("token id " + std::to_string(id) + " outside vocabulary");
  return symbols_[static_cast<std::size_t>(id)];
}

std::optional<Token> Vocabulary::id_of(std::string_view symbol) const {
  if (symbol.size() == 1) {
    const Token id = char_to_id_[static_cast<unsigned char>(symbol[0])];
    if (id >= 0) return id;
    return std::nullopt;
  }
  const auto it = std::find(symbols_.begin(), symbols_.end(), symbol);
  if (it == symbols_.end()) return std::nullopt;
  return static_cast<Token>(it - symbols_.begin());
}

std::vector<Token> tokenize(std::string_view text) {
  const auto& vocab = Vocabulary::instance();
  std::vector<Token> out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == '<') {
      const auto close = text.find('>', i);
      if (close != std::string_view::npos) {
        const auto sentinel = text.substr(i, close - i + 1);
        if (auto id = vocab.id_of(sentinel); id && sentinel.size() > 1) {
          out.push_back(*id);
          i = close + 1;
          continue;
        }
      }
      throw EncodingError("unknown symbol '<' at position " + std::to_string(i));
    }
    const auto id = vocab.id_of(text.substr(i, 1));
    if (!id) throw EncodingError("unknown symbol '" + std::string(1, text[i]) + "' at position " + std::to_string(i));
    out.push_back(*id);
    ++i;
  }
  return out;
}

std::string detokenize(std::span<const Token> ids) {
  const auto& vocab = Vocabulary::instance();
  std::string out;
  for (Token id : ids) out += vocab.symbol(id);
  return out;
}

std::string_view to_string(Task t) {
  switch (t) {
    case Task::Parity: return "parity";
    case Task::Sorting: return "sorting";
    case Task::Arithmetic: return "arithmetic";
  }
  return "?";
}

std::string_view to_string(Tier t) {
  switch (t) {
    case Tier::T0: return "T0";
    case Tier::T1: return "T1";
    case Tier::T2: return "T2";
    case Tier::OOD: return "OOD";
  }
  return "?";
}

Task task_from_string(std::string_view s) {
  if (s == "parity") return Task::Parity;
  if (s == "sorting") return Task::Sorting;
  if (s == "arithmetic") return Task::Arithmetic;
  throw ConfigError("unknown task '" + std::string(s) + "'");
}

Tier tier_from_string(std::string_view s) {
  if (s == "T0") return Tier::T0;
  if (s == "T1") return Tier::T1;
  if (s == "T2") return Tier::T2;
  if (s == "OOD") return Tier::OOD;
  throw ConfigError("unknown tier '" + std::string(s) + "'");
}

}  // namespace thermo::taskgen
