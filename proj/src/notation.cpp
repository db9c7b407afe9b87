#include "notation.hpp"

#include <algorithm>
#include <cctype>
#include <regex>
#include <sstream>

namespace csr {

namespace {

bool is_result_token(const std::string& t) {
  return t == "1-0" || t == "0-1" || t == "1/2-1/2" || t == "*";
}

// Raw whitespace token plus its byte offset in the source text.
struct RawToken {
  std::string text;
  size_t offset;
};

}  // namespace

bool is_san_token(const std::string& text) {
  static const std::regex grammar(
      R"(^(O-O(-O)?|[A-Z]?[a-h]?[1-8]?x?[a-h][1-8](=[A-Z])?)[+#]?$)");
  return !text.empty() && std::regex_match(text, grammar);
}

GameRecord parse_pgn(const std::string& text, const std::string& language) {
  GameRecord record;
  size_t i = 0;
  const size_t n = text.size();
  auto fail = [&](size_t at, const std::string& what) {
    throw DataError("pgn parse error at byte " + std::to_string(at) + ": " + what);
  };

  while (i < n) {
    unsigned char c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      ++i;
      continue;
    }
    if (c == '[') {
      // Tag pair: [Key "Value"]
      size_t close = text.find(']', i);
      if (close == std::string::npos) fail(i, "unterminated tag pair");
      std::string inside = text.substr(i + 1, close - i - 1);
      size_t q1 = inside.find('"');
      size_t q2 = inside.rfind('"');
      std::string key = inside.substr(0, q1 == std::string::npos ? inside.size() : q1);
      while (!key.empty() && std::isspace(static_cast<unsigned char>(key.back())))
        key.pop_back();
      std::string value;
      if (q1 != std::string::npos && q2 > q1) value = inside.substr(q1 + 1, q2 - q1 - 1);
      if (!key.empty()) record.metadata[key] = value;
      i = close + 1;
      continue;
    }
    if (c == '{') {
      size_t close = text.find('}', i);
      if (close == std::string::npos) fail(i, "unterminated comment");
      i = close + 1;
      continue;
    }
    // Plain token up to the next whitespace.
    size_t start = i;
    while (i < n && !std::isspace(static_cast<unsigned char>(text[i])) &&
           text[i] != '{')
      ++i;
    std::string tok = text.substr(start, i - start);
    if (is_result_token(tok)) continue;
    if (std::isdigit(static_cast<unsigned char>(tok[0]))) {
      // Move number, possibly glued to the move ("1.e4", "3...Nf6") — but a
      // bare pawn move like "e4" never starts with a digit, and results were
      // handled above.
      size_t j = 0;
      while (j < tok.size() && std::isdigit(static_cast<unsigned char>(tok[j]))) ++j;
      if (j >= tok.size() || tok[j] != '.') fail(start, "malformed token '" + tok + "'");
      while (j < tok.size() && tok[j] == '.') ++j;
      if (j == tok.size()) continue;  // bare move number
      tok = tok.substr(j);
      start += j;
    }
    if (!is_san_token(tok)) fail(start, "malformed token '" + tok + "'");
    record.moves.push_back(SanMove{tok, language});
  }
  return record;
}

std::vector<GameRecord> parse_pgn_collection(const std::string& text,
                                             const std::string& language) {
  // Split on blank-line-separated sections; a new tag block after movetext
  // starts a new game.
  std::vector<GameRecord> games;
  GameRecord current;
  bool in_moves = false;
  std::istringstream in(text);
  std::string line, chunk;
  auto flush = [&]() {
    if (!chunk.empty()) {
      GameRecord r = parse_pgn(chunk, language);
      current.moves.insert(current.moves.end(), r.moves.begin(), r.moves.end());
      for (auto& [k, v] : r.metadata) current.metadata[k] = v;
      chunk.clear();
    }
  };
  auto finish_game = [&]() {
    flush();
    if (!current.moves.empty()) games.push_back(std::move(current));
    current = GameRecord{};
    in_moves = false;
  };
  while (std::getline(in, line)) {
    bool is_tag = !line.empty() && line[0] == '[';
    if (is_tag && in_moves) finish_game();
    if (!is_tag && !line.empty()) in_moves = true;
    chunk += line;
    chunk += '\n';
  }
  finish_game();
  return games;
}

LangMap LangMap::from_text(const std::string& text, std::string local_tag) {
  LangMap m;
  m.local_tag_ = std::move(local_tag);
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::vector<std::string> cols = split_ws(line);
    if (cols.empty()) continue;
    if (cols.size() != 2 || cols[0].size() != 1 || cols[1].size() != 1)
      throw DataError("langmap line " + std::to_string(lineno) +
                      ": expected two single-letter columns");
    char local = cols[0][0], english = cols[1][0];
    if (m.to_english_.count(local) || m.to_local_.count(english))
      throw DataError("langmap line " + std::to_string(lineno) +
                      ": duplicate letter breaks bijectivity");
    m.to_english_[local] = english;
    m.to_local_[english] = local;
  }
  if (m.to_english_.empty()) throw DataError("langmap: empty table");
  return m;
}

LangMap LangMap::from_file(const std::string& path, std::string local_tag) {
  return from_text(read_text_file(path), std::move(local_tag));
}

std::vector<SanMove> LangMap::apply(const std::vector<SanMove>& moves,
                                    const std::map<char, char>& table,
                                    const std::string& out_tag) const {
  std::vector<SanMove> out;
  out.reserve(moves.size());
  for (const SanMove& m : moves) {
    SanMove t{m.text, out_tag};
    for (char& c : t.text) {
      if (!std::isupper(static_cast<unsigned char>(c)) || c == 'O') continue;
      auto it = table.find(c);
      if (it == table.end())
        throw DataError("translate: unmapped piece letter '" + std::string(1, c) +
                        "' in move '" + m.text + "'");
      c = it->second;
    }
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<SanMove> LangMap::to_english(const std::vector<SanMove>& moves) const {
  return apply(moves, to_english_, "en");
}

std::vector<SanMove> LangMap::to_local(const std::vector<SanMove>& moves) const {
  return apply(moves, to_local_, local_tag_);
}

namespace {
const char* kSpecialNames[Vocabulary::kNumSpecials] = {"START", "END", "PAD", "UNK"};
}

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(std::vector<std::string> move_tokens) {
  for (int s = 0; s < kNumSpecials; ++s) tokens_.emplace_back(kSpecialNames[s]);
  for (std::string& t : move_tokens) tokens_.push_back(std::move(t));
  for (size_t i = 0; i < tokens_.size(); ++i) {
    if (code_of_.count(tokens_[i]))
      throw DataError("vocabulary: duplicate token '" + tokens_[i] + "'");
    code_of_[tokens_[i]] = static_cast<int>(i);
  }
}

bool Vocabulary::contains(const std::string& token) const {
  return code_of_.count(token) > 0;
}

int Vocabulary::code(const std::string& token) const {
  auto it = code_of_.find(token);
  return it == code_of_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int c) const {
  if (c < 0 || c >= size())
    throw DataError("vocabulary: code " + std::to_string(c) + " out of range [0," +
                    std::to_string(size()) + ")");
  return tokens_[static_cast<size_t>(c)];
}

std::vector<int> Vocabulary::encode(const std::vector<std::string>& tokens) const {
  std::vector<int> out;
  out.reserve(tokens.size() + 1);
  for (const std::string& t : tokens) out.push_back(code(t));
  out.push_back(kEnd);
  return out;
}

std::vector<int> Vocabulary::encode(const std::vector<SanMove>& moves) const {
  std::vector<std::string> toks;
  toks.reserve(moves.size());
  for (const SanMove& m : moves) toks.push_back(m.text);
  return encode(toks);
}

std::vector<std::string> Vocabulary::decode(const std::vector<int>& codes) const {
  std::vector<std::string> out;
  for (int c : codes) {
    if (c == kEnd) break;
    if (c == kPad) continue;
    out.push_back(token(c));
  }
  return out;
}

std::string Vocabulary::to_text() const {
  std::string out;
  for (size_t i = 0; i < tokens_.size(); ++i) {
    out += std::to_string(i);
    out += '\t';
    out += tokens_[i];
    out += '\n';
  }
  return out;
}

Vocabulary Vocabulary::from_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<std::string> tokens;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    size_t tab = line.find('\t');
    if (tab == std::string::npos)
      throw DataError("vocabulary line " + std::to_string(lineno) + ": missing tab");
    int code = 0;
    try {
      code = std::stoi(line.substr(0, tab));
    } catch (const std::exception&) {
      throw DataError("vocabulary line " + std::to_string(lineno) + ": bad code");
    }
    if (code != static_cast<int>(tokens.size()))
      throw DataError("vocabulary line " + std::to_string(lineno) +
                      ": codes must be dense and ascending");
    tokens.push_back(line.substr(tab + 1));
  }
  if (tokens.size() < kNumSpecials)
    throw DataError("vocabulary: missing special tokens");
  for (int s = 0; s < kNumSpecials; ++s)
    if (tokens[static_cast<size_t>(s)] != kSpecialNames[s])
      throw DataError(std::string("vocabulary: special token at code ") +
                      std::to_string(s) + " must be " + kSpecialNames[s]);
  return Vocabulary(
      std::vector<std::string>(tokens.begin() + kNumSpecials, tokens.end()));
}

void Vocabulary::save(const std::string& path) const {
  write_text_file(path, to_text());
}

Vocabulary Vocabulary::load(const std::string& path) {
  return from_text(read_text_file(path));
}

Vocabulary build_vocabulary(const std::vector<GameRecord>& corpus, int positions,
                            int cap) {
  if (positions < 1) throw UsageError("build_vocabulary: positions must be >= 1");
  if (corpus.empty()) throw DataError("build_vocabulary: empty corpus");
  std::map<std::string, int64_t> freq;
  for (const GameRecord& g : corpus) {
    size_t limit = std::min(g.moves.size(), static_cast<size_t>(positions));
    for (size_t i = 0; i < limit; ++i) ++freq[g.moves[i].text];
  }
  std::vector<std::pair<std::string, int64_t>> ranked(freq.begin(), freq.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> tokens;
  for (const auto& [tok, count] : ranked) {
    if (cap > 0 && static_cast<int>(tokens.size()) >= cap) break;
    tokens.push_back(tok);
  }
  return Vocabulary(std::move(tokens));
}

}  // namespace csr
