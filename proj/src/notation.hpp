#pragma once
// Chess notation layer: PGN movetext parsing, piece-letter translation
// between language conventions, and the closed move vocabulary that defines
// the sequence targets.

#include <map>
#include <string>
#include <vector>

#include "util.hpp"

namespace csr {

// One move in standard algebraic notation, tagged with the language of its
// piece letters ("en", "pt", ...).
struct SanMove {
  std::string text;
  std::string language = "en";

  bool operator==(const SanMove& o) const {
    return text == o.text && language == o.language;
  }
};

struct GameRecord {
  std::vector<SanMove> moves;
  std::map<std::string, std::string> metadata;
};

// True when `text` matches the SAN token grammar: an optional piece letter,
// optional disambiguation, optional capture, destination square, optional
// promotion, optional check/mate suffix — or a castling form.
bool is_san_token(const std::string& text);

// Parses PGN movetext, optionally preceded by [Tag "Value"] pairs. Move
// numbers (including glued forms like "1.e4"), {...} comments, tag pairs,
// and result tokens are stripped; everything else must be a SAN token.
// Throws DataError naming the byte offset on a malformed token.
GameRecord parse_pgn(const std::string& text, const std::string& language = "en");

// Splits a PGN file that may contain several games (separated by tag pair
// blocks) into one GameRecord per game with a non-empty move list.
std::vector<GameRecord> parse_pgn_collection(const std::string& text,
                                             const std::string& language = "en");

// Bijective piece-letter table between a local language and English.
// Squares, digits, "x", castling "O", "=", "+", "#" are untouched.
class LangMap {
 public:
  LangMap() = default;

  // Two whitespace-separated columns per line: local letter, English letter.
  // '#' starts a comment. Throws DataError if the table is not bijective.
  static LangMap from_text(const std::string& text, std::string local_tag);
  static LangMap from_file(const std::string& path, std::string local_tag);

  const std::string& local_tag() const { return local_tag_; }
  bool empty() const { return to_english_.empty(); }

  std::vector<SanMove> to_english(const std::vector<SanMove>& moves) const;
  std::vector<SanMove> to_local(const std::vector<SanMove>& moves) const;

 private:
  std::vector<SanMove> apply(const std::vector<SanMove>& moves,
                             const std::map<char, char>& table,
                             const std::string& out_tag) const;

  std::map<char, char> to_english_;
  std::map<char, char> to_local_;
  std::string local_tag_ = "local";
};

// Closed move vocabulary: 4 reserved specials at fixed codes, then corpus
// moves. Encoding is total (unknown tokens map to UNK).
class Vocabulary {
 public:
  static constexpr int kStart = 0;
  static constexpr int kEnd = 1;
  static constexpr int kPad = 2;
  static constexpr int kUnk = 3;
  static constexpr int kNumSpecials = 4;

  Vocabulary();  // specials only
  explicit Vocabulary(std::vector<std::string> move_tokens);

  int size() const { return static_cast<int>(tokens_.size()); }
  bool contains(const std::string& token) const;
  // Total map: unknown tokens yield kUnk.
  int code(const std::string& token) const;
  // Throws DataError when code is outside [0, size).
  const std::string& token(int code) const;

  // Appends END; out-of-vocabulary tokens become UNK.
  std::vector<int> encode(const std::vector<std::string>& tokens) const;
  std::vector<int> encode(const std::vector<SanMove>& moves) const;
  // Drops PAD, stops at END (exclusive).
  std::vector<std::string> decode(const std::vector<int>& codes) const;

  // Line-oriented "code<TAB>token", codes ascending from 0.
  std::string to_text() const;
  static Vocabulary from_text(const std::string& text);
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

  // Stable content hash used to pair checkpoints with their vocabulary.
  uint64_t content_hash() const { return fnv1a64(to_text()); }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int> code_of_;
};

// Frequency-ranked vocabulary over the first `positions` moves of each game.
// Ties break lexicographically; `cap` = 0 means unlimited. Throws DataError
// on an empty corpus, UsageError when positions < 1.
Vocabulary build_vocabulary(const std::vector<GameRecord>& corpus, int positions,
                            int cap = 0);

}  // namespace csr
