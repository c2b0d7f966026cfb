#pragma once

// Token vocabulary shared by every component. Base tokens occupy ids
// 0..|V|-1 everywhere; the CTC head appends blank at index |V|, and the
// teacher/decoder space appends [MASK], [CLS], [SEP], [PAD] instead. Blank
// and the special ids never appear in transcripts.

#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "ctckd/common.hpp"

namespace ctckd {

class Vocab {
 public:
  static Vocab pseudo_words(int base_size) {
    check_arg(base_size >= 2, "vocab: need at least 2 base tokens, got ", base_size);
    static const char* consonants = "bdfgklmnprst";
    static const char* vowels = "aeiou";
    std::vector<std::string> syllables;
    for (int c = 0; c < 12; c++)
      for (int v = 0; v < 5; v++) syllables.push_back({consonants[c], vowels[v]});
    std::vector<std::string> tokens;
    for (const std::string& s : syllables) {
      if (static_cast<int>(tokens.size()) == base_size) return Vocab(std::move(tokens));
      tokens.push_back(s);
    }
    for (const std::string& a : syllables)
      for (const std::string& b : syllables) {
        if (static_cast<int>(tokens.size()) == base_size) return Vocab(std::move(tokens));
        tokens.push_back(a + b);
      }
    fail("vocab: base size ", base_size, " exceeds the pseudo-word inventory");
  }

  explicit Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    for (size_t i = 0; i < tokens_.size(); i++) {
      check_arg(!tokens_[i].empty(), "vocab: empty token at index ", i);
      auto [it, fresh] = index_.emplace(tokens_[i], static_cast<int>(i));
      check_arg(fresh, "vocab: duplicate token '", tokens_[i], "'");
    }
  }

  int base_size() const { return static_cast<int>(tokens_.size()); }

  // CTC output space: base tokens plus trailing blank.
  int blank_id() const { return base_size(); }
  int ctc_size() const { return base_size() + 1; }

  // Teacher/decoder space: base tokens plus [MASK], [CLS], [SEP], [PAD].
  int mask_id() const { return base_size(); }
  int cls_id() const { return base_size() + 1; }
  int sep_id() const { return base_size() + 2; }
  int pad_id() const { return base_size() + 3; }
  int lm_size() const { return base_size() + 4; }

  const std::string& token(int id) const {
    check_arg(id >= 0 && id < base_size(), "vocab: id ", id, " outside base range");
    return tokens_[static_cast<size_t>(id)];
  }

  int id(const std::string& token) const {
    auto it = index_.find(token);
    check_arg(it != index_.end(), "vocab: unknown token '", token, "'");
    return it->second;
  }

  std::vector<int> tokenize(const std::string& text) const {
    std::vector<int> ids;
    std::istringstream is(text);
    std::string tok;
    while (is >> tok) ids.push_back(id(tok));
    return ids;
  }

  std::string detokenize(const std::vector<int>& ids) const {
    std::string out;
    for (size_t i = 0; i < ids.size(); i++) {
      if (i) out += ' ';
      out += token(ids[i]);
    }
    return out;
  }

  void save(const std::string& path) const {
    std::ofstream os(path);
    check_state(os.good(), "vocab: cannot write ", path);
    for (const std::string& t : tokens_) os << t << '\n';
  }

  static Vocab load(const std::string& path) {
    std::ifstream is(path);
    check_state(is.good(), "vocab: cannot read ", path);
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(is, line))
      if (!line.empty()) tokens.push_back(line);
    return Vocab(std::move(tokens));
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace ctckd
