#pragma once

// Count-based n-gram LM (default order 6) with stupid-backoff smoothing:
// S(w|ctx) = count(ctx w)/count(ctx) when the full n-gram was seen, else
// 0.4 * S(w|shorter ctx), bottoming out in an add-1 unigram so every token
// scores finite. Raw backoff scores are unnormalized; the fusion-facing
// query renormalizes them over the base vocabulary per context (rows cached,
// single-threaded use). A sentence-start marker occupies the context slots
// before the first word so start statistics are modeled.

#include <cstdint>
#include <fstream>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "ctckd/common.hpp"
#include "ctckd/vocab.hpp"

namespace ctckd {

class NgramLm {
 public:
  static constexpr double kBackoffFactor = 0.4;

  NgramLm() = default;
  NgramLm(int order, int vocab_size) : order_(order), vocab_(vocab_size) {
    check_arg(order >= 1, "ngram: order must be >= 1, got ", order);
    check_arg(vocab_size >= 2, "ngram: vocab too small");
    grams_.resize(static_cast<size_t>(order));
    context_totals_.resize(static_cast<size_t>(order));
    unigram_counts_.assign(static_cast<size_t>(vocab_size), 0);
  }

  int order() const { return order_; }
  int vocab_size() const { return vocab_; }
  int bos_id() const { return vocab_; }  // context-only pseudo-token

  void observe(const std::vector<int>& sentence) {
    check_arg(!sentence.empty(), "ngram: empty sentence");
    std::vector<int> padded(static_cast<size_t>(order_ - 1), bos_id());
    for (int t : sentence) {
      check_arg(t >= 0 && t < vocab_, "ngram: token ", t, " outside vocab");
      padded.push_back(t);
    }
    const size_t start = static_cast<size_t>(order_ - 1);
    for (size_t i = start; i < padded.size(); i++) {
      unigram_counts_[static_cast<size_t>(padded[i])]++;
      total_tokens_++;
      for (int n = 2; n <= order_; n++) {
        std::string ctx = pack(&padded[i - static_cast<size_t>(n - 1)], n - 1);
        grams_[static_cast<size_t>(n - 1)][ctx + pack_one(padded[i])]++;
        context_totals_[static_cast<size_t>(n - 1)][ctx]++;
      }
    }
    rows_.clear();  // cached normalizations are stale now
  }

  static NgramLm train(const std::vector<std::vector<int>>& corpus, int order,
                       int vocab_size) {
    check_arg(!corpus.empty(), "ngram: empty corpus");
    NgramLm lm(order, vocab_size);
    for (const std::vector<int>& s : corpus) lm.observe(s);
    return lm;
  }

  // Unnormalized stupid-backoff log-score. context = previously emitted
  // tokens of the running prefix (sentence start implied).
  double raw_log_score(const std::vector<int>& context, int token) const {
    check_arg(token >= 0 && token < vocab_, "ngram: token ", token, " outside vocab");
    std::vector<int> ctx = effective_context(context);
    double penalty = 0.0;
    for (int len = static_cast<int>(ctx.size()); len >= 1; len--) {
      const int n = len + 1;
      std::string key = pack(ctx.data() + (ctx.size() - static_cast<size_t>(len)),
                             len);
      auto total_it = context_totals_[static_cast<size_t>(n - 1)].find(key);
      if (total_it != context_totals_[static_cast<size_t>(n - 1)].end()) {
        auto hit = grams_[static_cast<size_t>(n - 1)].find(key + pack_one(token));
        if (hit != grams_[static_cast<size_t>(n - 1)].end())
          return penalty + std::log(static_cast<double>(hit->second) /
                                    static_cast<double>(total_it->second));
      }
      penalty += std::log(kBackoffFactor);
    }
    // add-1 unigram floor: finite for every token, observed or not
    return penalty + std::log((static_cast<double>(unigram_counts_[static_cast<size_t>(token)]) + 1.0) /
                              (static_cast<double>(total_tokens_) + static_cast<double>(vocab_)));
  }

  // Normalized conditional used for shallow fusion: raw scores renormalized
  // over the base vocabulary for this context.
  double logprob(const std::vector<int>& context, int token) const {
    return context_row(context)[static_cast<size_t>(token)];
  }

  // Full normalized log-distribution for a context (cached).
  const std::vector<double>& context_row(const std::vector<int>& context) const {
    std::vector<int> ctx = effective_context(context);
    std::string key = pack(ctx.data(), static_cast<int>(ctx.size()));
    auto it = rows_.find(key);
    if (it != rows_.end()) return it->second;
    std::vector<double> row(static_cast<size_t>(vocab_));
    double z = kNegInf;
    for (int w = 0; w < vocab_; w++) {
      row[static_cast<size_t>(w)] = raw_log_score(context, w);
      z = log_add(z, row[static_cast<size_t>(w)]);
    }
    for (double& v : row) v -= z;
    return rows_.emplace(std::move(key), std::move(row)).first->second;
  }

  // Sorted text serialization: one line per observed n-gram,
  //   n TAB context-tokens TAB token TAB count
  // plus unigram lines with empty context; '<s>' marks sentence start.
  void save(const std::string& path, const Vocab& vocab) const {
    check_arg(vocab.base_size() == vocab_, "ngram: vocab size mismatch on save");
    std::ofstream os(path);
    check_state(os.good(), "ngram: cannot write ", path);
    os << "# ctckd-ngram v1\norder\t" << order_ << "\nvocab\t" << vocab_ << "\ntokens\t"
       << total_tokens_ << "\nbackoff\t" << kBackoffFactor << '\n';
    std::vector<std::string> lines;
    for (int w = 0; w < vocab_; w++)
      if (unigram_counts_[static_cast<size_t>(w)] > 0)
        lines.push_back(str_cat("1\t\t", vocab.token(w), '\t',
                                unigram_counts_[static_cast<size_t>(w)]));
    for (int n = 2; n <= order_; n++)
      for (const auto& [key, count] : grams_[static_cast<size_t>(n - 1)]) {
        std::vector<int> ids = unpack(key);
        std::string ctx_str;
        for (size_t i = 0; i + 1 < ids.size(); i++) {
          if (i) ctx_str += ' ';
          ctx_str += ids[i] == vocab_ ? "<s>" : vocab.token(ids[i]);
        }
        lines.push_back(str_cat(n, '\t', ctx_str, '\t', vocab.token(ids.back()), '\t',
                                count));
      }
    std::sort(lines.begin(), lines.end());
    for (const std::string& l : lines) os << l << '\n';
    check_state(os.good(), "ngram: write failed for ", path);
  }

  static NgramLm load(const std::string& path, const Vocab& vocab) {
    std::ifstream is(path);
    check_state(is.good(), "ngram: cannot read ", path);
    std::string line;
    check_state(std::getline(is, line) && line == "# ctckd-ngram v1",
                "ngram: bad header in ", path);
    auto header_int = [&](const std::string& want) {
      check_state(static_cast<bool>(std::getline(is, line)), "ngram: truncated ", path);
      std::istringstream ls(line);
      std::string key;
      int64_t v;
      check_state(static_cast<bool>(ls >> key >> v) && key == want, "ngram: malformed ",
                  path, " at ", line);
      return v;
    };
    const int order = static_cast<int>(header_int("order"));
    const int vsize = static_cast<int>(header_int("vocab"));
    const int64_t tokens = header_int("tokens");
    check_state(static_cast<bool>(std::getline(is, line)) && line.rfind("backoff", 0) == 0,
                "ngram: missing backoff line in ", path);
    check_state(vsize == vocab.base_size(), "ngram: vocab size mismatch on load");
    NgramLm lm(order, vsize);
    lm.total_tokens_ = tokens;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      std::vector<std::string> parts;
      size_t from = 0;
      for (int t = 0; t < 3; t++) {
        size_t tab = line.find('\t', from);
        check_state(tab != std::string::npos, "ngram: malformed record in ", path);
        parts.push_back(line.substr(from, tab - from));
        from = tab + 1;
      }
      parts.push_back(line.substr(from));
      const int n = std::stoi(parts[0]);
      check_state(n >= 1 && n <= order, "ngram: bad order in record");
      const int64_t count = std::stoll(parts[3]);
      const int token = vocab.id(parts[2]);
      if (n == 1) {
        lm.unigram_counts_[static_cast<size_t>(token)] = count;
        continue;
      }
      std::vector<int> ctx_ids;
      std::istringstream cs(parts[1]);
      std::string tok;
      while (cs >> tok) ctx_ids.push_back(tok == "<s>" ? lm.bos_id() : vocab.id(tok));
      check_state(static_cast<int>(ctx_ids.size()) == n - 1, "ngram: context length mismatch");
      std::string key = lm.pack(ctx_ids.data(), n - 1);
      lm.grams_[static_cast<size_t>(n - 1)][key + lm.pack_one(token)] = count;
      lm.context_totals_[static_cast<size_t>(n - 1)][key] += count;
    }
    return lm;
  }

 private:
  std::vector<int> effective_context(const std::vector<int>& context) const {
    // last order-1 symbols of [BOS...BOS, context]
    std::vector<int> ctx;
    const int need = order_ - 1;
    if (need == 0) return ctx;
    const int have = static_cast<int>(context.size());
    for (int i = 0; i < need - have; i++) ctx.push_back(bos_id());
    for (int i = std::max(0, have - need); i < have; i++) ctx.push_back(context[static_cast<size_t>(i)]);
    return ctx;
  }

  std::string pack_one(int id) const {
    std::string s(4, '\0');
    for (int b = 0; b < 4; b++) s[static_cast<size_t>(b)] = static_cast<char>((id >> (8 * b)) & 0xff);
    return s;
  }

  std::string pack(const int* ids, int n) const {
    std::string s;
    s.reserve(static_cast<size_t>(4 * n));
    for (int i = 0; i < n; i++) s += pack_one(ids[i]);
    return s;
  }

  static std::vector<int> unpack(const std::string& key) {
    std::vector<int> ids(key.size() / 4);
    for (size_t i = 0; i < ids.size(); i++) {
      int v = 0;
      for (int b = 3; b >= 0; b--)
        v = (v << 8) | static_cast<unsigned char>(key[4 * i + static_cast<size_t>(b)]);
      ids[i] = v;
    }
    return ids;
  }

  int order_ = 0;
  int vocab_ = 0;
  int64_t total_tokens_ = 0;
  std::vector<int64_t> unigram_counts_;
  // grams_[n-1]: packed (context, token) -> count; context_totals_[n-1]:
  // packed context -> count. Index 0 unused (unigrams live in their own table).
  std::vector<std::unordered_map<std::string, int64_t>> grams_;
  std::vector<std::unordered_map<std::string, int64_t>> context_totals_;
  mutable std::unordered_map<std::string, std::vector<double>> rows_;
};

}  // namespace ctckd
