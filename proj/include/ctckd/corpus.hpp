#pragma once

// Synthetic corpus: sentences drawn from a Markov chain over the base vocab,
// rendered to noisy feature frames via a fixed random codebook (each token
// emits 2-4 frames). Per-utterance RNG streams derive from (seed, index), so
// generation order never changes output. Every rendered utterance satisfies
// the CTC feasibility bound T >= U + #adjacent-repeats by construction
// (min 2 frames per token); it is asserted anyway.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "ctckd/common.hpp"
#include "ctckd/tensor.hpp"
#include "ctckd/vocab.hpp"

namespace ctckd {

struct LanguageSpec {
  int vocab_size = 0;
  int min_len = 3;
  int max_len = 10;
  std::vector<double> start;       // vocab_size entries
  std::vector<double> transition;  // vocab_size x vocab_size, row major

  void validate() const {
    check_arg(vocab_size >= 2, "language: vocab size ", vocab_size, " too small");
    check_arg(min_len >= 1 && max_len >= min_len, "language: bad length bounds ",
              min_len, "..", max_len);
    check_arg(static_cast<int>(start.size()) == vocab_size, "language: start size mismatch");
    check_arg(static_cast<int>(transition.size()) == vocab_size * vocab_size,
              "language: transition size mismatch");
    auto check_row = [&](const double* row, const std::string& what) {
      double sum = 0.0;
      for (int j = 0; j < vocab_size; j++) {
        check_arg(row[j] >= 0.0, "language: negative probability in ", what);
        sum += row[j];
      }
      check_arg(std::fabs(sum - 1.0) <= 1e-12, "language: ", what, " sums to ", sum);
    };
    check_row(start.data(), "start distribution");
    for (int i = 0; i < vocab_size; i++)
      check_row(transition.data() + i * vocab_size, str_cat("transition row ", i));
  }

  // Rows drawn from a symmetric Dirichlet; small concentration makes the
  // chain peaky (low next-token entropy), large makes it near uniform.
  static LanguageSpec random(int vocab_size, int min_len, int max_len,
                             double concentration, uint64_t seed) {
    check_arg(concentration > 0.0, "language: concentration must be positive");
    LanguageSpec spec;
    spec.vocab_size = vocab_size;
    spec.min_len = min_len;
    spec.max_len = max_len;
    std::mt19937_64 rng(seed);
    std::gamma_distribution<double> gamma(concentration, 1.0);
    auto draw_row = [&](double* row) {
      double sum = 0.0;
      for (int j = 0; j < vocab_size; j++) {
        row[j] = gamma(rng) + 1e-12;  // keep every continuation drawable
        sum += row[j];
      }
      for (int j = 0; j < vocab_size; j++) row[j] /= sum;
      // exact renormalization so validate()'s 1e-12 bound holds
      double check = 0.0;
      for (int j = 0; j < vocab_size; j++) check += row[j];
      row[vocab_size - 1] += 1.0 - check;
    };
    spec.start.resize(static_cast<size_t>(vocab_size));
    spec.transition.resize(static_cast<size_t>(vocab_size) * vocab_size);
    draw_row(spec.start.data());
    for (int i = 0; i < vocab_size; i++) draw_row(spec.transition.data() + i * vocab_size);
    spec.validate();
    return spec;
  }

  // Each row one-hot: from every start token a single forced sentence.
  static LanguageSpec deterministic_cycle(int vocab_size, int min_len, int max_len) {
    LanguageSpec spec;
    spec.vocab_size = vocab_size;
    spec.min_len = min_len;
    spec.max_len = max_len;
    spec.start.assign(static_cast<size_t>(vocab_size), 1.0 / vocab_size);
    double fix = 1.0;
    for (int j = 0; j < vocab_size - 1; j++) fix -= 1.0 / vocab_size;
    spec.start[static_cast<size_t>(vocab_size - 1)] = fix;
    spec.transition.assign(static_cast<size_t>(vocab_size) * vocab_size, 0.0);
    for (int i = 0; i < vocab_size; i++)
      spec.transition[static_cast<size_t>(i) * vocab_size + (i + 1) % vocab_size] = 1.0;
    spec.validate();
    return spec;
  }

  uint64_t hash() const {
    std::string bytes;
    auto put_u64 = [&](uint64_t v) {
      for (int i = 0; i < 8; i++) bytes.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    };
    put_u64(static_cast<uint64_t>(vocab_size));
    put_u64(static_cast<uint64_t>(min_len));
    put_u64(static_cast<uint64_t>(max_len));
    auto put_doubles = [&](const std::vector<double>& v) {
      for (double d : v) {
        uint64_t u;
        std::memcpy(&u, &d, 8);
        put_u64(u);
      }
    };
    put_doubles(start);
    put_doubles(transition);
    return fnv1a(bytes.data(), bytes.size());
  }

  void save(const std::string& path) const {
    std::ofstream os(path);
    check_state(os.good(), "language: cannot write ", path);
    os << "vocab_size " << vocab_size << "\nmin_len " << min_len << "\nmax_len " << max_len
       << '\n';
    os << std::hexfloat;
    os << "start";
    for (double d : start) os << ' ' << d;
    os << "\ntransition";
    for (double d : transition) os << ' ' << d;
    os << '\n';
  }

  static LanguageSpec load(const std::string& path) {
    std::ifstream is(path);
    check_state(is.good(), "language: cannot read ", path);
    LanguageSpec spec;
    std::string key;
    auto read_doubles = [&](std::vector<double>& v, size_t n) {
      v.resize(n);
      for (size_t i = 0; i < n; i++) {
        std::string tok;
        check_state(static_cast<bool>(is >> tok), "language: truncated ", path);
        v[i] = std::strtod(tok.c_str(), nullptr);  // hexfloat round trip
      }
    };
    check_state(static_cast<bool>(is >> key >> spec.vocab_size) && key == "vocab_size",
                "language: malformed ", path);
    check_state(static_cast<bool>(is >> key >> spec.min_len) && key == "min_len",
                "language: malformed ", path);
    check_state(static_cast<bool>(is >> key >> spec.max_len) && key == "max_len",
                "language: malformed ", path);
    check_state(static_cast<bool>(is >> key) && key == "start", "language: malformed ", path);
    read_doubles(spec.start, static_cast<size_t>(spec.vocab_size));
    check_state(static_cast<bool>(is >> key) && key == "transition", "language: malformed ",
                path);
    read_doubles(spec.transition, static_cast<size_t>(spec.vocab_size) * spec.vocab_size);
    spec.validate();
    return spec;
  }
};

inline int sample_categorical(const double* probs, int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double u = unif(rng), acc = 0.0;
  for (int i = 0; i < n; i++) {
    acc += probs[i];
    if (u < acc) return i;
  }
  return n - 1;  // guard against accumulated rounding
}

inline std::vector<int> sample_sentence(const LanguageSpec& spec, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> len_dist(spec.min_len, spec.max_len);
  const int len = len_dist(rng);
  std::vector<int> sent;
  sent.reserve(static_cast<size_t>(len));
  int tok = sample_categorical(spec.start.data(), spec.vocab_size, rng);
  sent.push_back(tok);
  for (int i = 1; i < len; i++) {
    tok = sample_categorical(spec.transition.data() + tok * spec.vocab_size, spec.vocab_size,
                             rng);
    sent.push_back(tok);
  }
  return sent;
}

// Fixed random codebook shared by all splits of one corpus.
inline Tensor make_codebook(int vocab_size, int dim, uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, 0xc0deb001u));
  return Tensor::randn({vocab_size, dim}, rng);
}

inline Tensor render_features(const std::vector<int>& transcript, const Tensor& codebook,
                              std::mt19937_64& rng, double noise_level, int min_frames = 2,
                              int max_frames = 4, std::vector<int>* frames_out = nullptr) {
  check_arg(!transcript.empty(), "render: empty transcript");
  check_arg(min_frames >= 1 && max_frames >= min_frames, "render: bad frame bounds");
  const int dim = static_cast<int>(codebook.dim(1));
  std::uniform_int_distribution<int> frames_dist(min_frames, max_frames);
  std::vector<int> frames(transcript.size());
  int64_t total = 0;
  for (size_t i = 0; i < transcript.size(); i++) {
    frames[i] = frames_dist(rng);
    total += frames[i];
  }
  Tensor feats = Tensor::zeros({total, dim});
  std::normal_distribution<double> noise(0.0, 1.0);
  int64_t t = 0;
  for (size_t i = 0; i < transcript.size(); i++) {
    const double* code = codebook.data() + transcript[i] * dim;
    for (int f = 0; f < frames[i]; f++, t++) {
      double* row = feats.mutable_data() + t * dim;
      for (int d = 0; d < dim; d++) row[d] = code[d] + noise_level * noise(rng);
    }
  }
  int64_t repeats = 0;
  for (size_t i = 1; i < transcript.size(); i++)
    if (transcript[i] == transcript[i - 1]) repeats++;
  check_state(total >= static_cast<int64_t>(transcript.size()) + repeats,
              "render: produced infeasible frame count");
  if (frames_out) *frames_out = std::move(frames);
  return feats;
}

// --- feature binary format: magic, T, D as little-endian i64, then raw f64 ---

inline void save_features(const Tensor& feats, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  check_state(os.good(), "features: cannot write ", path);
  os.write("CTCKDFT1", 8);
  int64_t t = feats.dim(0), d = feats.dim(1);
  os.write(reinterpret_cast<const char*>(&t), 8);
  os.write(reinterpret_cast<const char*>(&d), 8);
  os.write(reinterpret_cast<const char*>(feats.data()),
           static_cast<std::streamsize>(sizeof(double) * feats.numel()));
  check_state(os.good(), "features: write failed for ", path);
}

inline Tensor load_features(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  check_state(is.good(), "features: cannot read ", path);
  char magic[8];
  is.read(magic, 8);
  check_state(is.gcount() == 8 && std::string(magic, 8) == "CTCKDFT1",
              "features: bad magic in ", path);
  int64_t t = 0, d = 0;
  is.read(reinterpret_cast<char*>(&t), 8);
  is.read(reinterpret_cast<char*>(&d), 8);
  check_state(is.good() && t > 0 && d > 0, "features: bad header in ", path);
  Tensor feats = Tensor::zeros({t, d});
  is.read(reinterpret_cast<char*>(feats.mutable_data()),
          static_cast<std::streamsize>(sizeof(double) * feats.numel()));
  check_state(is.gcount() == static_cast<std::streamsize>(sizeof(double) * feats.numel()),
              "features: truncated ", path);
  return feats;
}

// --- manifests: '#'-prefixed header, then one record per line ---

struct UtteranceRecord {
  std::string id;
  std::vector<int> transcript;
  std::string feature_path;  // relative to the manifest's directory
};

struct CorpusManifest {
  std::string split;
  uint64_t seed = 0;
  uint64_t language_hash = 0;
  std::vector<UtteranceRecord> records;
};

inline void save_manifest(const CorpusManifest& m, const Vocab& vocab,
                          const std::string& path) {
  std::ofstream os(path);
  check_state(os.good(), "manifest: cannot write ", path);
  os << "# ctckd-manifest v1\n";
  os << "# split\t" << m.split << '\n';
  os << "# seed\t" << m.seed << '\n';
  os << "# language\t" << std::hex << m.language_hash << std::dec << '\n';
  for (const UtteranceRecord& r : m.records)
    os << r.id << '\t' << vocab.detokenize(r.transcript) << '\t' << r.feature_path << '\n';
  check_state(os.good(), "manifest: write failed for ", path);
}

inline CorpusManifest load_manifest(const std::string& path, const Vocab& vocab) {
  std::ifstream is(path);
  check_state(is.good(), "manifest: cannot read ", path);
  CorpusManifest m;
  std::string line;
  std::unordered_map<std::string, bool> seen;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream hs(line.substr(1));
      std::string key;
      hs >> key;
      if (key == "split") hs >> m.split;
      if (key == "seed") hs >> m.seed;
      if (key == "language") hs >> std::hex >> m.language_hash;
      continue;
    }
    size_t tab1 = line.find('\t');
    size_t tab2 = line.find('\t', tab1 == std::string::npos ? tab1 : tab1 + 1);
    check_state(tab1 != std::string::npos && tab2 != std::string::npos,
                "manifest: malformed record in ", path, ": ", line);
    UtteranceRecord r;
    r.id = line.substr(0, tab1);
    r.transcript = vocab.tokenize(line.substr(tab1 + 1, tab2 - tab1 - 1));
    r.feature_path = line.substr(tab2 + 1);
    check_state(!seen.count(r.id), "manifest: duplicate id ", r.id, " in ", path);
    seen[r.id] = true;
    m.records.push_back(std::move(r));
  }
  return m;
}

inline std::string manifest_dir(const std::string& manifest_path) {
  return std::filesystem::path(manifest_path).parent_path().string();
}

inline Tensor load_record_features(const std::string& manifest_path,
                                   const UtteranceRecord& rec) {
  std::filesystem::path p = std::filesystem::path(manifest_dir(manifest_path)) /
                            rec.feature_path;
  return load_features(p.string());
}

// --- corpus build ---

struct GenDataConfig {
  int vocab_size = 32;
  int feature_dim = 16;
  int train_utts = 2000;
  int dev_utts = 200;
  int test_utts = 200;
  int text_sentences = 50000;
  int min_len = 3;
  int max_len = 10;
  double noise_level = 1.35;
  double concentration = 0.04;  // Dirichlet for transition rows
  uint64_t seed = 1234;
  std::string out_dir;
};

// Writes vocab.txt, language.txt, text.txt, {train,dev,test}.tsv and a
// features/ directory. Utterance index is global across splits, so ids stay
// unique and per-utterance streams never collide.
inline void build_corpora(const GenDataConfig& cfg) {
  check_arg(!cfg.out_dir.empty(), "gen-data: output directory not set");
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(cfg.out_dir) / "features");

  Vocab vocab = Vocab::pseudo_words(cfg.vocab_size);
  vocab.save((fs::path(cfg.out_dir) / "vocab.txt").string());

  LanguageSpec lang = LanguageSpec::random(cfg.vocab_size, cfg.min_len, cfg.max_len,
                                           cfg.concentration, mix_seed(cfg.seed, 1));
  lang.save((fs::path(cfg.out_dir) / "language.txt").string());

  Tensor codebook = make_codebook(cfg.vocab_size, cfg.feature_dim, cfg.seed);

  uint64_t index = 0;
  auto build_split = [&](const std::string& split, int count) {
    CorpusManifest m;
    m.split = split;
    m.seed = cfg.seed;
    m.language_hash = lang.hash();
    for (int i = 0; i < count; i++, index++) {
      std::mt19937_64 rng(mix_seed(cfg.seed, 1000 + index));
      UtteranceRecord r;
      r.id = str_cat(split, "-", i);
      r.transcript = sample_sentence(lang, rng);
      Tensor feats = render_features(r.transcript, codebook, rng, cfg.noise_level);
      r.feature_path = str_cat("features/", r.id, ".bin");
      save_features(feats, (fs::path(cfg.out_dir) / r.feature_path).string());
      m.records.push_back(std::move(r));
    }
    save_manifest(m, vocab, (fs::path(cfg.out_dir) / (split + ".tsv")).string());
  };
  build_split("train", cfg.train_utts);
  build_split("dev", cfg.dev_utts);
  build_split("test", cfg.test_utts);

  std::ofstream text((fs::path(cfg.out_dir) / "text.txt").string());
  check_state(text.good(), "gen-data: cannot write text corpus");
  for (int i = 0; i < cfg.text_sentences; i++, index++) {
    std::mt19937_64 rng(mix_seed(cfg.seed, 1000 + index));
    text << vocab.detokenize(sample_sentence(lang, rng)) << '\n';
  }
  check_state(text.good(), "gen-data: text corpus write failed");
}

inline std::vector<std::vector<int>> load_text_corpus(const std::string& path,
                                                      const Vocab& vocab) {
  std::ifstream is(path);
  check_state(is.good(), "text: cannot read ", path);
  std::vector<std::vector<int>> sentences;
  std::string line;
  while (std::getline(is, line))
    if (!line.empty()) sentences.push_back(vocab.tokenize(line));
  return sentences;
}

}  // namespace ctckd
