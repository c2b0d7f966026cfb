#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "ctckd/common.hpp"

namespace ctckd {

struct WerBreakdown {
  int64_t sub = 0;
  int64_t ins = 0;
  int64_t del = 0;
  int64_t ref_len = 0;

  int64_t errors() const { return sub + ins + del; }
  double rate() const {
    check_state(ref_len > 0, "wer: empty reference");
    return static_cast<double>(errors()) / static_cast<double>(ref_len);
  }

  WerBreakdown& operator+=(const WerBreakdown& other) {
    sub += other.sub;
    ins += other.ins;
    del += other.del;
    ref_len += other.ref_len;
    return *this;
  }
};

// Levenshtein alignment with unit costs. Among minimum-cost alignments the
// substitution-heavy one is reported (deletions minimized, then insertions
// follow from the length difference), which makes the (S, I, D) split unique
// and symmetric under swapping ref/hyp with I and D exchanged.
inline WerBreakdown wer(const std::vector<int>& ref, const std::vector<int>& hyp) {
  check_arg(!ref.empty(), "wer: empty reference");
  const size_t m = ref.size(), n = hyp.size();
  // dp = (cost, deletions), lexicographic minimum
  using Cell = std::pair<int64_t, int64_t>;
  std::vector<Cell> prev(n + 1), cur(n + 1);
  for (size_t j = 0; j <= n; j++) prev[j] = {static_cast<int64_t>(j), 0};
  for (size_t i = 1; i <= m; i++) {
    cur[0] = {static_cast<int64_t>(i), static_cast<int64_t>(i)};
    for (size_t j = 1; j <= n; j++) {
      const int64_t diag_cost = ref[i - 1] == hyp[j - 1] ? 0 : 1;
      Cell best = {prev[j - 1].first + diag_cost, prev[j - 1].second};
      Cell del = {prev[j].first + 1, prev[j].second + 1};
      Cell ins = {cur[j - 1].first + 1, cur[j - 1].second};
      if (del < best) best = del;
      if (ins < best) best = ins;
      cur[j] = best;
    }
    std::swap(prev, cur);
  }
  WerBreakdown out;
  out.ref_len = static_cast<int64_t>(m);
  out.del = prev[n].second;
  out.ins = out.del + static_cast<int64_t>(n) - static_cast<int64_t>(m);
  out.sub = prev[n].first - out.del - out.ins;
  return out;
}

// Maps frame counts to nominal audio seconds for RTF denominators.
struct NominalClock {
  double frames_per_second = 100.0;

  double seconds(int64_t frames) const {
    check_arg(frames_per_second > 0.0, "clock: frame rate must be positive");
    return static_cast<double>(frames) / frames_per_second;
  }
};

// Real-time factor: wall-clock decode time over nominal audio duration,
// measured single-threaded after `warmup` untimed utterances.
inline double measure_rtf(const std::function<void(size_t)>& decode_one,
                          const std::vector<int64_t>& frame_counts,
                          const NominalClock& clock = {}, size_t warmup = 0) {
  check_arg(!frame_counts.empty(), "rtf: empty manifest");
  check_arg(warmup < frame_counts.size(), "rtf: warmup ", warmup,
            " leaves no timed utterances out of ", frame_counts.size());
  for (size_t i = 0; i < warmup; i++) decode_one(i);
  double nominal = 0.0;
  const auto start = std::chrono::steady_clock::now();
  for (size_t i = warmup; i < frame_counts.size(); i++) {
    decode_one(i);
    nominal += clock.seconds(frame_counts[i]);
  }
  const auto stop = std::chrono::steady_clock::now();
  check_arg(nominal > 0.0, "rtf: zero nominal duration");
  const double wall =
      std::max(1e-12, std::chrono::duration<double>(stop - start).count());
  return wall / nominal;
}

// One aggregate metrics row: split, system, decode mode, WER, S, I, D, RTF.
inline std::string metrics_tsv_row(const std::string& split, const std::string& system,
                                   const std::string& mode, const WerBreakdown& agg,
                                   double rtf) {
  std::ostringstream os;
  os << split << '\t' << system << '\t' << mode << '\t';
  os.precision(6);
  os << std::fixed << 100.0 * agg.rate();
  os << '\t' << agg.sub << '\t' << agg.ins << '\t' << agg.del << '\t';
  os.precision(6);
  os << rtf;
  return os.str();
}

inline std::string metrics_tsv_header() {
  return "split\tsystem\tmode\twer\tsub\tins\tdel\trtf";
}

}  // namespace ctckd
