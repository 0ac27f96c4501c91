#pragma once

// Independent reference implementations used by the unit tests and the
// acceptance run. None of them call into the library code they check.

#include <array>
#include <cstddef>
#include <map>
#include <vector>

namespace oracle {

// Temporal shift through an explicit source-index table. src[t][c] is the
// frame read by output frame t in channel c, or -1 for zero fill.
inline std::vector<double> shift_by_index_map(const std::vector<double>& in, std::size_t b, std::size_t t,
                                              std::size_t c, std::size_t hw) {
  std::vector<std::vector<long>> src(t, std::vector<long>(c, -1));
  for (std::size_t ti = 0; ti < t; ++ti)
    for (std::size_t ci = 0; ci < c; ++ci) {
      const long from = ci < c / 2 ? static_cast<long>(ti) - 1 : static_cast<long>(ti) + 1;
      if (from >= 0 && from < static_cast<long>(t)) src[ti][ci] = from;
    }
  std::vector<double> out(in.size(), 0.0);
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t ti = 0; ti < t; ++ti)
      for (std::size_t ci = 0; ci < c; ++ci) {
        const long f = src[ti][ci];
        if (f < 0) continue;
        for (std::size_t p = 0; p < hw; ++p)
          out[((bi * t + ti) * c + ci) * hw + p] = in[((bi * t + static_cast<std::size_t>(f)) * c + ci) * hw + p];
      }
  return out;
}

struct TaskCounts {
  double top1 = 0, top5 = 0, precision = 0, recall = 0;
};

// Metrics from a full confusion matrix and a full sort of every score row.
// Ranks are found by sorting (score descending, index ascending) pairs.
inline TaskCounts confusion_metrics(const std::vector<std::vector<double>>& scores, const std::vector<int>& truth) {
  const std::size_t n = truth.size(), k = scores.at(0).size();
  std::vector<std::vector<std::size_t>> confusion(k, std::vector<std::size_t>(k, 0));
  std::size_t hit1 = 0, hit5 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::size_t> order(k);
    for (std::size_t j = 0; j < k; ++j) order[j] = j;
    const auto& s = scores[i];
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t bb = a + 1; bb < k; ++bb) {
        const bool swap_needed = s[order[bb]] > s[order[a]] || (s[order[bb]] == s[order[a]] && order[bb] < order[a]);
        if (swap_needed) std::swap(order[a], order[bb]);
      }
    for (std::size_t r = 0; r < k; ++r) {
      if (order[r] != static_cast<std::size_t>(truth[i])) continue;
      if (r < 1) ++hit1;
      if (r < 5) ++hit5;
    }
    ++confusion[static_cast<std::size_t>(truth[i])][order[0]];
  }
  TaskCounts m;
  m.top1 = 100.0 * static_cast<double>(hit1) / static_cast<double>(n);
  m.top5 = 100.0 * static_cast<double>(hit5) / static_cast<double>(n);
  double ps = 0, rs = 0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t row = 0, col = 0;
    for (std::size_t j = 0; j < k; ++j) {
      row += confusion[c][j];
      col += confusion[j][c];
    }
    if (row == 0) continue;
    ++present;
    ps += col == 0 ? 0.0 : 100.0 * static_cast<double>(confusion[c][c]) / static_cast<double>(col);
    rs += 100.0 * static_cast<double>(confusion[c][c]) / static_cast<double>(row);
  }
  m.precision = ps / static_cast<double>(present);
  m.recall = rs / static_cast<double>(present);
  return m;
}

}  // namespace oracle
