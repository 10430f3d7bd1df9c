#include "sat/attention_masks.hpp"

#include <algorithm>
#include <cstdint>
#include <numeric>

namespace sat {

using detail::make_result;
using detail::Node;

Tensor top_k_filter(const Tensor& weights, std::size_t k) {
  if (weights.rank() < 1) throw DimensionError("top_k_filter: scalar input");
  const std::size_t n = weights.shape().back();
  const std::size_t rows = n == 0 ? 0 : weights.numel() / n;
  std::vector<double> out(weights.data().begin(), weights.data().end());
  // Per row: sum of kept weights, or 0 when the row passes through.
  std::vector<double> kept_sum(rows, 0.0);
  std::vector<std::uint8_t> kept(out.size(), 1);
  std::vector<std::size_t> idx(n);
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = out.data() + r * n;
    std::size_t nonzero = 0;
    for (std::size_t j = 0; j < n; ++j) nonzero += row[j] != 0.0;
    if (nonzero <= k) continue;
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + static_cast<long>(k), idx.end(),
                      [row](std::size_t x, std::size_t y) {
                        return row[x] > row[y] || (row[x] == row[y] && x < y);
                      });
    std::fill(kept.begin() + static_cast<long>(r * n),
              kept.begin() + static_cast<long>((r + 1) * n), 0);
    double s = 0.0;
    for (std::size_t m = 0; m < k; ++m) {
      kept[r * n + idx[m]] = 1;
      s += row[idx[m]];
    }
    kept_sum[r] = s;
    for (std::size_t j = 0; j < n; ++j) {
      row[j] = kept[r * n + j] ? row[j] / s : 0.0;
    }
  }
  return make_result(
      weights.shape(), std::move(out), {weights},
      [n, rows, kept = std::move(kept), kept_sum = std::move(kept_sum)](
          Node& self) {
        auto& gx = self.parents[0]->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
          const double* g = self.grad.data() + r * n;
          if (kept_sum[r] == 0.0) {
            for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += g[j];
            continue;
          }
          const double* y = self.data.data() + r * n;
          double dot = 0.0;
          for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
          for (std::size_t j = 0; j < n; ++j) {
            if (kept[r * n + j]) gx[r * n + j] += (g[j] - dot) / kept_sum[r];
          }
        }
      });
}

}  // namespace sat
