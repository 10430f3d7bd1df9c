#include "sat/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <numeric>
#include <stdexcept>

namespace sat {

std::string normalize_answer(std::string_view s) {
  std::string out;
  bool pending_space = false;
  for (char ch : s) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

std::size_t edit_distance(std::string_view a, std::string_view b) {
  std::vector<std::size_t> row(b.size() + 1);
  std::iota(row.begin(), row.end(), 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1,
                         diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

double vqa_accuracy(std::string_view prediction,
                    const std::vector<std::string>& answers) {
  if (answers.empty()) throw std::invalid_argument("vqa_accuracy needs answers");
  const std::string pred = normalize_answer(prediction);
  const auto matches = std::count_if(answers.begin(), answers.end(),
                                     [&](const std::string& a) {
                                       return normalize_answer(a) == pred;
                                     });
  return std::min(static_cast<double>(matches) / 3.0, 1.0);
}

double anls(std::string_view prediction, std::string_view ground_truth) {
  const std::string p = normalize_answer(prediction);
  const std::string g = normalize_answer(ground_truth);
  const std::size_t len = std::max(p.size(), g.size());
  if (len == 0) return 1.0;
  const double s = 1.0 - static_cast<double>(edit_distance(p, g)) /
                             static_cast<double>(len);
  return s >= 0.5 ? s : 0.0;
}

double anls(std::string_view prediction, const std::vector<std::string>& references) {
  double best = 0.0;
  for (const auto& r : references) best = std::max(best, anls(prediction, r));
  return best;
}

void score_record(EvalRecord& r) {
  r.score_vqa = vqa_accuracy(r.prediction, r.answers);
  r.score_anls = anls(r.prediction, r.answers);
}

nlohmann::json results_json(const std::vector<EvalRecord>& records) {
  nlohmann::json arr = nlohmann::json::array();
  double vqa = 0.0;
  double an = 0.0;
  for (const auto& r : records) {
    arr.push_back({{"id", r.id},
                   {"prediction", r.prediction},
                   {"score_vqa", r.score_vqa},
                   {"score_anls", r.score_anls}});
    vqa += r.score_vqa;
    an += r.score_anls;
  }
  const double n = records.empty() ? 1.0 : static_cast<double>(records.size());
  return {{"records", std::move(arr)}, {"mean_vqa", vqa / n}, {"mean_anls", an / n}};
}

}  // namespace sat
