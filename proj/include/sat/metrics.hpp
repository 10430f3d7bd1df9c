#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace sat {

/// Lowercase, trim, and collapse internal whitespace runs to one space.
std::string normalize_answer(std::string_view s);

/// Levenshtein distance over bytes.
std::size_t edit_distance(std::string_view a, std::string_view b);

/// Soft VQA accuracy: min(#references equal to the prediction / 3, 1) after
/// normalization.
double vqa_accuracy(std::string_view prediction,
                    const std::vector<std::string>& answers);

/// Normalized Levenshtein similarity, case-insensitive, truncated to 0 below
/// 0.5. Two empty strings score 1.
double anls(std::string_view prediction, std::string_view ground_truth);

/// Best ANLS over several references.
double anls(std::string_view prediction, const std::vector<std::string>& references);

struct EvalRecord {
  std::string id;
  std::string prediction;
  std::vector<std::string> answers;
  double score_vqa = 0.0;
  double score_anls = 0.0;
};

/// Fills both scores of `record` from its prediction and answers.
void score_record(EvalRecord& record);

/// {"records": [...], "mean_vqa": x, "mean_anls": y}
nlohmann::json results_json(const std::vector<EvalRecord>& records);

}  // namespace sat
