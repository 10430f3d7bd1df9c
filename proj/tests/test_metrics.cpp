#include <algorithm>
#include <string>

#include "doctest.h"
#include "oracles.hpp"
#include "sat/metrics.hpp"

using namespace sat;

using oracle::all_strings;

TEST_CASE("edit distance agrees with the recursive definition") {
  const auto strings = all_strings(5);
  for (const auto& a : strings) {
    for (const auto& b : strings) REQUIRE(edit_distance(a, b) == oracle::edit_distance(a, b));
  }
  CHECK(edit_distance("kitten", "sitting") == 3);
}

TEST_CASE("edit distance is a metric on short strings") {
  const auto s = all_strings(3);
  for (const auto& a : s) {
    for (const auto& b : s) {
      CHECK(edit_distance(a, b) == edit_distance(b, a));
      CHECK((edit_distance(a, b) == 0) == (a == b));
      for (std::size_t k = 0; k < s.size(); k += 5) {
        CHECK(edit_distance(a, b) <= edit_distance(a, s[k]) + edit_distance(s[k], b));
      }
    }
  }
}

TEST_CASE("anls worked values") {
  CHECK(anls("word", "ward") == doctest::Approx(0.75));
  CHECK(anls("WORD", "word") == 1.0);
  CHECK(anls(" word ", "word") == 1.0);
  // Three edits over five letters: similarity 0.4 truncates to 0.
  CHECK(anls("abcde", "abxyz") == 0.0);
  CHECK(anls("ab", "ac") == doctest::Approx(0.5));
  CHECK(anls("", "") == 1.0);
  CHECK(anls("abc", "") == 0.0);
  CHECK(anls("ward", std::vector<std::string>{"xyz", "word"}) == doctest::Approx(0.75));
}

TEST_CASE("anls stays in [0, 1] and is 1 only on a match") {
  const auto s = all_strings(3);
  for (const auto& a : s) {
    for (const auto& b : s) {
      const double v = anls(a, b);
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      CHECK((v == 1.0) == (a == b));
      CHECK((v == 0.0 || v >= 0.5));
    }
  }
}

TEST_CASE("vqa accuracy saturates at three matching references") {
  auto refs = [](int matching) {
    std::vector<std::string> r(10, "other");
    for (int i = 0; i < matching; ++i) r[i] = "Stop";
    return r;
  };
  CHECK(vqa_accuracy("stop", refs(0)) == 0.0);
  CHECK(vqa_accuracy("stop", refs(1)) == doctest::Approx(1.0 / 3.0));
  CHECK(vqa_accuracy("stop", refs(2)) == doctest::Approx(2.0 / 3.0));
  for (int m = 3; m <= 10; ++m) CHECK(vqa_accuracy("stop", refs(m)) == 1.0);
  CHECK(vqa_accuracy("  STOP  ", refs(3)) == 1.0);
}

TEST_CASE("normalization lowercases, trims and collapses whitespace") {
  CHECK(normalize_answer("  Hot \t  Dog ") == "hot dog");
  CHECK(normalize_answer("") == "");
}

TEST_CASE("results json averages the per-record scores") {
  std::vector<EvalRecord> records(2);
  records[0] = {"a", "stop", std::vector<std::string>(10, "stop")};
  records[1] = {"b", "ward", std::vector<std::string>(10, "word")};
  for (auto& r : records) score_record(r);
  const auto j = results_json(records);
  CHECK(j["mean_vqa"].get<double>() == doctest::Approx(0.5));
  CHECK(j["mean_anls"].get<double>() == doctest::Approx(0.875));
  CHECK(j["records"].size() == 2);
}
