#pragma once

// Hard/soft quadruple-extraction scoring.
//
// A model output is a string of "Target | Argument | Targeted Group | Hateful"
// segments joined by "[SEP]" and optionally terminated by "[END]". A predicted
// quadruple hard-matches a gold one when all four fields are equal; it
// soft-matches when group and hateful are equal and both the target and the
// argument spans have LCS similarity strictly above 0.5. Precision, recall
// and F1 are micro-averaged over the corpus.

#include <cstddef>
#include <filesystem>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tvmerge {

struct Quadruple {
  std::string target;
  std::string argument;
  std::string group;
  std::string hateful;

  friend bool operator==(const Quadruple&, const Quadruple&) = default;
};

struct SampleExtraction {
  std::string sample_id;
  std::vector<Quadruple> quads;
};

// Splits on "[SEP]" after stripping one trailing "[END]". Segments that do
// not have exactly four '|'-separated fields are skipped and described in
// `warnings` (when given); blank segments are skipped silently.
std::vector<Quadruple> parse_quadruples(std::string_view raw,
                                        std::vector<std::string>* warnings = nullptr);

// Length of the longest common subsequence, over Unicode code points.
std::size_t lcs_length(std::u32string_view a, std::u32string_view b);
std::size_t lcs_length(std::string_view a, std::string_view b);

// 2 * LCS / (len(pred) + len(gold)) in code points; 1.0 when both are empty.
double similarity(std::string_view pred, std::string_view gold);

bool hard_match(const Quadruple& pred, const Quadruple& gold);
bool soft_match(const Quadruple& pred, const Quadruple& gold);

struct MatchCounts {
  std::size_t hard = 0;
  std::size_t soft = 0;
};

// Pairs predicted with gold quadruples of one sample, one-to-one.
class QuadMatcher {
 public:
  virtual ~QuadMatcher() = default;
  virtual MatchCounts match(std::span<const Quadruple> preds,
                            std::span<const Quadruple> golds) const = 0;
};

// Predictions, in order, claim the first unclaimed gold they hard-match.
// The soft pass starts from those hard pairs, then each still-unpaired
// prediction claims the first unclaimed gold it soft-matches. Seeding the
// soft pass with the hard pairs keeps soft >= hard on every sample.
class GreedyMatcher final : public QuadMatcher {
 public:
  MatchCounts match(std::span<const Quadruple> preds,
                    std::span<const Quadruple> golds) const override;
};

// Maximum-cardinality bipartite matching, computed separately for hard and
// soft compatibility.
class MaximumMatcher final : public QuadMatcher {
 public:
  MatchCounts match(std::span<const Quadruple> preds,
                    std::span<const Quadruple> golds) const override;
};

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// F1 = 2PR / (P + R), and 0 when P + R == 0. Empty denominators give 0.
Prf prf_from_counts(std::size_t correct, std::size_t predicted, std::size_t gold);

struct ScoreCounts {
  std::size_t predicted_total = 0;
  std::size_t gold_total = 0;
  std::size_t hard_correct = 0;
  std::size_t soft_correct = 0;
};

struct ScoreReport {
  Prf hard;
  Prf soft;
  double average_score = 0.0;
  ScoreCounts counts;
};

// Scores predictions against gold, keyed by sample id. A gold sample with no
// prediction counts as an empty prediction; predictions for ids missing from
// gold count as false positives. Throws std::invalid_argument on duplicate
// ids within either list.
ScoreReport score(std::span<const SampleExtraction> preds, std::span<const SampleExtraction> golds,
                  const QuadMatcher& matcher);
ScoreReport score(std::span<const SampleExtraction> preds, std::span<const SampleExtraction> golds);

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Reads JSON Lines of {"id": string, "output": string}. Blank lines are
// skipped. Throws FormatError naming the line on malformed input.
std::vector<SampleExtraction> read_extractions(const std::filesystem::path& path,
                                               std::vector<std::string>* warnings = nullptr);
std::vector<SampleExtraction> parse_extractions(std::string_view jsonl,
                                                std::vector<std::string>* warnings = nullptr);

std::string score_report_json(const ScoreReport& report);

// "hard=0.1234 soft=0.5678 avg=0.3456"
std::string score_summary(const ScoreReport& report);

}  // namespace tvmerge
