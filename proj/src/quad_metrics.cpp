#include "tvmerge/quad_metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "tvmerge/utf8.hpp"

namespace tvmerge {

namespace {

constexpr std::string_view kSep = "[SEP]";
constexpr std::string_view kEnd = "[END]";

std::vector<std::string_view> split(std::string_view text, std::string_view delim) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(delim, start);
    if (pos == std::string_view::npos) {
      parts.push_back(text.substr(start));
      return parts;
    }
    parts.push_back(text.substr(start, pos - start));
    start = pos + delim.size();
  }
}

using Compatible = std::function<bool(const Quadruple&, const Quadruple&)>;

// Kuhn's augmenting-path algorithm; sizes here are a handful of quads.
std::size_t maximum_matching(std::span<const Quadruple> preds, std::span<const Quadruple> golds,
                             const Compatible& ok) {
  std::vector<std::vector<std::size_t>> adj(preds.size());
  for (std::size_t p = 0; p < preds.size(); ++p) {
    for (std::size_t g = 0; g < golds.size(); ++g) {
      if (ok(preds[p], golds[g])) adj[p].push_back(g);
    }
  }
  constexpr std::size_t kFree = static_cast<std::size_t>(-1);
  std::vector<std::size_t> owner(golds.size(), kFree);
  std::vector<char> seen;
  std::function<bool(std::size_t)> augment = [&](std::size_t p) {
    for (const auto g : adj[p]) {
      if (seen[g]) continue;
      seen[g] = 1;
      if (owner[g] == kFree || augment(owner[g])) {
        owner[g] = p;
        return true;
      }
    }
    return false;
  };
  std::size_t matched = 0;
  for (std::size_t p = 0; p < preds.size(); ++p) {
    seen.assign(golds.size(), 0);
    if (augment(p)) ++matched;
  }
  return matched;
}

}  // namespace

std::vector<Quadruple> parse_quadruples(std::string_view raw, std::vector<std::string>* warnings) {
  std::string_view body = trim(raw);
  if (body.size() >= kEnd.size() && body.substr(body.size() - kEnd.size()) == kEnd) {
    body = body.substr(0, body.size() - kEnd.size());
  }

  std::vector<Quadruple> quads;
  for (const auto segment : split(body, kSep)) {
    const auto seg = trim(segment);
    if (seg.empty()) continue;
    const auto fields = split(seg, "|");
    if (fields.size() != 4) {
      if (warnings) {
        warnings->push_back("malformed segment (" + std::to_string(fields.size()) +
                            " fields, expected 4): " + std::string(seg));
      }
      continue;
    }
    quads.push_back(Quadruple{std::string(trim(fields[0])), std::string(trim(fields[1])),
                              std::string(trim(fields[2])), std::string(trim(fields[3]))});
  }
  return quads;
}

std::size_t lcs_length(std::u32string_view a, std::u32string_view b) {
  if (a.size() < b.size()) std::swap(a, b);
  if (b.empty()) return 0;
  // Single rolling row over the shorter string.
  std::vector<std::size_t> row(b.size() + 1, 0);
  for (const char32_t ca : a) {
    std::size_t diag = 0;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = ca == b[j - 1] ? diag + 1 : std::max(up, row[j - 1]);
      diag = up;
    }
  }
  return row[b.size()];
}

std::size_t lcs_length(std::string_view a, std::string_view b) {
  return lcs_length(decode_utf8(a), decode_utf8(b));
}

double similarity(std::string_view pred, std::string_view gold) {
  const auto p = decode_utf8(pred);
  const auto g = decode_utf8(gold);
  const std::size_t total = p.size() + g.size();
  if (total == 0) return 1.0;
  return 2.0 * static_cast<double>(lcs_length(p, g)) / static_cast<double>(total);
}

bool hard_match(const Quadruple& pred, const Quadruple& gold) {
  return trim(pred.target) == trim(gold.target) && trim(pred.argument) == trim(gold.argument) &&
         trim(pred.group) == trim(gold.group) && trim(pred.hateful) == trim(gold.hateful);
}

bool soft_match(const Quadruple& pred, const Quadruple& gold) {
  return trim(pred.group) == trim(gold.group) && trim(pred.hateful) == trim(gold.hateful) &&
         similarity(trim(pred.target), trim(gold.target)) > 0.5 &&
         similarity(trim(pred.argument), trim(gold.argument)) > 0.5;
}

MatchCounts GreedyMatcher::match(std::span<const Quadruple> preds,
                                 std::span<const Quadruple> golds) const {
  std::vector<char> gold_taken(golds.size(), 0);
  std::vector<char> pred_paired(preds.size(), 0);
  MatchCounts counts;
  for (std::size_t p = 0; p < preds.size(); ++p) {
    for (std::size_t g = 0; g < golds.size(); ++g) {
      if (!gold_taken[g] && hard_match(preds[p], golds[g])) {
        gold_taken[g] = pred_paired[p] = 1;
        ++counts.hard;
        break;
      }
    }
  }
  counts.soft = counts.hard;
  for (std::size_t p = 0; p < preds.size(); ++p) {
    if (pred_paired[p]) continue;
    for (std::size_t g = 0; g < golds.size(); ++g) {
      if (!gold_taken[g] && soft_match(preds[p], golds[g])) {
        gold_taken[g] = 1;
        ++counts.soft;
        break;
      }
    }
  }
  return counts;
}

MatchCounts MaximumMatcher::match(std::span<const Quadruple> preds,
                                  std::span<const Quadruple> golds) const {
  return MatchCounts{maximum_matching(preds, golds, hard_match),
                     maximum_matching(preds, golds, soft_match)};
}

Prf prf_from_counts(std::size_t correct, std::size_t predicted, std::size_t gold) {
  Prf r;
  r.precision = predicted == 0 ? 0.0 : static_cast<double>(correct) / predicted;
  r.recall = gold == 0 ? 0.0 : static_cast<double>(correct) / gold;
  const double denom = r.precision + r.recall;
  r.f1 = denom == 0.0 ? 0.0 : 2.0 * r.precision * r.recall / denom;
  return r;
}

ScoreReport score(std::span<const SampleExtraction> preds, std::span<const SampleExtraction> golds,
                  const QuadMatcher& matcher) {
  std::map<std::string_view, const SampleExtraction*> pred_by_id;
  for (const auto& s : preds) {
    if (!pred_by_id.emplace(s.sample_id, &s).second) {
      throw std::invalid_argument("duplicate sample id in predictions: " + s.sample_id);
    }
  }
  std::unordered_set<std::string_view> gold_ids;
  for (const auto& s : golds) {
    if (!gold_ids.insert(s.sample_id).second) {
      throw std::invalid_argument("duplicate sample id in gold: " + s.sample_id);
    }
  }

  ScoreReport report;
  auto& c = report.counts;
  for (const auto& gold : golds) {
    c.gold_total += gold.quads.size();
    const auto it = pred_by_id.find(gold.sample_id);
    if (it == pred_by_id.end()) continue;
    const auto& pred = *it->second;
    c.predicted_total += pred.quads.size();
    const auto m = matcher.match(pred.quads, gold.quads);
    c.hard_correct += m.hard;
    c.soft_correct += m.soft;
  }
  for (const auto& pred : preds) {
    if (!gold_ids.contains(pred.sample_id)) c.predicted_total += pred.quads.size();
  }

  report.hard = prf_from_counts(c.hard_correct, c.predicted_total, c.gold_total);
  report.soft = prf_from_counts(c.soft_correct, c.predicted_total, c.gold_total);
  report.average_score = (report.hard.f1 + report.soft.f1) / 2.0;
  return report;
}

ScoreReport score(std::span<const SampleExtraction> preds,
                  std::span<const SampleExtraction> golds) {
  return score(preds, golds, GreedyMatcher{});
}

std::vector<SampleExtraction> parse_extractions(std::string_view jsonl,
                                                std::vector<std::string>* warnings) {
  std::vector<SampleExtraction> samples;
  std::size_t line_no = 0;
  for (const auto line : split(jsonl, "\n")) {
    ++line_no;
    if (trim(line).empty()) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError("line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!obj.is_object()) {
      throw FormatError("line " + std::to_string(line_no) + ": expected a JSON object");
    }
    const auto id = obj.find("id");
    const auto output = obj.find("output");
    if (id == obj.end() || !id->is_string()) {
      throw FormatError("line " + std::to_string(line_no) + ": missing string field \"id\"");
    }
    if (output == obj.end() || !output->is_string()) {
      throw FormatError("line " + std::to_string(line_no) + ": missing string field \"output\"");
    }
    SampleExtraction s;
    s.sample_id = id->get<std::string>();
    std::vector<std::string> local;
    s.quads = parse_quadruples(output->get_ref<const std::string&>(), &local);
    if (warnings) {
      for (auto& w : local) warnings->push_back("sample " + s.sample_id + ": " + w);
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

std::vector<SampleExtraction> read_extractions(const std::filesystem::path& path,
                                               std::vector<std::string>* warnings) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_extractions(buf.str(), warnings);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::string score_report_json(const ScoreReport& r) {
  auto prf = [](const Prf& p) {
    return nlohmann::ordered_json{{"precision", p.precision}, {"recall", p.recall}, {"f1", p.f1}};
  };
  nlohmann::ordered_json out;
  out["hard"] = prf(r.hard);
  out["soft"] = prf(r.soft);
  out["average_score"] = r.average_score;
  out["counts"] = {{"predicted_total", r.counts.predicted_total},
                   {"gold_total", r.counts.gold_total},
                   {"hard_correct", r.counts.hard_correct},
                   {"soft_correct", r.counts.soft_correct}};
  return out.dump(2) + "\n";
}

std::string score_summary(const ScoreReport& r) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "hard=%.4f soft=%.4f avg=%.4f", r.hard.f1, r.soft.f1,
                r.average_score);
  return buf;
}

}  // namespace tvmerge
