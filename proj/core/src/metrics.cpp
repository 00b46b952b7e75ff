#include "gres2net/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "gres2net/config.hpp"

namespace gres2net {

namespace {

struct SplitScores {
  std::vector<double> bona, spoof;  // sorted ascending
};

SplitScores split_and_sort(const std::vector<ScoreRecord>& records,
                           const char* where) {
  SplitScores s;
  for (const auto& r : records) {
    GRES_CHECK(std::isfinite(r.score), where, ": non-finite score for trial '",
               r.trial_id, "'");
    (r.label == Label::bonafide ? s.bona : s.spoof).push_back(r.score);
  }
  GRES_CHECK(!s.bona.empty() && !s.spoof.empty(), where,
             ": need at least one record of each class (got ", s.bona.size(),
             " bonafide, ", s.spoof.size(), " spoof)");
  std::sort(s.bona.begin(), s.bona.end());
  std::sort(s.spoof.begin(), s.spoof.end());
  return s;
}

// Candidate thresholds: one below all scores, the midpoints of adjacent
// distinct scores, one above all scores.
std::vector<double> candidate_thresholds(const SplitScores& s) {
  std::vector<double> all = s.bona;
  all.insert(all.end(), s.spoof.begin(), s.spoof.end());
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  std::vector<double> cand;
  cand.reserve(all.size() + 1);
  cand.push_back(all.front() - 1.0);
  for (size_t i = 0; i + 1 < all.size(); ++i)
    cand.push_back((all[i] + all[i + 1]) / 2.0);
  cand.push_back(all.back() + 1.0);
  return cand;
}

// Fraction of spoof scores >= theta (score >= theta accepts as bonafide).
double far_at(const SplitScores& s, double theta) {
  const auto it = std::lower_bound(s.spoof.begin(), s.spoof.end(), theta);
  return static_cast<double>(s.spoof.end() - it) /
         static_cast<double>(s.spoof.size());
}

// Fraction of bonafide scores < theta.
double frr_at(const SplitScores& s, double theta) {
  const auto it = std::lower_bound(s.bona.begin(), s.bona.end(), theta);
  return static_cast<double>(it - s.bona.begin()) /
         static_cast<double>(s.bona.size());
}

}  // namespace

EerResult eer(const std::vector<ScoreRecord>& records) {
  const auto s = split_and_sort(records, "eer");
  const auto cand = candidate_thresholds(s);

  double prev_far = 1.0, prev_frr = 0.0, prev_theta = cand.front();
  for (double theta : cand) {
    const double far = far_at(s, theta);
    const double frr = frr_at(s, theta);
    const double diff = far - frr;
    if (diff <= 0.0) {
      if (diff == 0.0) return {far, theta};
      const double prev_diff = prev_far - prev_frr;
      const double alpha = prev_diff / (prev_diff - diff);
      return {prev_far + alpha * (far - prev_far),
              prev_theta + alpha * (theta - prev_theta)};
    }
    prev_far = far;
    prev_frr = frr;
    prev_theta = theta;
  }
  // Unreachable: at the top threshold FAR = 0 and FRR = 1.
  throw Error("eer: no crossing found");
}

void TdcfParams::validate() const {
  GRES_CHECK_CONFIG(p_target > 0 && p_nontarget > 0 && p_spoof > 0,
                    "t-DCF: priors must be positive");
  GRES_CHECK_CONFIG(std::abs(p_target + p_nontarget + p_spoof - 1.0) <= 1e-9,
                    "t-DCF: priors must sum to 1, got ",
                    p_target + p_nontarget + p_spoof);
  GRES_CHECK_CONFIG(c_miss_asv > 0 && c_fa_asv > 0 && c_miss_cm > 0 && c_fa_cm > 0,
                    "t-DCF: costs must be positive");
  GRES_CHECK_CONFIG(asv_p_miss >= 0 && asv_p_miss <= 1 && asv_p_fa >= 0 &&
                        asv_p_fa <= 1 && asv_p_miss_spoof >= 0 &&
                        asv_p_miss_spoof <= 1,
                    "t-DCF: ASV error rates must lie in [0,1]");
}

TdcfParams TdcfParams::load(const std::string& path) {
  TdcfParams p;
  for (const auto& [key, value] : parse_kv_file(path)) {
    if (key == "p_target") p.p_target = parse_double(value, key);
    else if (key == "p_nontarget") p.p_nontarget = parse_double(value, key);
    else if (key == "p_spoof") p.p_spoof = parse_double(value, key);
    else if (key == "c_miss_asv") p.c_miss_asv = parse_double(value, key);
    else if (key == "c_fa_asv") p.c_fa_asv = parse_double(value, key);
    else if (key == "c_miss_cm") p.c_miss_cm = parse_double(value, key);
    else if (key == "c_fa_cm") p.c_fa_cm = parse_double(value, key);
    else if (key == "asv_p_miss") p.asv_p_miss = parse_double(value, key);
    else if (key == "asv_p_fa") p.asv_p_fa = parse_double(value, key);
    else if (key == "asv_p_miss_spoof") p.asv_p_miss_spoof = parse_double(value, key);
    else throw ConfigError(format_msg("unknown t-DCF parameter '", key, "'"));
  }
  p.validate();
  return p;
}

double min_tdcf(const std::vector<ScoreRecord>& cm, const TdcfParams& params) {
  params.validate();
  const auto s = split_and_sort(cm, "min_tdcf");

  const double c1 =
      params.p_target * (params.c_miss_cm - params.c_miss_asv * params.asv_p_miss) -
      params.p_nontarget * params.c_fa_asv * params.asv_p_fa;
  const double c2 = params.c_fa_cm * params.p_spoof * (1.0 - params.asv_p_miss_spoof);
  const double default_cost = std::min(c1, c2);
  GRES_CHECK(default_cost > 0.0,
             "min_tdcf: degenerate normalization, default cost ", default_cost);

  double best = std::numeric_limits<double>::infinity();
  for (double theta : candidate_thresholds(s)) {
    const double cost = c1 * frr_at(s, theta) + c2 * far_at(s, theta);
    best = std::min(best, cost);
  }
  return best / default_cost;
}

AttackAccuracyReport accuracy_at_eer(
    const std::vector<ScoreRecord>& records, double threshold,
    const std::map<std::string, std::string>& trial_to_attack) {
  AttackAccuracyReport report;
  std::map<std::string, std::pair<int64_t, int64_t>> counts;  // detected, total
  int64_t bona_ok = 0, bona_total = 0;
  for (const auto& r : records) {
    if (r.label == Label::bonafide) {
      ++bona_total;
      if (r.score >= threshold) ++bona_ok;
      continue;
    }
    const auto it = trial_to_attack.find(r.trial_id);
    GRES_CHECK(it != trial_to_attack.end(),
               "accuracy_at_eer: unknown trial id '", r.trial_id, "'");
    auto& [detected, total] = counts[it->second];
    ++total;
    if (r.score < threshold) ++detected;  // correctly rejected
  }
  GRES_CHECK(bona_total > 0, "accuracy_at_eer: no bonafide records");
  report.bonafide_accuracy =
      static_cast<double>(bona_ok) / static_cast<double>(bona_total);
  for (const auto& [attack, c] : counts)
    report.per_attack.emplace_back(
        attack, static_cast<double>(c.first) / static_cast<double>(c.second));

  std::set<std::string> known;
  for (const auto& [trial, attack] : trial_to_attack)
    if (attack != "-") known.insert(attack);
  for (const auto& attack : known)
    if (!counts.count(attack))
      report.warnings.push_back(
          format_msg("attack ", attack, " has no scored trials; omitted"));
  return report;
}

std::vector<ScoreRecord> read_scores(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(format_msg("cannot open score file '", path, "'"));
  std::vector<ScoreRecord> records;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream row(line);
    std::string trial, label, score;
    if (!(row >> trial)) continue;  // blank or comment-only line
    std::string extra;
    if (!(row >> label >> score) || (row >> extra))
      throw ParseError(format_msg(path, ": line ", lineno,
                                  ": expected 'trial_id label score'"));
    ScoreRecord r;
    r.trial_id = trial;
    if (label == "bonafide") r.label = Label::bonafide;
    else if (label == "spoof") r.label = Label::spoof;
    else
      throw ParseError(format_msg(path, ": line ", lineno, ": unknown label '",
                                  label, "'"));
    r.score = parse_double(score, format_msg(path, ": line ", lineno, ": score"));
    GRES_CHECK(std::isfinite(r.score), path, ": line ", lineno,
               ": non-finite score");
    records.push_back(std::move(r));
  }
  return records;
}

void write_scores(const std::string& path, const std::vector<ScoreRecord>& records) {
  std::ofstream out(path);
  if (!out) throw IoError(format_msg("cannot open '", path, "' for writing"));
  char buf[64];
  for (const auto& r : records) {
    // %.17g keeps the double exact through a parse round trip.
    std::snprintf(buf, sizeof(buf), "%.17g", r.score);
    out << r.trial_id << ' ' << label_name(r.label) << ' ' << buf << '\n';
  }
  if (!out) throw IoError(format_msg("short write to '", path, "'"));
}

}  // namespace gres2net
