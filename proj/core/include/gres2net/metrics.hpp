#ifndef GRES2NET_METRICS_HPP
#define GRES2NET_METRICS_HPP

#include <map>
#include <string>
#include <vector>

#include "gres2net/common.hpp"

namespace gres2net {

enum class Label { spoof = 0, bonafide = 1 };

inline const char* label_name(Label l) {
  return l == Label::bonafide ? "bonafide" : "spoof";
}

struct ScoreRecord {
  std::string trial_id;
  Label label = Label::spoof;
  double score = 0.0;  // higher = more bonafide-like
};

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
};

// Equal error rate: the crossing of the false-acceptance rate
// (spoof scored >= theta) and false-rejection rate (bonafide scored < theta)
// step functions, swept over all distinct-score midpoints and linearly
// interpolated at the sign change. Ties at a threshold count as accepts.
EerResult eer(const std::vector<ScoreRecord>& records);

// Normalized minimum tandem detection cost. The tandem constants are derived
// from the priors, costs and fixed ASV operating-point error rates:
//   C1 = p_target (c_miss_cm - c_miss_asv p_miss_asv)
//        - p_nontarget c_fa_asv p_fa_asv
//   C2 = c_fa_cm p_spoof (1 - p_miss_spoof_asv)
//   t-DCF(theta) = C1 P_miss_cm(theta) + C2 P_fa_cm(theta)
// normalized by the default-decision cost min(C1, C2).
struct TdcfParams {
  double p_target = 0.9405;
  double p_nontarget = 0.0095;
  double p_spoof = 0.05;
  double c_miss_asv = 1.0;
  double c_fa_asv = 10.0;
  double c_miss_cm = 1.0;
  double c_fa_cm = 10.0;
  double asv_p_miss = 0.03;
  double asv_p_fa = 0.01;
  double asv_p_miss_spoof = 0.45;

  void validate() const;
  static TdcfParams load(const std::string& path);
};

double min_tdcf(const std::vector<ScoreRecord>& cm, const TdcfParams& params);

// Detection accuracy per attack at a fixed operating point: the fraction of
// each attack's spoof trials scored below the threshold. Bonafide accuracy
// (scored >= threshold) is reported separately. Attacks present in the
// grouping but absent from the records are omitted with a warning.
struct AttackAccuracyReport {
  std::vector<std::pair<std::string, double>> per_attack;  // sorted by attack
  double bonafide_accuracy = 0.0;
  std::vector<std::string> warnings;
};

AttackAccuracyReport accuracy_at_eer(
    const std::vector<ScoreRecord>& records, double threshold,
    const std::map<std::string, std::string>& trial_to_attack);

// Score file: one "trial_id label score" triple per line; '#' comments.
std::vector<ScoreRecord> read_scores(const std::string& path);
void write_scores(const std::string& path, const std::vector<ScoreRecord>& records);

}  // namespace gres2net

#endif  // GRES2NET_METRICS_HPP
