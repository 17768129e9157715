#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "thorn/heads.hpp"
#include "thorn/io.hpp"

namespace thorn {

/// Accuracies are percentages in [0, 100].
struct MetricsReport {
  int clips = 0;
  double verb_top1 = 0, verb_top5 = 0;
  double noun_top1 = 0, noun_top5 = 0;
  double action_top1 = 0, action_top5 = 0;
  LossBreakdown loss;  // mean per clip

  bool has_fusion = false;
  double fused_noun_top1 = 0, fused_noun_top5 = 0;
  double fused_action_top1 = 0, fused_action_top5 = 0;
  double detector_noun_top1 = 0;

  std::vector<double> per_verb_top1;  // NaN for classes absent from the split
  std::vector<double> per_noun_top1;
};

/// Running tally turned into a MetricsReport.
class MetricsAccumulator {
 public:
  MetricsAccumulator(int num_verbs, int num_nouns)
      : verb_hits_(num_verbs), verb_count_(num_verbs), noun_hits_(num_nouns), noun_count_(num_nouns) {}

  void add(const ActionPrediction& p, int verb_gt, int noun_gt, const LossBreakdown& loss) {
    ++n_;
    verb1_ += p.verb_correct(verb_gt, 1);
    verb5_ += p.verb_correct(verb_gt, 5);
    noun1_ += p.noun_correct(noun_gt, 1);
    noun5_ += p.noun_correct(noun_gt, 5);
    action1_ += p.action_correct(verb_gt, noun_gt, 1);
    action5_ += p.action_correct(verb_gt, noun_gt, 5);
    loss_ += loss;
    ++verb_count_.at(verb_gt);
    verb_hits_.at(verb_gt) += p.verb_correct(verb_gt, 1);
    ++noun_count_.at(noun_gt);
    noun_hits_.at(noun_gt) += p.noun_correct(noun_gt, 1);
  }

  void add_fused(const ActionPrediction& fused, int detector_top1, int verb_gt, int noun_gt) {
    ++nf_;
    fnoun1_ += fused.noun_correct(noun_gt, 1);
    fnoun5_ += fused.noun_correct(noun_gt, 5);
    faction1_ += fused.action_correct(verb_gt, noun_gt, 1);
    faction5_ += fused.action_correct(verb_gt, noun_gt, 5);
    det1_ += detector_top1 == noun_gt;
  }

  MetricsReport report() const {
    MetricsReport r;
    r.clips = n_;
    auto pct = [](long hits, long n) { return n > 0 ? 100.0 * static_cast<double>(hits) / static_cast<double>(n) : 0.0; };
    r.verb_top1 = pct(verb1_, n_);
    r.verb_top5 = pct(verb5_, n_);
    r.noun_top1 = pct(noun1_, n_);
    r.noun_top5 = pct(noun5_, n_);
    r.action_top1 = pct(action1_, n_);
    r.action_top5 = pct(action5_, n_);
    if (n_ > 0) {
      const double inv = 1.0 / n_;
      r.loss = {loss_.verbs * inv, loss_.nouns * inv, loss_.objects * inv, loss_.total * inv};
    }
    r.has_fusion = nf_ > 0 && nf_ == n_;
    if (r.has_fusion) {
      r.fused_noun_top1 = pct(fnoun1_, nf_);
      r.fused_noun_top5 = pct(fnoun5_, nf_);
      r.fused_action_top1 = pct(faction1_, nf_);
      r.fused_action_top5 = pct(faction5_, nf_);
      r.detector_noun_top1 = pct(det1_, nf_);
    }
    for (std::size_t i = 0; i < verb_count_.size(); ++i)
      r.per_verb_top1.push_back(verb_count_[i] ? pct(verb_hits_[i], verb_count_[i]) : std::nan(""));
    for (std::size_t i = 0; i < noun_count_.size(); ++i)
      r.per_noun_top1.push_back(noun_count_[i] ? pct(noun_hits_[i], noun_count_[i]) : std::nan(""));
    return r;
  }

 private:
  long n_ = 0, verb1_ = 0, verb5_ = 0, noun1_ = 0, noun5_ = 0, action1_ = 0, action5_ = 0;
  long nf_ = 0, fnoun1_ = 0, fnoun5_ = 0, faction1_ = 0, faction5_ = 0, det1_ = 0;
  LossBreakdown loss_;
  std::vector<long> verb_hits_, verb_count_, noun_hits_, noun_count_;
};

inline std::vector<std::pair<std::string, double>> metric_fields(const MetricsReport& r) {
  std::vector<std::pair<std::string, double>> f{
      {"clips", r.clips},           {"loss", r.loss.total},         {"verb_loss", r.loss.verbs},
      {"noun_loss", r.loss.nouns},  {"object_loss", r.loss.objects}, {"verb_top1", r.verb_top1},
      {"verb_top5", r.verb_top5},   {"noun_top1", r.noun_top1},     {"noun_top5", r.noun_top5},
      {"action_top1", r.action_top1}, {"action_top5", r.action_top5}};
  if (r.has_fusion) {
    f.emplace_back("fused_noun_top1", r.fused_noun_top1);
    f.emplace_back("fused_noun_top5", r.fused_noun_top5);
    f.emplace_back("fused_action_top1", r.fused_action_top1);
    f.emplace_back("fused_action_top5", r.fused_action_top5);
    f.emplace_back("detector_noun_top1", r.detector_noun_top1);
  }
  return f;
}

inline std::string metrics_csv(const MetricsReport& r) {
  std::string s = "metric,value\n";
  for (const auto& [k, v] : metric_fields(r)) s += k + "," + io::format_real(v) + "\n";
  return s;
}

/// Per-class top-1 table; `baseline` adds a delta column when given.
inline std::string per_class_csv(const MetricsReport& r, const std::vector<std::string>& noun_names,
                                 const std::vector<std::string>& verb_names, const MetricsReport* baseline = nullptr) {
  std::string s = baseline ? "kind,class,name,top1,baseline_top1,delta\n" : "kind,class,name,top1\n";
  auto rows = [&](const char* kind, const std::vector<double>& acc, const std::vector<double>* base,
                  const std::vector<std::string>& names) {
    for (std::size_t i = 0; i < acc.size(); ++i) {
      const std::string name = i < names.size() ? names[i] : std::to_string(i);
      s += std::string(kind) + "," + std::to_string(i) + "," + name + "," + io::format_real(acc[i]);
      if (base) {
        const double b = i < base->size() ? (*base)[i] : std::nan("");
        s += "," + io::format_real(b) + "," + io::format_real(acc[i] - b);
      }
      s += "\n";
    }
  };
  rows("verb", r.per_verb_top1, baseline ? &baseline->per_verb_top1 : nullptr, verb_names);
  rows("noun", r.per_noun_top1, baseline ? &baseline->per_noun_top1 : nullptr, noun_names);
  return s;
}

}  // namespace thorn
