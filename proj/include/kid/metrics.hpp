#pragma once
// Detection metrics: rank-based ROC AUC and frame-to-video score aggregation.

#include "kid/tensor.hpp"

#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace kid {

struct FrameScore {
  std::string sample_id;
  std::optional<std::string> group_id;
  double score = 0;  // probability of fake, in [0,1]
  int label = 0;     // 0 real, 1 fake
};

enum class Aggregation { frame, video };

struct EvalRecord {
  std::vector<FrameScore> frame_scores;
  Aggregation aggregation = Aggregation::frame;
};

/// Normalized Mann-Whitney U: average ranks, ties count one half.
inline double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("auc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos_rank_sum = 0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * double(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) pos_rank_sum += avg_rank;
    i = j;
  }
  for (int l : labels) {
    if (l != 0 && l != 1) throw std::invalid_argument("auc: labels must be 0 or 1");
    pos += l == 1 ? 1 : 0;
  }
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0)
    throw std::invalid_argument("auc: need at least one positive and one negative (got " + std::to_string(pos) +
                                " fake, " + std::to_string(neg) + " real)");
  const double u = pos_rank_sum - double(pos) * double(pos + 1) / 2.0;
  return u / (double(pos) * double(neg));
}

/// Mean of min(k, n) frame scores sampled without replacement. When k >= n the
/// exact group mean is returned.
inline double video_score(const std::vector<double>& frame_scores, int k, Rng& rng) {
  if (frame_scores.empty()) throw std::invalid_argument("video_score: empty group");
  if (k <= 0) throw std::invalid_argument("video_score: k must be positive");
  if (static_cast<std::size_t>(k) >= frame_scores.size())
    return std::accumulate(frame_scores.begin(), frame_scores.end(), 0.0) / double(frame_scores.size());
  std::vector<std::size_t> idx(frame_scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  double sum = 0;
  for (int i = 0; i < k; ++i) sum += frame_scores[idx[i]];
  return sum / k;
}

/// Frame-level AUC, or video-level AUC over (group, label) aggregates.
/// Records without any group id fall back to frame level.
inline double auc(const EvalRecord& rec, int frames_per_video = 32, std::uint64_t seed = 0) {
  std::vector<double> scores;
  std::vector<int> labels;
  const bool grouped = std::any_of(rec.frame_scores.begin(), rec.frame_scores.end(),
                                   [](const FrameScore& f) { return f.group_id.has_value(); });
  if (rec.aggregation == Aggregation::frame || !grouped) {
    for (const auto& f : rec.frame_scores) {
      scores.push_back(f.score);
      labels.push_back(f.label);
    }
    return auc(scores, labels);
  }
  std::map<std::pair<std::string, int>, std::vector<double>> groups;
  for (const auto& f : rec.frame_scores) groups[{f.group_id.value_or(f.sample_id), f.label}].push_back(f.score);
  Rng rng(derive_seed(seed, 0x71de0));
  for (const auto& [key, s] : groups) {
    scores.push_back(video_score(s, frames_per_video, rng));
    labels.push_back(key.second);
  }
  return auc(scores, labels);
}

}  // namespace kid
