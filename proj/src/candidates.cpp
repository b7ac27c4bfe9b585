#include "scope/candidates.hpp"

#include <algorithm>
#include <cctype>
#include <future>
#include <numeric>

#include "scope/errors.hpp"

namespace scope {

std::string normalize_prompt(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (char ch : text) {
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

ExpansionResult expand_query(const std::string& query, LlmBackend& llm, int max_alternatives) {
  const std::string original = normalize_prompt(query);
  if (original.empty()) throw EmptyQueryError("query is empty");

  ExpansionResult result;
  result.prompts.push_back(original);

  LlmRequest req;
  req.task = "expand";
  req.query = original;
  req.expansion_count = max_alternatives;
  std::vector<std::string> alternatives;
  try {
    const auto j = nlohmann::json::parse(llm.complete(req));
    alternatives = j.at("alternatives").get<std::vector<std::string>>();
  } catch (const std::exception&) {
    result.degraded = true;
    return result;
  }

  for (const auto& alt : alternatives) {
    if (static_cast<int>(result.prompts.size()) > max_alternatives) break;
    std::string p = normalize_prompt(alt);
    if (p.empty()) continue;
    if (std::find(result.prompts.begin(), result.prompts.end(), p) != result.prompts.end()) continue;
    result.prompts.push_back(std::move(p));
  }
  return result;
}

CollectResult collect_candidates(std::span<const std::string> prompts, int frame_index,
                                 TextSegmenter& segmenter) {
  if (prompts.empty()) throw EmptyInputError("no prompts to collect candidates for");

  std::vector<std::future<std::vector<ScoredCandidate>>> pending;
  pending.reserve(prompts.size());
  for (const auto& p : prompts) {
    pending.push_back(std::async(std::launch::async, [&segmenter, p, frame_index] {
      return segmenter.segment(p, frame_index);
    }));
  }

  CollectResult out;
  for (std::size_t i = 0; i < pending.size(); ++i) {
    try {
      for (auto& c : pending[i].get()) {
        c.source_prompt = prompts[i];
        out.candidates.push_back(std::move(c));
      }
    } catch (const std::exception& e) {
      out.failures.push_back(prompts[i] + ": " + e.what());
    }
  }
  if (out.failures.size() == prompts.size()) {
    throw BackendUnavailableError("all " + std::to_string(prompts.size()) +
                                  " prompts failed; first: " + out.failures.front());
  }
  return out;
}

double adjusted_score(const ScoredCandidate& c, std::size_t frame_area, const RankConfig& config) {
  if (frame_area == 0) return c.score;
  const double coverage = static_cast<double>(c.mask.area()) / static_cast<double>(frame_area);
  return coverage > config.background_area_fraction ? c.score * config.background_penalty : c.score;
}

CandidatePageState::CandidatePageState(std::vector<ScoredCandidate> accepted, int page_size, int page_index)
    : accepted_(std::move(accepted)), page_size_(page_size), page_index_(page_index) {
  if (page_size < 1) throw ConfigError("page_size must be at least 1");
}

bool CandidatePageState::exhausted() const {
  return static_cast<std::size_t>(page_index_) * static_cast<std::size_t>(page_size_) >= accepted_.size();
}

std::span<const ScoredCandidate> CandidatePageState::page() const {
  if (exhausted()) return {};
  const std::size_t begin = static_cast<std::size_t>(page_index_) * static_cast<std::size_t>(page_size_);
  const std::size_t n = std::min(static_cast<std::size_t>(page_size_), accepted_.size() - begin);
  return std::span<const ScoredCandidate>(accepted_).subspan(begin, n);
}

int CandidatePageState::page_count() const {
  return static_cast<int>((accepted_.size() + static_cast<std::size_t>(page_size_) - 1) /
                          static_cast<std::size_t>(page_size_));
}

CandidatePageState rank_and_dedup(std::vector<ScoredCandidate> candidates, const RankConfig& config,
                                  std::size_t frame_area) {
  if (!(config.overlap_threshold > 0.0 && config.overlap_threshold < 1.0)) {
    throw ConfigError("overlap_threshold must lie in (0,1)");
  }
  std::vector<double> score(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) score[i] = adjusted_score(candidates[i], frame_area, config);

  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (score[a] != score[b]) return score[a] > score[b];
    return candidates[a].mask.area() > candidates[b].mask.area();
  });

  std::vector<ScoredCandidate> accepted;
  for (std::size_t idx : order) {
    const auto& cand = candidates[idx];
    const bool overlaps = std::any_of(accepted.begin(), accepted.end(), [&](const ScoredCandidate& kept) {
      return iou(cand.mask, kept.mask) > config.overlap_threshold;
    });
    if (!overlaps) accepted.push_back(std::move(candidates[idx]));
  }
  return CandidatePageState(std::move(accepted), config.page_size, 0);
}

CandidatePageState next_page(const CandidatePageState& state) {
  if (state.exhausted()) return state;
  return CandidatePageState(state.all_candidates(), state.page_size(), state.page_index() + 1);
}

}  // namespace scope
