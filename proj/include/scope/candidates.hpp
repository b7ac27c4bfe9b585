#pragma once

// Candidate-mask pipeline: query expansion, multi-prompt collection, ranking
// with greedy overlap suppression, and paging into display iterations.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "scope/backends.hpp"

namespace scope {

struct ExpansionResult {
  std::vector<std::string> prompts;  // original query first
  bool degraded = false;             // the LLM failed; only the original is used
};

// Lowercases, trims and collapses internal whitespace.
std::string normalize_prompt(std::string_view text);

// Throws EmptyQueryError for a blank query.
ExpansionResult expand_query(const std::string& query, LlmBackend& llm, int max_alternatives = 3);

struct CollectResult {
  std::vector<ScoredCandidate> candidates;  // prompt order, then backend order
  std::vector<std::string> failures;        // one entry per failed prompt
};

// Runs the segmenter once per prompt (concurrently) and merges in prompt order.
// Throws BackendUnavailableError when every prompt fails.
CollectResult collect_candidates(std::span<const std::string> prompts, int frame_index,
                                 TextSegmenter& segmenter);

struct RankConfig {
  double overlap_threshold = 0.10;
  int page_size = 6;
  double background_area_fraction = 0.80;
  double background_penalty = 0.5;
};

// Backend confidence, multiplied by the penalty when the mask covers more than
// background_area_fraction of the frame.
double adjusted_score(const ScoredCandidate& c, std::size_t frame_area, const RankConfig& config);

class CandidatePageState {
 public:
  CandidatePageState() = default;
  CandidatePageState(std::vector<ScoredCandidate> accepted, int page_size, int page_index = 0);

  const std::vector<ScoredCandidate>& all_candidates() const { return accepted_; }
  int page_size() const { return page_size_; }
  int page_index() const { return page_index_; }
  // Past the last page: the operator must refine the query.
  bool exhausted() const;
  std::span<const ScoredCandidate> page() const;
  int page_count() const;

 private:
  std::vector<ScoredCandidate> accepted_;
  int page_size_ = 6;
  int page_index_ = 0;
};

// Greedy suppression: visit candidates by adjusted score (ties: larger area,
// then input order) and keep one iff its IoU with every kept candidate is at
// most the overlap threshold.
CandidatePageState rank_and_dedup(std::vector<ScoredCandidate> candidates, const RankConfig& config,
                                  std::size_t frame_area);

CandidatePageState next_page(const CandidatePageState& state);

}  // namespace scope
