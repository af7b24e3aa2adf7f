#pragma once

#include <memory>
#include <stdexcept>
#include <string>

#include "restorl/grid.hpp"
#include "restorl/reward.hpp"

namespace restorl {

// Failures of the scoring service (timeouts, malformed or out-of-range
// responses) surface as this error and abort the caller; they are never
// converted into silent zero rewards.
class RewardServiceError : public std::runtime_error {
 public:
  explicit RewardServiceError(const std::string& msg) : std::runtime_error(msg) {}
};

// Wire format, both transports: one image per request as a single-line JSON
// object {"shape":[c,h,w],"dtype":"f64le","data":"<base64>"} where data is
// the little-endian float64 payload; the response is one decimal score in
// [1,5].
//  - subprocess mode: the command is started once via /bin/sh; requests and
//    responses are newline-delimited on its standard streams.
//  - http mode: each request is POSTed to the configured URL; the response
//    body carries the score.
struct ExternalScorerConfig {
  std::string mode = "subprocess";  // "subprocess" | "http"
  std::string command;              // subprocess mode
  std::string url;                  // http mode, e.g. http://127.0.0.1:8700/score
  int timeout_ms = 5000;
};

class ExternalScorer {
 public:
  explicit ExternalScorer(const ExternalScorerConfig& config);
  ~ExternalScorer();
  ExternalScorer(const ExternalScorer&) = delete;
  ExternalScorer& operator=(const ExternalScorer&) = delete;

  double score(const Grid& image);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

class ExternalRewardBackend final : public RewardBackend {
 public:
  explicit ExternalRewardBackend(const ExternalScorerConfig& config) : scorer_(config) {}
  double score(const Grid& candidate, const RestorationPair&) override {
    return scorer_.score(candidate);
  }
  std::string name() const override { return "external"; }

 private:
  ExternalScorer scorer_;
};

}  // namespace restorl
