#include "vem/schedule.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace vem::schedule {

ContextWindow window_for_token(std::size_t i, std::size_t max_len, std::size_t reset_len) {
  if (i < 1) throw std::invalid_argument("token index must be >= 1 (1-based)");
  if (reset_len == 0 || max_len < 2 * reset_len)
    throw std::invalid_argument("max_len must be at least twice reset_len");
  if (i <= max_len) return {0, i, i};
  return {reset_len * (i / reset_len) - reset_len, i, i};
}

std::vector<ContextWindow> plan_story_tokens(std::size_t n_tokens, std::size_t max_len, std::size_t reset_len) {
  if (n_tokens < 1) throw std::invalid_argument("story must contain at least one token");
  std::vector<ContextWindow> plan;
  plan.reserve(n_tokens);
  for (std::size_t i = 1; i <= n_tokens; ++i) plan.push_back(window_for_token(i, max_len, reset_len));
  return plan;
}

std::vector<std::size_t> growth_run_starts(const std::vector<ContextWindow>& plan) {
  std::vector<std::size_t> starts;
  for (std::size_t k = 0; k < plan.size(); ++k)
    if (k == 0 || plan[k].token_start != plan[k - 1].token_start) starts.push_back(k);
  return starts;
}

std::vector<AudioWindow> plan_audio_windows(double duration_seconds, double window_seconds, double stride_seconds) {
  if (!(stride_seconds > 0.0)) throw std::invalid_argument("stride must be positive");
  if (!(window_seconds > 0.0)) throw std::invalid_argument("window must be positive");
  if (!(duration_seconds > 0.0)) throw std::invalid_argument("duration must be positive");
  // Window ends sit on stride multiples; the tolerance keeps 16.0 / 0.1 at 160.
  const auto n = static_cast<std::size_t>(std::floor(duration_seconds / stride_seconds + 1e-9));
  std::vector<AudioWindow> plan;
  plan.reserve(n);
  for (std::size_t k = 1; k <= n; ++k) {
    const double end = static_cast<double>(k) * stride_seconds;
    plan.push_back({std::max(0.0, end - window_seconds), end});
  }
  return plan;
}

std::string token_plan_csv(const std::vector<ContextWindow>& plan) {
  std::ostringstream out;
  out << "target_token,token_start,token_end,first_token,n_context\n";
  for (const auto& w : plan)
    out << w.target_token << ',' << w.token_start << ',' << w.token_end << ',' << w.first_token() << ','
        << w.length() << '\n';
  return out.str();
}

std::string audio_plan_csv(const std::vector<AudioWindow>& plan) {
  std::ostringstream out;
  out << "t_start,t_end\n";
  char buf[64];
  for (const auto& w : plan) {
    std::snprintf(buf, sizeof buf, "%.6f,%.6f\n", w.t_start, w.t_end);
    out << buf;
  }
  return out.str();
}

}  // namespace vem::schedule
