#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace vem::schedule {

/// Token context X(token_start, token_end) used for the hidden state of
/// target_token. Tokens are 1-based and both ends are inclusive; a start of
/// 0 means "from the beginning of the story" and holds no token itself.
struct ContextWindow {
  std::size_t token_start = 0;
  std::size_t token_end = 0;
  std::size_t target_token = 0;

  std::size_t first_token() const { return token_start == 0 ? 1 : token_start; }
  /// Number of tokens the model sees.
  std::size_t length() const { return token_end - first_token() + 1; }
  friend bool operator==(const ContextWindow&, const ContextWindow&) = default;
};

/// Audio segment whose final-frame representation is stamped at t_end.
struct AudioWindow {
  double t_start = 0.0;
  double t_end = 0.0;
  double timestamp() const { return t_end; }
};

/// Contexts grow from the story start until they hold max_len tokens, then
/// restart reset_len tokens back from the last multiple of reset_len.
ContextWindow window_for_token(std::size_t i, std::size_t max_len = 512, std::size_t reset_len = 256);

std::vector<ContextWindow> plan_story_tokens(std::size_t n_tokens, std::size_t max_len = 512,
                                             std::size_t reset_len = 256);

/// Indices into the plan where a new context starts (every other window
/// extends its predecessor by one cached token).
std::vector<std::size_t> growth_run_starts(const std::vector<ContextWindow>& plan);

std::vector<AudioWindow> plan_audio_windows(double duration_seconds, double window_seconds = 16.0,
                                            double stride_seconds = 0.1);

/// CSV documents consumed by feature extractors.
std::string token_plan_csv(const std::vector<ContextWindow>& plan);
std::string audio_plan_csv(const std::vector<AudioWindow>& plan);

}  // namespace vem::schedule
