#pragma once

#include <string>
#include <vector>

namespace harlab::features {

/// One labeled, user-attributed segment of multichannel sensor samples.
/// Channels may differ in length between windows.
struct ActivityWindow {
  std::string user_id;
  std::string window_id;
  std::string activity;
  std::vector<std::vector<double>> channels;
  double duration = 0.0;  // seconds

  /// Throws DataError unless there is at least one nonempty channel, every
  /// sample is finite and duration > 0.
  void validate() const;
};

}  // namespace harlab::features
