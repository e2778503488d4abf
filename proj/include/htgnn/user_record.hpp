#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

namespace htgnn {

// Task order used everywhere: LT then LTV per horizon, horizons ascending.
enum TaskId : int {
  kLt30 = 0,
  kLtv30 = 1,
  kLt180 = 2,
  kLtv180 = 3,
  kLt365 = 4,
  kLtv365 = 5,
};
constexpr int kNumTasks = 6;
constexpr std::array<int, kNumTasks> kTaskHorizon = {30, 30, 180, 180, 365, 365};
constexpr std::array<bool, kNumTasks> kTaskIsLt = {true, false, true, false, true, false};
inline const std::array<std::string, kNumTasks>& task_names() {
  static const std::array<std::string, kNumTasks> names = {"lt30",  "ltv30",  "lt180",
                                                           "ltv180", "lt365", "ltv365"};
  return names;
}

struct SequenceData {
  std::vector<double> values;
  int observed_length() const { return static_cast<int>(values.size()); }
};

struct UserRecord {
  long user_id = 0;
  std::map<std::string, long> cat;
  std::map<std::string, double> stat;
  std::map<std::string, SequenceData> seq;
  std::array<double, kNumTasks> labels{};
  std::array<bool, kNumTasks> observed{};
  int obs_days = 0;

  bool has_label(int task) const { return observed[task]; }
};

}  // namespace htgnn
