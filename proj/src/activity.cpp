#include "koopgait/activity.hpp"

#include <array>
#include <string>

#include "koopgait/error.hpp"

namespace koopgait {

namespace {
constexpr std::array<std::string_view, kNumActivities> kActivityNames{"walking", "standing", "sitting",
                                                                      "standing_up", "sitting_down"};
}

std::string_view activity_name(Activity a) { return kActivityNames.at(static_cast<int>(a)); }

Activity activity_from_index(int index) {
  if (index < 0 || index >= kNumActivities) {
    throw ConfigError("activity label " + std::to_string(index) + " out of range [0, 4]");
  }
  return static_cast<Activity>(index);
}

Activity activity_from_name(std::string_view name) {
  for (int i = 0; i < kNumActivities; ++i) {
    if (kActivityNames[i] == name) return static_cast<Activity>(i);
  }
  throw ConfigError("unknown activity '" + std::string(name) + "'");
}

}  // namespace koopgait
