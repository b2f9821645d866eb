#pragma once

#include <string_view>

namespace koopgait {

/// Activity classes; the integer values are the class indices used by every
/// model and file.
enum class Activity : int { Walking = 0, Standing = 1, Sitting = 2, StandingUp = 3, SittingDown = 4 };

inline constexpr int kNumActivities = 5;

std::string_view activity_name(Activity a);
Activity activity_from_index(int index);
Activity activity_from_name(std::string_view name);

}  // namespace koopgait
