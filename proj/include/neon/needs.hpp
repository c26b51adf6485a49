#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace neon {

inline constexpr std::size_t kNeedCount = 10;
inline constexpr std::size_t kWayCount = 2;

/// The ten living-need categories. Integer codes are stable and used as
/// column indices everywhere.
enum class NeedCategory : int {
  kOrderingFoodDelivery = 0,
  kEatingInRestaurant = 1,
  kBookingHotel = 2,
  kBuyingMedicine = 3,
  kSpecialtyShoppingOnline = 4,
  kHairDressing = 5,
  kGroceryShoppingOnline = 6,
  kBeauty = 7,
  kTourism = 8,
  kEntertainment = 9,
};

enum class NeedsMeetingWay : int { kViaDelivery = 0, kInStore = 1 };

/// Raised for malformed or inconsistent input data (CLI exit code 2).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int code(NeedCategory n) { return static_cast<int>(n); }
inline constexpr int code(NeedsMeetingWay w) { return static_cast<int>(w); }

NeedCategory need_from_code(int code);
NeedsMeetingWay way_from_code(int code);

/// Total map from need to the way it is usually met.
NeedsMeetingWay need_to_way(NeedCategory need);
inline NeedsMeetingWay need_to_way(int need_code) {
  return need_to_way(need_from_code(need_code));
}

const std::array<NeedCategory, kNeedCount>& all_needs();

std::string_view to_string(NeedCategory need);
std::string_view to_string(NeedsMeetingWay way);
std::optional<NeedCategory> parse_need(std::string_view name);
std::optional<NeedsMeetingWay> parse_way(std::string_view name);

}  // namespace neon
