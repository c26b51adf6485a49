#include "neon/needs.hpp"

namespace neon {
namespace {

constexpr std::array<std::string_view, kNeedCount> kNeedNames = {
    "OrderingFoodDelivery",    "EatingInRestaurant", "BookingHotel",
    "BuyingMedicine",          "SpecialtyShoppingOnline",
    "HairDressing",            "GroceryShoppingOnline",
    "Beauty",                  "Tourism",
    "Entertainment"};

constexpr std::array<std::string_view, kWayCount> kWayNames = {"ViaDelivery",
                                                               "InStore"};

}  // namespace

NeedCategory need_from_code(int c) {
  if (c < 0 || c >= static_cast<int>(kNeedCount))
    throw ValidationError("need code out of range: " + std::to_string(c));
  return static_cast<NeedCategory>(c);
}

NeedsMeetingWay way_from_code(int c) {
  if (c < 0 || c >= static_cast<int>(kWayCount))
    throw ValidationError("way code out of range: " + std::to_string(c));
  return static_cast<NeedsMeetingWay>(c);
}

NeedsMeetingWay need_to_way(NeedCategory need) {
  switch (need) {
    case NeedCategory::kOrderingFoodDelivery:
    case NeedCategory::kBuyingMedicine:
    case NeedCategory::kSpecialtyShoppingOnline:
    case NeedCategory::kGroceryShoppingOnline:
      return NeedsMeetingWay::kViaDelivery;
    case NeedCategory::kEatingInRestaurant:
    case NeedCategory::kBookingHotel:
    case NeedCategory::kHairDressing:
    case NeedCategory::kBeauty:
    case NeedCategory::kTourism:
    case NeedCategory::kEntertainment:
      return NeedsMeetingWay::kInStore;
  }
  throw ValidationError("unknown need category");
}

const std::array<NeedCategory, kNeedCount>& all_needs() {
  static const std::array<NeedCategory, kNeedCount> needs = [] {
    std::array<NeedCategory, kNeedCount> a{};
    for (std::size_t i = 0; i < kNeedCount; ++i) a[i] = static_cast<NeedCategory>(i);
    return a;
  }();
  return needs;
}

std::string_view to_string(NeedCategory need) { return kNeedNames.at(code(need)); }
std::string_view to_string(NeedsMeetingWay way) { return kWayNames.at(code(way)); }

std::optional<NeedCategory> parse_need(std::string_view name) {
  for (std::size_t i = 0; i < kNeedCount; ++i)
    if (kNeedNames[i] == name) return static_cast<NeedCategory>(i);
  return std::nullopt;
}

std::optional<NeedsMeetingWay> parse_way(std::string_view name) {
  for (std::size_t i = 0; i < kWayCount; ++i)
    if (kWayNames[i] == name) return static_cast<NeedsMeetingWay>(i);
  return std::nullopt;
}

}  // namespace neon
