#pragma once

// Published benchmark tables used for side-by-side comparison output. Values
// are kept as strings so emitted CSV cells match the source digits exactly.

#include <array>
#include <optional>
#include <string>
#include <string_view>

namespace tsplab::bench {

struct ReferenceRow {
  int demand_vph;
  std::string_view controller;
  std::string_view value_s;
};

// Average travel time, all vehicles (seconds).
inline constexpr std::array<ReferenceRow, 36> kTravelTimeTable{{
    {5000, "cbql-tsp", "280.21"},   {5000, "asc-tsp", "330.47"},
    {5000, "mp-tsp", "320.21"},     {5000, "mb-tsp", "450.41"},
    {6000, "cbql-tsp", "301.72"},   {6000, "asc-tsp", "367.51"},
    {6000, "mp-tsp", "349.31"},     {6000, "mb-tsp", "519.31"},
    {7000, "cbql-tsp", "348.24"},   {7000, "asc-tsp", "465.49"},
    {7000, "mp-tsp", "450.58"},     {7000, "mb-tsp", "630.58"},
    {8000, "cbql-tsp", "408.41"},   {8000, "asc-tsp", "538.55"},
    {8000, "mp-tsp", "529.18"},     {8000, "mb-tsp", "759.18"},
    {9000, "cbql-tsp", "497.76"},   {9000, "asc-tsp", "616.15"},
    {9000, "mp-tsp", "619.82"},     {9000, "mb-tsp", "899.82"},
    {10000, "cbql-tsp", "598.68"},  {10000, "asc-tsp", "693.89"},
    {10000, "mp-tsp", "696.44"},    {10000, "mb-tsp", "1035.44"},
    {11000, "cbql-tsp", "680.84"},  {11000, "asc-tsp", "746.35"},
    {11000, "mp-tsp", "733.21"},    {11000, "mb-tsp", "1123.21"},
    {12000, "cbql-tsp", "739.57"},  {12000, "asc-tsp", "767.17"},
    {12000, "mp-tsp", "775.10"},    {12000, "mb-tsp", "1150.10"},
    {13000, "cbql-tsp", "830.21"},  {13000, "asc-tsp", "901.41"},
    {13000, "mp-tsp", "918.82"},    {13000, "mb-tsp", "1248.75"},
}};

// Bus average travel time (seconds), 30-minute headway.
inline constexpr std::array<ReferenceRow, 48> kBusTravelTimeTable{{
    {6000, "cbql-tsp", "403.12"},    {6000, "mp-tsp", "426.32"},
    {6000, "asc-tsp", "483.26"},     {6000, "mb-tsp", "502.21"},
    {6000, "cbql-notsp", "672.12"},  {6000, "mp-notsp", "804.51"},
    {7000, "cbql-tsp", "422.45"},    {7000, "mp-tsp", "448.44"},
    {7000, "asc-tsp", "494.24"},     {7000, "mb-tsp", "530.34"},
    {7000, "cbql-notsp", "721.33"},  {7000, "mp-notsp", "816.91"},
    {8000, "cbql-tsp", "435.12"},    {8000, "mp-tsp", "459.31"},
    {8000, "asc-tsp", "500.85"},     {8000, "mb-tsp", "541.32"},
    {8000, "cbql-notsp", "732.27"},  {8000, "mp-notsp", "827.38"},
    {9000, "cbql-tsp", "459.76"},    {9000, "mp-tsp", "488.01"},
    {9000, "asc-tsp", "510.26"},     {9000, "mb-tsp", "549.58"},
    {9000, "cbql-notsp", "747.49"},  {9000, "mp-notsp", "849.33"},
    {10000, "cbql-tsp", "476.88"},   {10000, "mp-tsp", "502.27"},
    {10000, "asc-tsp", "533.50"},    {10000, "mb-tsp", "572.42"},
    {10000, "cbql-notsp", "758.09"}, {10000, "mp-notsp", "868.12"},
    {11000, "cbql-tsp", "492.40"},   {11000, "mp-tsp", "521.35"},
    {11000, "asc-tsp", "546.57"},    {11000, "mb-tsp", "589.85"},
    {11000, "cbql-notsp", "763.79"}, {11000, "mp-notsp", "924.82"},
    {12000, "cbql-tsp", "518.96"},   {12000, "mp-tsp", "537.52"},
    {12000, "asc-tsp", "563.37"},    {12000, "mb-tsp", "620.74"},
    {12000, "cbql-notsp", "783.44"}, {12000, "mp-notsp", "977.03"},
    {13000, "cbql-tsp", "537.03"},   {13000, "mp-tsp", "548.75"},
    {13000, "asc-tsp", "582.25"},    {13000, "mb-tsp", "639.77"},
    {13000, "cbql-notsp", "804.94"}, {13000, "mp-notsp", "994.20"},
}};

inline std::optional<std::string_view> reference_travel_time(
    int demand_vph, std::string_view controller) {
  for (const auto& row : kTravelTimeTable)
    if (row.demand_vph == demand_vph && row.controller == controller)
      return row.value_s;
  return std::nullopt;
}

inline std::optional<std::string_view> reference_bus_travel_time(
    int demand_vph, std::string_view controller) {
  for (const auto& row : kBusTravelTimeTable)
    if (row.demand_vph == demand_vph && row.controller == controller)
      return row.value_s;
  return std::nullopt;
}

}  // namespace tsplab::bench
