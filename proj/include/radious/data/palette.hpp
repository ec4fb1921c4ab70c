#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "radious/error.hpp"

namespace radious::data {

struct PaletteEntry {
  int id = 0;
  std::string name;
  std::array<std::uint8_t, 3> color{0, 0, 0};
};

// Ordered class palette; id 0 is reserved for background and ids are unique
// and contiguous from 0.
class ClassPalette {
 public:
  ClassPalette() = default;
  explicit ClassPalette(std::vector<PaletteEntry> entries) : entries_(std::move(entries)) {
    validate();
  }

  int size() const { return static_cast<int>(entries_.size()); }
  const PaletteEntry& entry(int id) const {
    if (id < 0 || id >= size()) fail("label", "palette id " + std::to_string(id) + " out of range");
    return entries_[static_cast<std::size_t>(id)];
  }
  const std::vector<PaletteEntry>& entries() const { return entries_; }
  bool contains(int id) const { return id >= 0 && id < size(); }

 private:
  void validate() const {
    if (entries_.empty()) fail("palette", "palette must contain at least the background class");
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (entries_[i].id != static_cast<int>(i))
        fail("palette", "palette ids must be contiguous from 0; entry " + std::to_string(i) +
                            " has id " + std::to_string(entries_[i].id));
      if (entries_[i].name.empty()) fail("palette", "palette entry " + std::to_string(i) + " has no name");
    }
    if (entries_.size() > 256) fail("palette", "palette ids must fit one byte");
  }

  std::vector<PaletteEntry> entries_;
};

namespace detail {

// Distinct, deterministic display color per class id: a golden-angle walk
// around the hue wheel at fixed saturation/value.
inline std::array<std::uint8_t, 3> wheel_color(int id) {
  if (id == 0) return {0, 0, 0};
  const double h = static_cast<double>((id * 137) % 360) / 60.0;
  const double s = 0.75, v = 0.95;
  const int i = static_cast<int>(h) % 6;
  const double f = h - std::floor(h);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  double r = 0, g = 0, b = 0;
  switch (i) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
  auto to8 = [](double x) { return static_cast<std::uint8_t>(std::lround(x * 255.0)); };
  return {to8(r), to8(g), to8(b)};
}

}  // namespace detail

// Default 34-entry palette: background + 33 foreground classes (15 imaging
// findings, 16 tooth positions, plus root and veneer). The exact class list
// is deployment-specific; ship it in palette.json to override.
inline ClassPalette default_palette() {
  static const char* kNames[] = {
      "background",
      // findings / treatments
      "pulp_chamber", "restoration", "endodontics", "crown", "decay", "pin", "composite",
      "bridge", "pulpitis", "orthodontics", "radicular_cyst", "periapical_cyst", "cyst",
      "implant", "bone_graft_material",
      // tooth positions
      "upper_central", "upper_lateral", "upper_canine", "upper_first_premolar",
      "upper_second_premolar", "upper_first_molar", "upper_second_molar", "upper_third_molar",
      "lower_central", "lower_lateral", "lower_canine", "lower_first_premolar",
      "lower_second_premolar", "lower_first_molar", "lower_second_molar", "lower_third_molar",
      // remaining structures
      "root", "veneer"};
  std::vector<PaletteEntry> entries;
  entries.reserve(34);
  int id = 0;
  for (const char* name : kNames) {
    entries.push_back({id, name, detail::wheel_color(id)});
    ++id;
  }
  return ClassPalette(std::move(entries));
}

inline ClassPalette palette_from_json(const nlohmann::json& j) {
  if (!j.is_array()) fail("palette", "palette json must be an array of entries");
  std::vector<PaletteEntry> entries;
  for (const auto& item : j) {
    PaletteEntry e;
    e.id = item.at("id").get<int>();
    e.name = item.at("name").get<std::string>();
    const auto& c = item.at("color");
    if (!c.is_array() || c.size() != 3) fail("palette", "color must be an [r,g,b] triple");
    for (int k = 0; k < 3; ++k) e.color[static_cast<std::size_t>(k)] = c[static_cast<std::size_t>(k)].get<std::uint8_t>();
    entries.push_back(std::move(e));
  }
  return ClassPalette(std::move(entries));
}

inline nlohmann::json palette_to_json(const ClassPalette& p) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& e : p.entries())
    j.push_back({{"id", e.id}, {"name", e.name}, {"color", {e.color[0], e.color[1], e.color[2]}}});
  return j;
}

inline ClassPalette load_palette(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("io", "cannot open palette file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    fail("parse", "invalid palette json in '" + path + "': " + e.what());
  }
  return palette_from_json(j);
}

inline void save_palette(const std::string& path, const ClassPalette& p) {
  std::ofstream out(path);
  if (!out) fail("io", "cannot write palette file '" + path + "'");
  out << palette_to_json(p).dump(2) << "\n";
}

}  // namespace radious::data
