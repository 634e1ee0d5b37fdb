#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "abmapper/common.hpp"

namespace abm::env {

struct Pos {
  int row = 0, col = 0;
  bool operator==(const Pos&) const = default;
};

inline int manhattan(Pos a, Pos b) {
  return std::abs(a.row - b.row) + std::abs(a.col - b.col);
}

enum class Action : int { Stay = 0, Up = 1, Down = 2, Left = 3, Right = 4 };
inline constexpr int kNumActions = 5;

// Row/col deltas indexed by Action.
inline Pos apply_action(Pos p, Action a) {
  switch (a) {
    case Action::Up: return {p.row - 1, p.col};
    case Action::Down: return {p.row + 1, p.col};
    case Action::Left: return {p.row, p.col - 1};
    case Action::Right: return {p.row, p.col + 1};
    case Action::Stay: return p;
  }
  return p;
}

/// Static grid: immutable after load. cells[r*width+c] != 0 means obstacle.
struct GridMap {
  int width = 0, height = 0;
  std::vector<uint8_t> cells;

  bool in_bounds(Pos p) const {
    return p.row >= 0 && p.row < height && p.col >= 0 && p.col < width;
  }
  bool obstacle(Pos p) const {
    return cells[static_cast<size_t>(p.row) * width + p.col] != 0;
  }
  bool free_cell(Pos p) const { return in_bounds(p) && !obstacle(p); }
  int index(Pos p) const { return p.row * width + p.col; }
  int cell_count() const { return width * height; }

  std::vector<Pos> free_cells() const {
    std::vector<Pos> out;
    for (int r = 0; r < height; ++r)
      for (int c = 0; c < width; ++c)
        if (!cells[static_cast<size_t>(r) * width + c]) out.push_back({r, c});
    return out;
  }
};

// Text format: first line "width height", then height rows of width glyphs,
// '.' free and '#' obstacle. load/render are mutually inverse on the
// canonical form (no trailing newline).
GridMap load_map(const std::string& text);
std::string render_map(const GridMap& map);

}  // namespace abm::env
