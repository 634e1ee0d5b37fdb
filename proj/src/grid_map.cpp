#include "abmapper/grid_map.hpp"

#include <sstream>

namespace abm::env {

GridMap load_map(const std::string& text) {
  std::vector<std::string> lines;
  {
    std::string cur;
    for (char ch : text) {
      if (ch == '\n') {
        lines.push_back(cur);
        cur.clear();
      } else {
        cur.push_back(ch);
      }
    }
    if (!cur.empty()) lines.push_back(cur);
  }
  if (lines.empty())
    throw Error(ErrorKind::MalformedHeader, "map: empty input (line 1)");

  int width = 0, height = 0;
  {
    std::istringstream hs(lines[0]);
    std::string extra;
    if (!(hs >> width >> height) || (hs >> extra))
      throw Error(ErrorKind::MalformedHeader, "map: header must be \"width height\" (line 1)");
    if (width < 1 || height < 1)
      throw Error(ErrorKind::MalformedHeader, "map: width and height must be positive (line 1)");
  }
  if (static_cast<int>(lines.size()) - 1 != height)
    throw Error(ErrorKind::RaggedRows,
                "map: expected " + std::to_string(height) + " rows, got " +
                    std::to_string(lines.size() - 1) + " (line " +
                    std::to_string(lines.size()) + ")");

  GridMap map;
  map.width = width;
  map.height = height;
  map.cells.assign(static_cast<size_t>(width) * height, 0);
  for (int r = 0; r < height; ++r) {
    const std::string& row = lines[static_cast<size_t>(r) + 1];
    if (static_cast<int>(row.size()) != width)
      throw Error(ErrorKind::RaggedRows, "map: row length " + std::to_string(row.size()) +
                                             " != width " + std::to_string(width) + " (line " +
                                             std::to_string(r + 2) + ")");
    for (int c = 0; c < width; ++c) {
      const char g = row[static_cast<size_t>(c)];
      if (g == '#') {
        map.cells[static_cast<size_t>(r) * width + c] = 1;
      } else if (g != '.') {
        throw Error(ErrorKind::UnknownGlyph, std::string("map: unknown glyph '") + g +
                                                 "' at line " + std::to_string(r + 2) +
                                                 ", col " + std::to_string(c + 1));
      }
    }
  }
  return map;
}

std::string render_map(const GridMap& map) {
  std::string out = std::to_string(map.width) + " " + std::to_string(map.height);
  for (int r = 0; r < map.height; ++r) {
    out.push_back('\n');
    for (int c = 0; c < map.width; ++c)
      out.push_back(map.cells[static_cast<size_t>(r) * map.width + c] ? '#' : '.');
  }
  return out;
}

}  // namespace abm::env
