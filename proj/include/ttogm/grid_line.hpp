#pragma once

#include <cmath>
#include <cstdlib>
#include <limits>

namespace ttogm {

/// Visits every cell whose closed square the segment (u0,v0)-(u1,v1) touches,
/// in order from the start cell to the end cell. Coordinates are in cell
/// units (cell (i,j) spans [i,i+1) x [j,j+1)). When the segment passes
/// exactly through a cell corner both side cells are visited before the
/// diagonal one.
template <class Visit>
void traverse_supercover(double u0, double v0, double u1, double v1, Visit&& visit) {
  int cx = static_cast<int>(std::floor(u0));
  int cy = static_cast<int>(std::floor(v0));
  const int ex = static_cast<int>(std::floor(u1));
  const int ey = static_cast<int>(std::floor(v1));
  const double du = u1 - u0;
  const double dv = v1 - v0;
  const int sx = du > 0 ? 1 : (du < 0 ? -1 : 0);
  const int sy = dv > 0 ? 1 : (dv < 0 ? -1 : 0);
  constexpr double kInf = std::numeric_limits<double>::infinity();
  const double dtx = sx != 0 ? 1.0 / std::abs(du) : kInf;
  const double dty = sy != 0 ? 1.0 / std::abs(dv) : kInf;
  double tx = sx > 0 ? (cx + 1 - u0) * dtx : (sx < 0 ? (u0 - cx) * dtx : kInf);
  double ty = sy > 0 ? (cy + 1 - v0) * dty : (sy < 0 ? (v0 - cy) * dty : kInf);

  visit(cx, cy);
  while (cx != ex || cy != ey) {
    const bool x_open = cx != ex && sx != 0;
    const bool y_open = cy != ey && sy != 0;
    if (!x_open && !y_open) break;  // start/end disagree with the direction; nothing left to walk
    if (x_open && (!y_open || tx < ty)) {
      cx += sx;
      tx += dtx;
    } else if (y_open && (!x_open || ty < tx)) {
      cy += sy;
      ty += dty;
    } else {
      visit(cx + sx, cy);
      visit(cx, cy + sy);
      cx += sx;
      cy += sy;
      tx += dtx;
      ty += dty;
    }
    visit(cx, cy);
  }
}

}  // namespace ttogm
