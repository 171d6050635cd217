#pragma once

#include <iomanip>
#include <locale>
#include <sstream>
#include <string>

// Locale-independent number formatting for CSV and config output, so files
// are byte-identical across runs and environments.

namespace fv {

inline std::string format_g(double v, int precision = 9) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << std::setprecision(precision) << v;
  return os.str();
}

}  // namespace fv
