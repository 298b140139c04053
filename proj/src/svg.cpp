#include "tenext/svg.hpp"

#include <fstream>
#include <stdexcept>

namespace tenext {

void SvgDoc::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << str();
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

}  // namespace tenext
