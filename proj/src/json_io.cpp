#include "pacm/json_io.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace pacm::json_io {

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const json& j, std::string_view what) {
  if (!j.is_array()) throw ConfigError(std::string(what) + ": expected an array of rows");
  if (j.empty()) return Matrix();
  const std::size_t cols = j.front().is_array() ? j.front().size() : 0;
  Matrix m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < j.size(); ++r) {
    const auto& row = j[r];
    if (!row.is_array() || row.size() != cols)
      throw ConfigError(std::string(what) + ": ragged matrix rows");
    for (std::size_t c = 0; c < cols; ++c) {
      if (!row[c].is_number()) throw ConfigError(std::string(what) + ": non-numeric entry");
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = row[c].get<double>();
    }
  }
  return m;
}

json vector_to_json(const Vector& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

Vector vector_from_json(const json& j, std::string_view what) {
  if (!j.is_array()) throw ConfigError(std::string(what) + ": expected an array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ConfigError(std::string(what) + ": non-numeric entry");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

void reject_unknown_keys(const json& j, std::initializer_list<std::string_view> allowed,
                         std::string_view context) {
  if (!j.is_object()) throw ConfigError(std::string(context) + ": expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw ConfigError(std::string(context) + ": unknown key '" + key + "'");
  }
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path.string() + "' for reading");
  std::stringstream buffer;
  buffer << in.rdbuf();
  try {
    return json::parse(buffer.str());
  } catch (const json::parse_error& e) {
    throw ConfigError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

void write_json_file(const json& j, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot open '" + path.string() + "' for writing");
  out << j.dump(2) << '\n';
  if (!out) throw ConfigError("failed writing '" + path.string() + "'");
}

}  // namespace pacm::json_io
