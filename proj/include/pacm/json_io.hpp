#pragma once

#include <filesystem>
#include <initializer_list>
#include <string>
#include <string_view>

#include "json.hpp"

#include "pacm/numeric.hpp"

namespace pacm::json_io {

using nlohmann::json;

// Matrices are arrays of rows.
json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const json& j, std::string_view what);
json vector_to_json(const Vector& v);
Vector vector_from_json(const json& j, std::string_view what);

// Throws ConfigError naming the first key of `j` not in `allowed`.
void reject_unknown_keys(const json& j, std::initializer_list<std::string_view> allowed,
                         std::string_view context);

// Typed field access with ConfigError naming the key on type mismatch.
template <typename T>
T get(const json& j, std::string_view key, std::string_view context) {
  const auto it = j.find(std::string(key));
  if (it == j.end())
    throw ConfigError(std::string(context) + ": missing key '" + std::string(key) + "'");
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string(context) + ": key '" + std::string(key) +
                      "' has the wrong type");
  }
}

template <typename T>
void get_if_present(const json& j, std::string_view key, T& out,
                    std::string_view context) {
  if (j.contains(std::string(key))) out = get<T>(j, key, context);
}

json read_json_file(const std::filesystem::path& path);
// Writes `j.dump(2)` plus a trailing newline.
void write_json_file(const json& j, const std::filesystem::path& path);

}  // namespace pacm::json_io
