#pragma once

#include <fstream>
#include <functional>
#include <sstream>
#include <string>

#include <json.hpp>

#include "deae/error.hpp"

namespace deae {

using Json = nlohmann::json;

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ComputeError("cannot write file: " + path);
  out << content;
  if (!out) throw ComputeError("write failed: " + path);
}

// Calls fn(line_number, parsed_object) for every non-blank line of a
// JSON-lines file. Parse failures carry file and line in the message.
inline void for_each_json_line(
    const std::string& path,
    const std::function<void(int, const Json&)>& fn) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open file: " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Json obj;
    try {
      obj = Json::parse(line);
    } catch (const Json::parse_error& e) {
      throw ValidationError(path + ":" + std::to_string(lineno) +
                            ": malformed JSON: " + e.what());
    }
    fn(lineno, obj);
  }
}

inline Json parse_json_file(const std::string& path) {
  try {
    return Json::parse(read_file(path));
  } catch (const Json::parse_error& e) {
    throw ValidationError(path + ": malformed JSON: " + std::string(e.what()));
  }
}

// Field accessors that name the file, line and field on failure.
struct JsonAt {
  const Json& obj;
  std::string where;  // "file:line"

  const Json& get(const std::string& field) const {
    auto it = obj.find(field);
    if (it == obj.end())
      throw ValidationError(where + ": missing field '" + field + "'");
    return *it;
  }

  std::string str(const std::string& field) const {
    const Json& v = get(field);
    if (!v.is_string())
      throw ValidationError(where + ": field '" + field + "' must be a string");
    return v.get<std::string>();
  }

  int integer(const std::string& field) const {
    const Json& v = get(field);
    if (!v.is_number_integer())
      throw ValidationError(where + ": field '" + field + "' must be an integer");
    return v.get<int>();
  }

  double real(const std::string& field) const {
    const Json& v = get(field);
    if (!v.is_number())
      throw ValidationError(where + ": field '" + field + "' must be a number");
    return v.get<double>();
  }
};

}  // namespace deae
