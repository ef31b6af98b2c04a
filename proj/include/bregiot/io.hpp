#pragma once

#include "bregiot/types.hpp"

#include <json.hpp>

#include <string>

namespace bregiot {

// Headerless CSV, one matrix row per line, reals printed with %.17g so a
// write/read round trip is bit-identical. Paths must end in `.csv`.
Matrix read_matrix(const std::string& path);
void write_matrix(const std::string& path, const Matrix& m);

// Reports are JSON documents; paths must end in `.json`.
void write_report(const std::string& path, const nlohmann::json& report);
nlohmann::json read_report(const std::string& path);

nlohmann::json to_json(const SolveReport& report);
nlohmann::json to_json(const Matrix& m);
nlohmann::json to_json(const Vector& v);
Matrix matrix_from_json(const nlohmann::json& j);

}  // namespace bregiot
