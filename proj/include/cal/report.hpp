#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "cal/eval.hpp"

namespace cal {

using Json = nlohmann::ordered_json;

/// NaN and infinities become null.
Json number_or_null(double v);
double number_or_nan(const Json& j);

Json to_json(const EvalReport& report);
/// Reads back the scalar fields and sweeps written by to_json.
EvalReport eval_report_from_json(const Json& j);

Json to_json(const std::vector<BucketComparison>& rows);

std::string format_table(const EvalReport& report);
std::string format_table(const std::vector<BucketComparison>& rows);

void write_json(const Json& j, const std::string& path);
Json read_json(const std::string& path);

}  // namespace cal
