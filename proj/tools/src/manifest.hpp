#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace semtx::cli {

inline constexpr std::string_view kToolVersion = "semtx 0.1.0";

// Ordered key=value record of one run. "arg.<name>" entries are the options
// the user passed and are enough to replay the run; the rest documents the
// resolved configuration, inputs, outputs and results.
class Manifest {
 public:
  void set(const std::string& key, const std::string& value);
  std::optional<std::string> get(std::string_view key) const;
  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

  std::string str() const;
  static Manifest parse(std::string_view text);  // throws ParseError

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

std::string format_double(double v);  // shortest text that reads back exactly

}  // namespace semtx::cli
