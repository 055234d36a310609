#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "semtx/error.hpp"
#include "semtx/textpipe.hpp"

namespace semtx::cli {

// Missing or unreadable input; maps to the input-error exit code.
class InputError : public Error {
 public:
  using Error::Error;
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);
std::vector<Tokens> read_sentences(const std::filesystem::path& path);

// Runs a parser over a file's contents, prefixing any error with the file name.
template <typename F>
auto parse_file(const std::filesystem::path& path, F&& parse) {
  const std::string text = read_file(path);
  try {
    return parse(text);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), 0);
  } catch (const StructuralError& e) {
    throw StructuralError(path.string() + ": " + e.what());
  }
}

}  // namespace semtx::cli
