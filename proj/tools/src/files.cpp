#include "files.hpp"

#include <fstream>
#include <sstream>

namespace semtx::cli {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw Error("cannot write " + path.string());
}

std::vector<Tokens> read_sentences(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  std::vector<Tokens> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    out.push_back(tokenize(line));
  }
  return out;
}

}  // namespace semtx::cli
