#pragma once

#include <stdexcept>
#include <string>

namespace structmap {

/// Malformed input document. `path()` is a JSON-pointer-like location, e.g. "/rooms/2/polygon".
class ParseError : public std::runtime_error {
 public:
  ParseError(std::string path, const std::string& message)
      : std::runtime_error((path.empty() ? std::string("/") : path) + ": " + message), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

}  // namespace structmap
