#pragma once

#include <stdexcept>
#include <string>

namespace htsim {

// Error taxonomy shared by all modules. The CLI maps these onto exit codes
// (config -> 2, format -> 3, everything else -> 4).

class RangeError : public std::runtime_error {
public:
  explicit RangeError(const std::string& msg) : std::runtime_error(msg) {}
};

class ShapeError : public std::runtime_error {
public:
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

class LayerError : public std::runtime_error {
public:
  explicit LayerError(const std::string& msg) : std::runtime_error(msg) {}
};

class CalibrationError : public std::runtime_error {
public:
  explicit CalibrationError(const std::string& msg) : std::runtime_error(msg) {}
};

class FormatError : public std::runtime_error {
public:
  FormatError(const std::string& msg, std::size_t byte_offset)
      : std::runtime_error(msg + " (at byte " + std::to_string(byte_offset) + ")"),
        offset(byte_offset) {}
  explicit FormatError(const std::string& msg) : std::runtime_error(msg), offset(0) {}
  std::size_t offset;
};

class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace htsim
