#pragma once

#include <stdexcept>
#include <string>

namespace lane3d {

// Invalid configuration or parameter values (CLI exit code 2).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed or inconsistent input data (CLI exit code 3).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A ray through the image does not hit the road plane in front of the camera.
class HorizonError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

}  // namespace lane3d
