#ifndef SPANPROBE_ERRORS_H_
#define SPANPROBE_ERRORS_H_

#include <stdexcept>
#include <string>

namespace spanprobe {

// Malformed corpus records, out-of-bounds spans, arity violations.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Embedding store problems: bad magic, version, truncation, missing ids.
class StoreError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration values or unknown method/task names.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape mismatches between parameters, caches and inputs.
class ShapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Non-finite loss or gradients during training.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace spanprobe

#endif  // SPANPROBE_ERRORS_H_
