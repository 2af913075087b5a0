#pragma once

#include <stdexcept>
#include <string>

namespace crh {

// Error categories map onto CLI exit codes (2 usage, 3 data, 4 infeasible).
enum class ErrorKind { invalid_argument, data, infeasible };

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail_argument(const std::string& msg) {
  throw Error(ErrorKind::invalid_argument, msg);
}

[[noreturn]] inline void fail_data(const std::string& msg) {
  throw Error(ErrorKind::data, msg);
}

[[noreturn]] inline void fail_infeasible(const std::string& msg) {
  throw Error(ErrorKind::infeasible, msg);
}

}  // namespace crh
