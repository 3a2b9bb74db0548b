#pragma once

#include <exception>
#include <mutex>

namespace epitraj::detail {

// Exceptions must not leave an OpenMP region; the first one thrown inside
// is stored and rethrown after the loop.
class ExceptionSlot {
 public:
  void capture() {
    std::lock_guard lock(mutex_);
    if (!error_) error_ = std::current_exception();
  }
  void rethrow() const {
    if (error_) std::rethrow_exception(error_);
  }

 private:
  std::mutex mutex_;
  std::exception_ptr error_;
};

}  // namespace epitraj::detail
