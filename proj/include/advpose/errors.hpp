#ifndef ADVPOSE_ERRORS_HPP
#define ADVPOSE_ERRORS_HPP

#include <cstddef>
#include <stdexcept>
#include <string>

namespace advpose {

/// Base class of every error raised by the library. The CLI maps subclasses
/// onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

class NearZeroQuaternion : public Error {
 public:
  explicit NearZeroQuaternion(double norm)
      : Error("quaternion norm " + std::to_string(norm) + " is too close to zero to normalize") {}
};

class NonFiniteValue : public Error {
 public:
  using Error::Error;
};

class DoubleBackward : public Error {
 public:
  DoubleBackward() : Error("backward() already ran on this tape") {}
};

class DetachedLoss : public Error {
 public:
  using Error::Error;
};

class TooFewLandmarks : public Error {
 public:
  explicit TooFewLandmarks(std::size_t n)
      : Error("scene needs at least 8 landmarks, got " + std::to_string(n)) {}
};

class IoError : public Error {
 public:
  using Error::Error;
};

class FormatVersionMismatch : public Error {
 public:
  FormatVersionMismatch(const std::string& what, unsigned found, unsigned supported)
      : Error(what + " format version " + std::to_string(found) +
              " is not supported (this build reads version " + std::to_string(supported) + ")") {}
};

class ChecksumMismatch : public Error {
 public:
  using Error::Error;
};

class EmptyDataset : public Error {
 public:
  using Error::Error;
};

class NonFiniteLoss : public Error {
 public:
  NonFiniteLoss(int epoch, std::size_t batch)
      : Error("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch)),
        epoch_(epoch),
        batch_(batch) {}
  int epoch() const { return epoch_; }
  std::size_t batch() const { return batch_; }

 private:
  int epoch_;
  std::size_t batch_;
};

class InvalidConfig : public Error {
 public:
  InvalidConfig(const std::string& field, const std::string& why)
      : Error("invalid config at '" + field + "': " + why), field_(field) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

class ModeMismatch : public Error {
 public:
  using Error::Error;
};

}  // namespace advpose

#endif
