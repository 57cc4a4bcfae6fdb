#pragma once

#include <stdexcept>
#include <string>

namespace s3mot {

struct ShapeMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct AxisOutOfRange : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NonScalarLoss : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NonFiniteValue : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NonPositiveStep : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EmptyHistory : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EmptyProblem : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EmptyMatrix : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NonFiniteCost : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct LengthMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MissingPairs : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NoPositives : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MalformedRow : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct FieldCountMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InvalidSpec : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EmptyGroundTruth : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace s3mot
