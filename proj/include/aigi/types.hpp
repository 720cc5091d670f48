#pragma once

#include <string>

#include "aigi/tensor.hpp"

namespace aigi {

enum class Label { Real = 0, Fake = 1 };

inline const char* to_string(Label label) { return label == Label::Fake ? "fake" : "real"; }
inline double label_value(Label label) { return label == Label::Fake ? 1.0 : 0.0; }

/// A (3,H,W) image in [0,1] with its ground-truth label.
struct LabeledImage {
  grad::Tensor pixels;
  Label label = Label::Real;
  std::string id;
};

}  // namespace aigi
