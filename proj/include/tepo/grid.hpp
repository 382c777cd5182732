#pragma once

// Core 2D grid types, prompts, cases and action ids shared by every module.

#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace tepo {

/// Minimum side length of a case image; generic grids only need to be non-empty.
inline constexpr int kMinGridSide = 8;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Row-major 2D array.
template <class T>
class Grid {
 public:
  using value_type = T;

  Grid() = default;
  Grid(int height, int width, T fill = T{}) : height_(height), width_(width) {
    check_shape(height, width);
    data_.assign(static_cast<std::size_t>(height) * width, fill);
  }
  Grid(int height, int width, std::vector<T> data)
      : height_(height), width_(width), data_(std::move(data)) {
    check_shape(height, width);
    if (data_.size() != static_cast<std::size_t>(height) * width)
      throw ShapeError("grid data length does not match height*width");
  }

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(int r, int c) noexcept { return data_[index(r, c)]; }
  const T& operator()(int r, int c) const noexcept { return data_[index(r, c)]; }

  bool contains(int r, int c) const noexcept {
    return r >= 0 && c >= 0 && r < height_ && c < width_;
  }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::vector<T>& values() noexcept { return data_; }
  const std::vector<T>& values() const noexcept { return data_; }

  template <class U>
  bool same_shape(const Grid<U>& other) const noexcept {
    return height_ == other.height() && width_ == other.width();
  }

  bool operator==(const Grid&) const = default;

 private:
  std::size_t index(int r, int c) const noexcept {
    return static_cast<std::size_t>(r) * width_ + c;
  }
  static void check_shape(int h, int w) {
    if (h < 1 || w < 1)
      throw ShapeError("grid must be non-empty, got " + std::to_string(h) + "x" +
                       std::to_string(w));
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<T> data_;
};

/// Grayscale image, intensities nominally in [0,1].
using Image = Grid<double>;
/// Binary mask; every element is 0 or 1.
using BinaryMask = Grid<std::uint8_t>;
/// Foreground probability per pixel, in [0,1]. Stored as 32-bit floats so
/// maps survive the wire protocol bit-exactly.
using ProbMap = Grid<float>;

template <class A, class B>
void require_same_shape(const Grid<A>& a, const Grid<B>& b, const char* what) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(what) + ": shape mismatch (" + std::to_string(a.height()) + "x" +
                     std::to_string(a.width()) + " vs " + std::to_string(b.height()) + "x" +
                     std::to_string(b.width()) + ")");
}

/// True iff every element is exactly 0 or 1.
bool is_binary(const BinaryMask& m) noexcept;
/// True iff every element lies in [0,1] (NaN rejected).
bool is_probability(const ProbMap& p) noexcept;

/// output(x) = 1 iff p(x) > 0.5. An all-0.5 map yields the empty mask.
BinaryMask threshold_mask(const ProbMap& p);

/// Mask embedded as a probability map with values in {0,1}.
ProbMap to_prob_map(const BinaryMask& m);

std::size_t count_foreground(const BinaryMask& m) noexcept;

// ---------------------------------------------------------------------------
// Prompts

enum class PointLabel : std::uint8_t { Positive, Negative };

struct PointPrompt {
  int row = 0;
  int col = 0;
  PointLabel label = PointLabel::Positive;
  bool operator==(const PointPrompt&) const = default;
};

/// Inclusive bounds on both ends.
struct BoxPrompt {
  int r0 = 0, c0 = 0, r1 = 0, c1 = 0;
  bool operator==(const BoxPrompt&) const = default;
  bool contains(int r, int c) const noexcept { return r >= r0 && r <= r1 && c >= c0 && c <= c1; }
};

class Prompt {
 public:
  enum class Kind : std::uint8_t { Point, Box };

  /// Validated constructors; throw std::out_of_range when outside an h x w grid.
  static Prompt point(int row, int col, PointLabel label, int h, int w);
  static Prompt box(int r0, int c0, int r1, int c1, int h, int w);

  Kind kind() const noexcept { return kind_; }
  bool is_point() const noexcept { return kind_ == Kind::Point; }
  bool is_box() const noexcept { return kind_ == Kind::Box; }
  const PointPrompt& as_point() const;
  const BoxPrompt& as_box() const;

  bool operator==(const Prompt&) const = default;

 private:
  Prompt() = default;
  Kind kind_ = Kind::Point;
  PointPrompt point_{};
  BoxPrompt box_{};
};

/// Clamp a box into [0,h-1]x[0,w-1], swapping reversed bounds first.
Prompt clip_box(int r0, int c0, int r1, int c1, int h, int w);

/// Append-only, insertion-ordered prompt history.
class PromptSet {
 public:
  void append(Prompt p) { prompts_.push_back(p); }
  std::size_t size() const noexcept { return prompts_.size(); }
  bool empty() const noexcept { return prompts_.empty(); }
  const Prompt& operator[](std::size_t i) const { return prompts_.at(i); }
  auto begin() const noexcept { return prompts_.begin(); }
  auto end() const noexcept { return prompts_.end(); }
  bool has_box() const noexcept;
  bool operator==(const PromptSet&) const = default;

 private:
  std::vector<Prompt> prompts_;
};

// ---------------------------------------------------------------------------
// Cases and actions

struct Case {
  std::string id;
  Image image;
  BinaryMask truth;
  std::uint64_t seed = 0;
};

/// Throws std::invalid_argument unless image/truth shapes agree and are at
/// least kMinGridSide on each side, truth is binary and has at least
/// `min_foreground` pixels (and at least one).
void validate_case(const Case& c, std::size_t min_foreground = 1);

class ActionId {
 public:
  static constexpr int kCount = 4;
  static constexpr int kForeground = 0;
  static constexpr int kBackground = 1;
  static constexpr int kCenter = 2;
  static constexpr int kBox = 3;

  constexpr ActionId() = default;
  constexpr explicit ActionId(int v) : value_(v) {
    if (v < 0 || v >= kCount) throw std::out_of_range("action id must be in {0,1,2,3}");
  }
  constexpr int value() const noexcept { return value_; }
  constexpr bool operator==(const ActionId&) const = default;

 private:
  int value_ = 0;
};

std::string action_name(ActionId a);

/// Subset of {0,1,2,3}, stored as a 4-bit set.
class ActionMask {
 public:
  constexpr ActionMask() = default;
  static constexpr ActionMask all() { return ActionMask(0xF); }
  static constexpr ActionMask from_bits(std::uint8_t bits) { return ActionMask(bits & 0xF); }

  constexpr bool contains(ActionId a) const noexcept { return (bits_ >> a.value()) & 1u; }
  constexpr void set(ActionId a, bool on = true) noexcept {
    if (on)
      bits_ |= static_cast<std::uint8_t>(1u << a.value());
    else
      bits_ &= static_cast<std::uint8_t>(~(1u << a.value()));
  }
  constexpr bool empty() const noexcept { return bits_ == 0; }
  constexpr std::uint8_t bits() const noexcept { return bits_; }
  int count() const noexcept;
  std::vector<ActionId> actions() const;
  /// Smallest contained id; mask must be non-empty.
  ActionId first() const;
  constexpr bool operator==(const ActionMask&) const = default;

 private:
  constexpr explicit ActionMask(std::uint8_t b) : bits_(b) {}
  std::uint8_t bits_ = 0;
};

}  // namespace tepo
