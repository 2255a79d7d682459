#pragma once

#include <array>
#include <cstdint>
#include <optional>

namespace d3ood {

/// Philox4x32-10 counter-based block generator.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key) noexcept;

/// Coordinates of an independent random stream. Two streams with different
/// ids never share a Philox block, whatever order they are consumed in.
struct StreamId {
  std::uint32_t split = 0;
  std::uint32_t index = 0;
  std::uint32_t step = 0;
};

/// Sequential view over the Philox blocks of one StreamId. Cheap to create;
/// one per sample and purpose.
class RngStream {
 public:
  RngStream(std::uint64_t seed, StreamId id) noexcept;

  /// Uniform on the open interval (0, 1).
  double uniform() noexcept;
  /// Standard normal via Box-Muller.
  double normal() noexcept;
  std::uint64_t next_u64() noexcept;

 private:
  std::array<std::uint32_t, 2> key_;
  StreamId id_;
  std::uint32_t block_ = 0;
  std::array<std::uint32_t, 4> buffer_{};
  int used_ = 4;
  std::optional<double> spare_normal_;
};

}  // namespace d3ood
