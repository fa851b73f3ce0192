#pragma once

#include <atomic>
#include <cstddef>
#include <new>

namespace amlhp::mem {

// Byte counters for activation buffers. Only storage allocated through
// TrackingAllocator is counted; parameters and bookkeeping are not.
namespace detail {
inline std::atomic<std::size_t> current{0};
inline std::atomic<std::size_t> peak{0};
}  // namespace detail

inline std::size_t current_bytes() { return detail::current.load(std::memory_order_relaxed); }
inline std::size_t peak_bytes() { return detail::peak.load(std::memory_order_relaxed); }
inline void reset_peak() { detail::peak.store(current_bytes(), std::memory_order_relaxed); }

inline void note_alloc(std::size_t n) {
  const std::size_t now = detail::current.fetch_add(n, std::memory_order_relaxed) + n;
  std::size_t seen = detail::peak.load(std::memory_order_relaxed);
  while (now > seen && !detail::peak.compare_exchange_weak(seen, now, std::memory_order_relaxed)) {
  }
}

inline void note_free(std::size_t n) { detail::current.fetch_sub(n, std::memory_order_relaxed); }

// Every numeric buffer starts on a 64-byte boundary. Vectorized reductions
// peel a scalar prologue up to the first aligned element, so a buffer whose
// address mod 32 changes from run to run would also change summation order
// and break bit-identical results for identical inputs.
inline constexpr std::size_t kBufferAlignment = 64;

template <typename T>
struct AlignedAllocator {
  using value_type = T;

  AlignedAllocator() noexcept = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{kBufferAlignment}));
  }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t{kBufferAlignment}); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <typename T>
struct TrackingAllocator {
  using value_type = T;

  TrackingAllocator() noexcept = default;
  template <typename U>
  TrackingAllocator(const TrackingAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    note_alloc(n * sizeof(T));
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{kBufferAlignment}));
  }

  void deallocate(T* p, std::size_t n) noexcept {
    note_free(n * sizeof(T));
    ::operator delete(p, std::align_val_t{kBufferAlignment});
  }

  template <typename U>
  bool operator==(const TrackingAllocator<U>&) const noexcept {
    return true;
  }
};

}  // namespace amlhp::mem
