#pragma once

// Append-only streaming frame memory with a sliding local window.
//
// Concurrency: one appender at a time, any number of readers. Readers take a
// MemoryView via snapshot(); a view is immutable and never observes frames
// appended after it was taken. Frames live in fixed-capacity chunks that are
// never reallocated, so a published frame's address is stable for as long as
// the buffer or any view referencing its chunk is alive.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iterator>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "weavecache/core_math.hpp"
#include "weavecache/errors.hpp"

namespace weavecache {

inline constexpr std::size_t kDefaultWindowFrames = 64;

struct FrameRecord {
  std::uint64_t frame_id;
  double timestamp_s;
  TokenMatrix token_keys;
  Embedding pooled_key;               // mean_pool(token_keys), cached at append
  std::optional<std::string> label;   // simulation tag; retrieval never reads it
};

using FrameRefs = std::vector<const FrameRecord*>;

namespace detail {

inline constexpr std::size_t kChunkFrames = 256;

struct FrameChunk {
  std::unique_ptr<std::optional<FrameRecord>[]> slots{new std::optional<FrameRecord>[kChunkFrames]};
};

using ChunkDirectory = std::vector<std::shared_ptr<FrameChunk>>;

}  // namespace detail

/// Immutable read view over the first size() frames of a MemoryBuffer.
class MemoryView {
 public:
  class const_iterator {
   public:
    using iterator_category = std::random_access_iterator_tag;
    using value_type = FrameRecord;
    using difference_type = std::ptrdiff_t;
    using pointer = const FrameRecord*;
    using reference = const FrameRecord&;

    const_iterator() = default;
    const_iterator(const MemoryView* view, std::size_t i) : view_(view), i_(i) {}

    reference operator*() const { return (*view_)[i_]; }
    pointer operator->() const { return &(*view_)[i_]; }
    reference operator[](difference_type n) const { return (*view_)[i_ + n]; }
    const_iterator& operator++() { ++i_; return *this; }
    const_iterator operator++(int) { auto t = *this; ++i_; return t; }
    const_iterator& operator--() { --i_; return *this; }
    const_iterator operator--(int) { auto t = *this; --i_; return t; }
    const_iterator& operator+=(difference_type n) { i_ += n; return *this; }
    const_iterator& operator-=(difference_type n) { i_ -= n; return *this; }
    friend const_iterator operator+(const_iterator it, difference_type n) { return it += n; }
    friend const_iterator operator+(difference_type n, const_iterator it) { return it += n; }
    friend const_iterator operator-(const_iterator it, difference_type n) { return it -= n; }
    friend difference_type operator-(const const_iterator& a, const const_iterator& b) {
      return static_cast<difference_type>(a.i_) - static_cast<difference_type>(b.i_);
    }
    friend bool operator==(const const_iterator& a, const const_iterator& b) { return a.i_ == b.i_; }
    friend auto operator<=>(const const_iterator& a, const const_iterator& b) { return a.i_ <=> b.i_; }

   private:
    const MemoryView* view_ = nullptr;
    std::size_t i_ = 0;
  };

  MemoryView() : dir_(std::make_shared<detail::ChunkDirectory>()) {}
  MemoryView(std::shared_ptr<const detail::ChunkDirectory> dir, std::size_t size)
      : dir_(std::move(dir)), size_(size) {}

  std::size_t size() const noexcept { return size_; }
  bool empty() const noexcept { return size_ == 0; }

  const FrameRecord& operator[](std::size_t i) const {
    return *(*dir_)[i / detail::kChunkFrames]->slots[i % detail::kChunkFrames];
  }
  const FrameRecord& at(std::size_t i) const {
    if (i >= size_) throw std::out_of_range("frame index " + std::to_string(i) + " out of range");
    return (*this)[i];
  }
  const FrameRecord& back() const { return at(size_ - 1); }

  const_iterator begin() const { return {this, 0}; }
  const_iterator end() const { return {this, size_}; }

  /// The last min(count, size()) frames, oldest first.
  FrameRefs tail(std::size_t count) const {
    const std::size_t n = std::min(count, size_);
    FrameRefs out;
    out.reserve(n);
    for (std::size_t i = size_ - n; i < size_; ++i) out.push_back(&(*this)[i]);
    return out;
  }

  FrameRefs all() const { return tail(size_); }

 private:
  std::shared_ptr<const detail::ChunkDirectory> dir_;
  std::size_t size_ = 0;
};

/// The streaming memory: an append-only, timestamp-ordered frame sequence.
class MemoryBuffer {
 public:
  explicit MemoryBuffer(std::size_t dim, std::size_t window_c = kDefaultWindowFrames)
      : dim_(dim), window_c_(window_c), dir_(std::make_shared<detail::ChunkDirectory>()) {
    if (dim_ == 0) throw InvalidParameterError("memory dimension must be >= 1");
    if (window_c_ == 0) throw InvalidParameterError("local window length C must be >= 1");
  }

  MemoryBuffer(const MemoryBuffer&) = delete;
  MemoryBuffer& operator=(const MemoryBuffer&) = delete;

  /// Appends one frame. Single-writer: callers must serialize appends.
  const FrameRecord& append(double timestamp_s, TokenMatrix token_keys,
                            std::optional<std::string> label = std::nullopt) {
    if (!std::isfinite(timestamp_s) || timestamp_s < 0.0) {
      throw TimeOrderError("timestamp must be finite and non-negative");
    }
    if (size_ > 0 && timestamp_s < last_timestamp_) {
      throw TimeOrderError("timestamp " + std::to_string(timestamp_s) + " precedes last timestamp " +
                           std::to_string(last_timestamp_));
    }
    if (token_keys.empty()) throw EmptyInputError("frame has no token keys");
    detail::require_same_dim(dim_, token_keys.dim());

    const std::size_t id = size_;
    const std::size_t slot = id % detail::kChunkFrames;
    std::shared_ptr<detail::ChunkDirectory> dir = dir_;
    if (slot == 0) {
      // Copy-on-write of the (small) directory; chunks themselves are shared.
      auto grown = std::make_shared<detail::ChunkDirectory>(*dir_);
      grown->push_back(std::make_shared<detail::FrameChunk>());
      dir = std::move(grown);
    }
    Embedding pooled = mean_pool(token_keys);
    auto& record = dir->back()->slots[slot].emplace(
        FrameRecord{id, timestamp_s, std::move(token_keys), std::move(pooled), std::move(label)});
    {
      std::lock_guard lock(mu_);
      dir_ = std::move(dir);
      size_ = id + 1;
    }
    last_timestamp_ = timestamp_s;
    return record;
  }

  MemoryView snapshot() const {
    std::lock_guard lock(mu_);
    return MemoryView(dir_, size_);
  }

  /// The last min(C, size) frames, oldest first.
  FrameRefs local_window() const { return snapshot().tail(window_c_); }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return size_;
  }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t window_c() const noexcept { return window_c_; }

 private:
  std::size_t dim_;
  std::size_t window_c_;
  mutable std::mutex mu_;  // guards dir_ and size_
  std::shared_ptr<detail::ChunkDirectory> dir_;
  std::size_t size_ = 0;
  double last_timestamp_ = 0.0;  // writer-only
};

}  // namespace weavecache
