#pragma once

// Append-only paged KV store per (layer, kv_head) with token-granular
// traffic accounting.

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "mac/attention_core.hpp"

namespace mac {

enum class TrafficMode {
  kLogical,      ///< count exactly the tokens requested
  kPageRounded,  ///< count every token of each page touched
};

/// Bytes and tokens streamed out of the store during one run.
struct TrafficCounter {
  double bytes_per_token = 0.0;  ///< B_KV
  TrafficMode mode = TrafficMode::kLogical;
  std::int64_t tokens_read = 0;
  double bytes_read = 0.0;
  /// Read count keyed by floor(log2(tokens)) of each request.
  std::map<int, std::int64_t> reads_by_range;

  void record(std::int64_t tokens);
};

/// Rows of one paged stream, indexed by global 0-based token index; only the
/// tokens of the range it was read for may be accessed.
template <class T>
class PagedRows {
 public:
  using value_type = T;

  PagedRows(const std::vector<std::vector<T>>* pages, std::size_t page_size,
            std::size_t dim, std::size_t end)
      : pages_(pages), page_size_(page_size), dim_(dim), end_(end) {}

  std::size_t size() const { return end_; }
  std::size_t dim() const { return dim_; }
  std::span<const T> row(std::size_t i) const {
    const auto& page = (*pages_)[i / page_size_];
    return {page.data() + (i % page_size_) * dim_, dim_};
  }

 private:
  const std::vector<std::vector<T>>* pages_;
  std::size_t page_size_;
  std::size_t dim_;
  std::size_t end_;
};

template <class T>
struct KvView {
  TokenRange range;
  PagedRows<T> keys;
  PagedRows<T> values;
};

template <class T>
class KvStore {
 public:
  KvStore(std::size_t n_layers, std::size_t n_kv_heads, std::size_t dim,
          std::size_t value_dim, std::size_t page_size = 16);

  std::size_t dim() const { return dim_; }
  std::size_t value_dim() const { return value_dim_; }
  std::size_t page_size() const { return page_size_; }

  /// Stores (k, v) as the next token of the stream; returns its position.
  Position append(std::size_t layer, std::size_t kv_head,
                  std::span<const double> k, std::span<const double> v);

  /// Number of tokens stored in one stream.
  Position size(std::size_t layer, std::size_t kv_head) const;
  std::size_t page_count(std::size_t layer, std::size_t kv_head) const;
  /// Tokens used in the last page (0 when the stream is empty).
  std::size_t last_page_fill(std::size_t layer, std::size_t kv_head) const;

  /// Views over `range`. When `counter` is given it is charged for the
  /// tokens read.
  KvView<T> read_range(std::size_t layer, std::size_t kv_head,
                       TokenRange range,
                       TrafficCounter* counter = nullptr) const;

 private:
  struct Stream {
    std::vector<std::vector<T>> key_pages;
    std::vector<std::vector<T>> value_pages;
    Position size = 0;
  };

  const Stream& stream(std::size_t layer, std::size_t kv_head) const;

  std::size_t n_layers_;
  std::size_t n_kv_heads_;
  std::size_t dim_;
  std::size_t value_dim_;
  std::size_t page_size_;
  std::vector<Stream> streams_;
};

extern template class KvStore<float>;
extern template class KvStore<double>;

}  // namespace mac
