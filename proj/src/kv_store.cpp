#include "mac/kv_store.hpp"

#include <bit>
#include <string>

namespace mac {

void TrafficCounter::record(std::int64_t tokens) {
  if (tokens <= 0) return;
  tokens_read += tokens;
  bytes_read += static_cast<double>(tokens) * bytes_per_token;
  const int bucket =
      std::bit_width(static_cast<std::uint64_t>(tokens)) - 1;
  ++reads_by_range[bucket];
}

template <class T>
KvStore<T>::KvStore(std::size_t n_layers, std::size_t n_kv_heads,
                    std::size_t dim, std::size_t value_dim,
                    std::size_t page_size)
    : n_layers_(n_layers),
      n_kv_heads_(n_kv_heads),
      dim_(dim),
      value_dim_(value_dim),
      page_size_(page_size),
      streams_(n_layers * n_kv_heads) {
  if (n_layers == 0 || n_kv_heads == 0)
    throw ConfigError("kv store: need at least one layer and one KV head");
  if (dim == 0 || value_dim == 0)
    throw ConfigError("kv store: head dimensions must be positive");
  if (page_size == 0) throw ConfigError("kv store: page size must be >= 1");
}

template <class T>
const typename KvStore<T>::Stream& KvStore<T>::stream(
    std::size_t layer, std::size_t kv_head) const {
  if (layer >= n_layers_ || kv_head >= n_kv_heads_)
    throw RangeError("kv store: no stream for layer " + std::to_string(layer) +
                     ", kv head " + std::to_string(kv_head));
  return streams_[layer * n_kv_heads_ + kv_head];
}

template <class T>
Position KvStore<T>::append(std::size_t layer, std::size_t kv_head,
                            std::span<const double> k,
                            std::span<const double> v) {
  if (k.size() != dim_ || v.size() != value_dim_)
    throw DimensionError("kv store: expected key/value lengths " +
                         std::to_string(dim_) + "/" +
                         std::to_string(value_dim_) + ", got " +
                         std::to_string(k.size()) + "/" +
                         std::to_string(v.size()));
  auto& s = const_cast<Stream&>(stream(layer, kv_head));
  const auto slot = static_cast<std::size_t>(s.size) % page_size_;
  if (slot == 0) {
    s.key_pages.emplace_back(page_size_ * dim_);
    s.value_pages.emplace_back(page_size_ * value_dim_);
  }
  T* kd = s.key_pages.back().data() + slot * dim_;
  T* vd = s.value_pages.back().data() + slot * value_dim_;
  for (std::size_t i = 0; i < dim_; ++i) kd[i] = static_cast<T>(k[i]);
  for (std::size_t i = 0; i < value_dim_; ++i) vd[i] = static_cast<T>(v[i]);
  return ++s.size;
}

template <class T>
Position KvStore<T>::size(std::size_t layer, std::size_t kv_head) const {
  return stream(layer, kv_head).size;
}

template <class T>
std::size_t KvStore<T>::page_count(std::size_t layer,
                                   std::size_t kv_head) const {
  return stream(layer, kv_head).key_pages.size();
}

template <class T>
std::size_t KvStore<T>::last_page_fill(std::size_t layer,
                                       std::size_t kv_head) const {
  const auto n = static_cast<std::size_t>(stream(layer, kv_head).size);
  if (n == 0) return 0;
  return (n - 1) % page_size_ + 1;
}

template <class T>
KvView<T> KvStore<T>::read_range(std::size_t layer, std::size_t kv_head,
                                 TokenRange range,
                                 TrafficCounter* counter) const {
  const Stream& s = stream(layer, kv_head);
  if (range.lo < 1 || range.hi < range.lo - 1 || range.hi > s.size)
    throw RangeError("kv store: range [" + std::to_string(range.lo) + ", " +
                     std::to_string(range.hi) + "] outside 1.." +
                     std::to_string(s.size));
  if (counter != nullptr && !range.empty()) {
    std::int64_t tokens = range.size();
    if (counter->mode == TrafficMode::kPageRounded) {
      const auto ps = static_cast<Position>(page_size_);
      const Position first = (range.lo - 1) / ps;
      const Position last = (range.hi - 1) / ps;
      tokens = (last - first + 1) * ps;
    }
    counter->record(tokens);
  }
  const auto end = static_cast<std::size_t>(range.hi);
  return KvView<T>{range,
                   PagedRows<T>(&s.key_pages, page_size_, dim_, end),
                   PagedRows<T>(&s.value_pages, page_size_, value_dim_, end)};
}

template class KvStore<float>;
template class KvStore<double>;

}  // namespace mac
