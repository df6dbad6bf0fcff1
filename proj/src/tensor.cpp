#include "mfcl/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>
#include <type_traits>

namespace mfcl::ad {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename T>
long first_non_finite(std::span<const T> values) {
  // Exponent bits all set marks NaN or infinity; the blockwise OR keeps the scan vectorizable.
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  constexpr Bits kExp = static_cast<Bits>(sizeof(T) == 4 ? 0x7f800000ull : 0x7ff0000000000000ull);
  constexpr std::size_t kBlock = 1024;
  for (std::size_t start = 0; start < values.size(); start += kBlock) {
    const std::size_t end = std::min(values.size(), start + kBlock);
    bool bad = false;
    for (std::size_t i = start; i < end; ++i) bad |= (std::bit_cast<Bits>(values[i]) & kExp) == kExp;
    if (!bad) continue;
    for (std::size_t i = start; i < end; ++i) {
      if (!std::isfinite(values[i])) return static_cast<long>(i);
    }
  }
  return -1;
}

template <typename T>
Parameter<T>& ParameterSet<T>::add(const std::string& name, Shape shape) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  auto p = std::make_unique<Parameter<T>>();
  p->name = name;
  p->value = Tensor<T>(shape);
  p->grad = Tensor<T>(std::move(shape));
  index_[name] = params_.size();
  params_.push_back(std::move(p));
  return *params_.back();
}

template <typename T>
Parameter<T>* ParameterSet<T>::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : params_[it->second].get();
}

template <typename T>
const Parameter<T>* ParameterSet<T>::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : params_[it->second].get();
}

template <typename T>
Parameter<T>& ParameterSet<T>::at(const std::string& name) {
  if (auto* p = find(name)) return *p;
  throw ConfigError("no parameter named '" + name + "'");
}

template <typename T>
std::size_t ParameterSet<T>::total_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.numel();
  return n;
}

template <typename T>
void ParameterSet<T>::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

template <typename T>
std::vector<Parameter<T>*> ParameterSet<T>::all() {
  std::vector<Parameter<T>*> out;
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

template <typename T>
std::vector<const Parameter<T>*> ParameterSet<T>::all() const {
  std::vector<const Parameter<T>*> out;
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

template <typename T>
std::uint64_t ParameterSet<T>::checksum() const {
  // FNV-1a over names and raw value bytes.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto eat = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& p : params_) {
    eat(p->name.data(), p->name.size());
    eat(p->value.data(), p->value.numel() * sizeof(T));
  }
  return h;
}

template <typename T>
void kaiming_uniform(Tensor<T>& w, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : w.values()) v = static_cast<T>(dist(rng));
}

template class Tensor<float>;
template class Tensor<double>;
template class ParameterSet<float>;
template class ParameterSet<double>;
template long first_non_finite<float>(std::span<const float>);
template long first_non_finite<double>(std::span<const double>);
template void kaiming_uniform<float>(Tensor<float>&, std::size_t, Rng&);
template void kaiming_uniform<double>(Tensor<double>&, std::size_t, Rng&);

}  // namespace mfcl::ad
