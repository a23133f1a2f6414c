#pragma once

// Vector and distribution primitives shared by every module.
//
// All reductions run strictly left to right so results are bit-reproducible
// from one run to the next.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "weavecache/errors.hpp"

namespace weavecache {

namespace detail {

inline void require_finite(std::span<const double> values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) throw InvalidParameterError(std::string(what) + " contains a non-finite entry");
  }
}

inline void require_same_dim(std::size_t a, std::size_t b) {
  if (a != b) {
    throw DimensionError("dimension mismatch: " + std::to_string(a) + " vs " + std::to_string(b));
  }
}

}  // namespace detail

/// Fixed-dimension real vector with finite entries and dim >= 1.
class Embedding {
 public:
  explicit Embedding(std::vector<double> values) : values_(std::move(values)) {
    if (values_.empty()) throw DimensionError("embedding dimension must be >= 1");
    detail::require_finite(values_, "embedding");
  }
  Embedding(std::initializer_list<double> values) : Embedding(std::vector<double>(values)) {}

  std::size_t dim() const noexcept { return values_.size(); }
  std::span<const double> values() const noexcept { return values_; }
  operator std::span<const double>() const noexcept { return values_; }  // NOLINT(google-explicit-constructor)
  double operator[](std::size_t i) const { return values_[i]; }

  bool operator==(const Embedding&) const = default;

 private:
  std::vector<double> values_;
};

/// Row-major set of token key vectors sharing one dimension.
class TokenMatrix {
 public:
  explicit TokenMatrix(std::size_t dim) : dim_(dim) {
    if (dim_ == 0) throw DimensionError("token dimension must be >= 1");
  }
  TokenMatrix(std::initializer_list<std::initializer_list<double>> rows)
      : TokenMatrix(rows.size() == 0 ? 0 : rows.begin()->size()) {
    for (const auto& r : rows) push_back(std::span<const double>(r.begin(), r.size()));
  }

  static TokenMatrix from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) throw EmptyInputError("token list is empty");
    TokenMatrix m(rows.front().size());
    for (const auto& r : rows) m.push_back(r);
    return m;
  }

  void push_back(std::span<const double> row) {
    detail::require_same_dim(dim_, row.size());
    detail::require_finite(row, "token key");
    data_.insert(data_.end(), row.begin(), row.end());
  }

  std::size_t rows() const noexcept { return data_.size() / dim_; }
  std::size_t dim() const noexcept { return dim_; }
  bool empty() const noexcept { return data_.empty(); }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }
  std::span<const double> flat() const noexcept { return data_; }

  bool operator==(const TokenMatrix&) const = default;

 private:
  std::size_t dim_;
  std::vector<double> data_;
};

/// Inner product, summed left to right.
inline double dot(std::span<const double> a, std::span<const double> b) {
  detail::require_same_dim(a.size(), b.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double cosine(std::span<const double> a, std::span<const double> b) {
  detail::require_same_dim(a.size(), b.size());
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0) throw ZeroNormError("cosine of a zero-norm vector");
  return dot(a, b) / (na * nb);
}

/// Elementwise mean of the rows, as a running mean. k copies of v pool to v
/// bit-exactly.
inline Embedding mean_pool(const TokenMatrix& tokens) {
  if (tokens.empty()) throw EmptyInputError("mean_pool of an empty token list");
  std::vector<double> mean(tokens.dim(), 0.0);
  for (std::size_t r = 0; r < tokens.rows(); ++r) {
    const auto row = tokens.row(r);
    const double count = static_cast<double>(r + 1);
    for (std::size_t d = 0; d < mean.size(); ++d) mean[d] += (row[d] - mean[d]) / count;
  }
  return Embedding(std::move(mean));
}

inline Embedding mean_pool(std::span<const Embedding> vs) {
  if (vs.empty()) throw EmptyInputError("mean_pool of an empty vector list");
  TokenMatrix m(vs.front().dim());
  for (const auto& v : vs) m.push_back(v);
  return mean_pool(m);
}

/// Probability vector over a finite set of options.
class Distribution {
 public:
  static constexpr double kSumTolerance = 1e-9;

  explicit Distribution(std::vector<double> probs) : probs_(std::move(probs)) {
    if (probs_.empty()) throw InvalidDistributionError("distribution has no entries");
    double sum = 0.0;
    for (double p : probs_) {
      if (!std::isfinite(p) || p < 0.0) throw InvalidDistributionError("distribution entry is negative or non-finite");
      sum += p;
    }
    if (std::abs(sum - 1.0) > kSumTolerance) {
      throw InvalidDistributionError("distribution sums to " + std::to_string(sum));
    }
  }
  Distribution(std::initializer_list<double> probs) : Distribution(std::vector<double>(probs)) {}

  static Distribution uniform(std::size_t n) {
    if (n == 0) throw InvalidDistributionError("uniform distribution over zero options");
    return Distribution(std::vector<double>(n, 1.0 / static_cast<double>(n)));
  }

  static Distribution one_hot(std::size_t n, std::size_t hot) {
    std::vector<double> p(n, 0.0);
    p.at(hot) = 1.0;
    return Distribution(std::move(p));
  }

  std::size_t size() const noexcept { return probs_.size(); }
  std::span<const double> probs() const noexcept { return probs_; }
  double operator[](std::size_t i) const { return probs_[i]; }

  bool operator==(const Distribution&) const = default;

 private:
  std::vector<double> probs_;
};

/// Shannon entropy in nats, with 0 ln 0 = 0.
inline double entropy(const Distribution& d) {
  double h = 0.0;
  for (double p : d.probs()) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return std::max(h, 0.0);
}

/// softmax(logits / tau), computed with the max logit subtracted.
inline Distribution softmax(std::span<const double> logits, double tau) {
  if (logits.empty()) throw EmptyInputError("softmax of an empty logit vector");
  if (!(tau > 0.0) || !std::isfinite(tau)) throw InvalidParameterError("softmax temperature must be finite and > 0");
  detail::require_finite(logits, "logits");
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> e(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    e[i] = std::exp((logits[i] - top) / tau);
    sum += e[i];
  }
  for (double& v : e) v /= sum;
  return Distribution(std::move(e));
}

/// Index of the largest probability; smallest index wins ties.
inline std::size_t argmax(const Distribution& d) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < d.size(); ++i) {
    if (d[i] > d[best]) best = i;
  }
  return best;
}

}  // namespace weavecache
