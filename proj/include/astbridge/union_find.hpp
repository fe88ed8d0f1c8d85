#pragma once

#include <cstddef>
#include <numeric>
#include <utility>
#include <vector>

namespace astbridge {

// Disjoint-set forest with union by rank and path halving.
class DisjointSet {
 public:
  explicit DisjointSet(std::size_t n = 0) { reset(n); }

  void reset(std::size_t n) {
    parent_.resize(n);
    std::iota(parent_.begin(), parent_.end(), std::size_t{0});
    rank_.assign(n, 0);
    sets_ = n;
  }

  std::size_t size() const { return parent_.size(); }
  std::size_t set_count() const { return sets_; }

  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }

  // Returns true when the two elements were in different sets.
  bool unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    if (rank_[a] < rank_[b]) std::swap(a, b);
    parent_[b] = a;
    if (rank_[a] == rank_[b]) ++rank_[a];
    --sets_;
    return true;
  }

  bool same(std::size_t a, std::size_t b) { return find(a) == find(b); }

  // Groups of element indices; each group ascending, groups ordered by their
  // smallest element.
  std::vector<std::vector<std::size_t>> groups() {
    std::vector<std::vector<std::size_t>> by_root(parent_.size());
    for (std::size_t i = 0; i < parent_.size(); ++i) by_root[find(i)].push_back(i);
    std::vector<std::vector<std::size_t>> out;
    out.reserve(sets_);
    std::vector<bool> emitted(parent_.size(), false);
    for (std::size_t i = 0; i < parent_.size(); ++i) {
      const std::size_t r = find(i);
      if (!emitted[r]) {
        emitted[r] = true;
        out.push_back(std::move(by_root[r]));
      }
    }
    return out;
  }

 private:
  std::vector<std::size_t> parent_;
  std::vector<unsigned char> rank_;
  std::size_t sets_ = 0;
};

}  // namespace astbridge
