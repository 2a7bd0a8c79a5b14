#include "ptz/kd_forest.hpp"

#include "ptz/random.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <queue>

namespace ptz {

namespace {

// Keeps the k smallest entries of `best`, sorted ascending.
void push_candidate(std::vector<Neighbor>& best, int k, int index, float d2) {
  if (static_cast<int>(best.size()) == k && d2 >= best.back().dist2) return;
  Neighbor nb{index, d2};
  auto it = std::upper_bound(best.begin(), best.end(), nb, [](const Neighbor& a, const Neighbor& b) {
    return a.dist2 < b.dist2 || (a.dist2 == b.dist2 && a.index < b.index);
  });
  best.insert(it, nb);
  if (static_cast<int>(best.size()) > k) best.pop_back();
}

constexpr int kSplitCandidates = 5;
constexpr int kVarianceSample = 100;

}  // namespace

void brute_force_knn(const float* data, std::size_t n, std::size_t dim, const float* query, int k,
                     std::vector<Neighbor>& out) {
  out.clear();
  if (k <= 0) return;
  for (std::size_t i = 0; i < n; ++i) {
    const float* row = data + i * dim;
    float d2 = 0.0f;
    for (std::size_t j = 0; j < dim; ++j) {
      const float d = row[j] - query[j];
      d2 += d * d;
    }
    push_candidate(out, k, static_cast<int>(i), d2);
  }
}

KdForest::KdForest(const float* data, std::size_t n, std::size_t dim, const KdForestParams& params)
    : n_(n), dim_(dim), params_(params), data_(data, data + n * dim) {
  std::uint64_t state = params_.seed;
  trees_.resize(std::max(1, params_.trees));
  for (auto& tree : trees_) {
    tree.index.resize(n_);
    std::iota(tree.index.begin(), tree.index.end(), 0);
    tree.nodes.reserve(2 * n_ / std::max(1, params_.leaf_size) + 1);
    if (n_ > 0) build(tree, 0, static_cast<int>(n_), state);
  }
}

float KdForest::dist2(const float* a, const float* b) const {
  float d2 = 0.0f;
  for (std::size_t j = 0; j < dim_; ++j) {
    const float d = a[j] - b[j];
    d2 += d * d;
  }
  return d2;
}

int KdForest::build(Tree& tree, int begin, int end, std::uint64_t& rng_state) {
  const int id = static_cast<int>(tree.nodes.size());
  tree.nodes.emplace_back();
  if (end - begin <= params_.leaf_size) {
    tree.nodes[id].left = begin;
    tree.nodes[id].right = end;
    return id;
  }

  // Mean and variance per dimension over a prefix sample; split on one of
  // the highest-variance dimensions picked at random.
  const int count = std::min(end - begin, kVarianceSample);
  std::vector<double> mean(dim_, 0.0), var(dim_, 0.0);
  for (int i = 0; i < count; ++i) {
    const float* row = &data_[static_cast<std::size_t>(tree.index[begin + i]) * dim_];
    for (std::size_t j = 0; j < dim_; ++j) mean[j] += row[j];
  }
  for (auto& m : mean) m /= count;
  for (int i = 0; i < count; ++i) {
    const float* row = &data_[static_cast<std::size_t>(tree.index[begin + i]) * dim_];
    for (std::size_t j = 0; j < dim_; ++j) {
      const double d = row[j] - mean[j];
      var[j] += d * d;
    }
  }
  std::vector<int> order(dim_);
  std::iota(order.begin(), order.end(), 0);
  const int top = std::min<int>(kSplitCandidates, static_cast<int>(dim_));
  std::partial_sort(order.begin(), order.begin() + top, order.end(),
                    [&](int a, int b) { return var[a] > var[b] || (var[a] == var[b] && a < b); });
  const int split_dim = order[splitmix64(rng_state) % top];
  const float split = static_cast<float>(mean[split_dim]);

  auto mid_it = std::partition(tree.index.begin() + begin, tree.index.begin() + end, [&](int idx) {
    return data_[static_cast<std::size_t>(idx) * dim_ + split_dim] < split;
  });
  int mid = static_cast<int>(mid_it - tree.index.begin());
  if (mid == begin || mid == end) mid = begin + (end - begin) / 2;  // all values equal on this axis

  tree.nodes[id].dim = split_dim;
  tree.nodes[id].split = split;
  const int left = build(tree, begin, mid, rng_state);
  const int right = build(tree, mid, end, rng_state);
  tree.nodes[id].left = left;
  tree.nodes[id].right = right;
  return id;
}

void KdForest::knn(const float* query, int k, std::vector<Neighbor>& out) const {
  out.clear();
  if (n_ == 0 || k <= 0) return;

  struct Branch {
    float bound;
    int tree;
    int node;
    bool operator>(const Branch& o) const { return bound > o.bound; }
  };
  std::priority_queue<Branch, std::vector<Branch>, std::greater<>> heap;
  std::vector<char> seen(n_, 0);
  int checks = 0;

  auto descend = [&](int t, int node, float bound) {
    const Tree& tree = trees_[t];
    while (tree.nodes[node].dim >= 0) {
      const Node& nd = tree.nodes[node];
      const float diff = query[nd.dim] - nd.split;
      const int near = diff < 0 ? nd.left : nd.right;
      const int far = diff < 0 ? nd.right : nd.left;
      heap.push({bound + diff * diff, t, far});
      node = near;
    }
    const Node& leaf = tree.nodes[node];
    for (int i = leaf.left; i < leaf.right; ++i) {
      const int idx = tree.index[i];
      if (seen[idx]) continue;
      seen[idx] = 1;
      ++checks;
      push_candidate(out, k, idx, dist2(query, &data_[static_cast<std::size_t>(idx) * dim_]));
    }
  };

  for (int t = 0; t < static_cast<int>(trees_.size()); ++t) descend(t, 0, 0.0f);
  while (!heap.empty() && checks < params_.max_checks) {
    const Branch b = heap.top();
    heap.pop();
    if (static_cast<int>(out.size()) == k && b.bound >= out.back().dist2) break;
    descend(b.tree, b.node, b.bound);
  }
}

}  // namespace ptz
