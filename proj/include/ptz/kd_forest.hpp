#pragma once

// Randomized k-d tree forest for approximate nearest-neighbour search over
// fixed-length float descriptors, with an exact brute-force counterpart.

#include <cstddef>
#include <cstdint>
#include <vector>

namespace ptz {

struct Neighbor {
  int index = -1;
  float dist2 = 0.0f;
};

struct KdForestParams {
  int trees = 4;
  int max_checks = 128;  // leaf points examined per query across all trees
  int leaf_size = 8;
  std::uint64_t seed = 0x5eed;
};

/// Exact k nearest rows of `data` (n x dim, row-major) to `query`, ascending.
void brute_force_knn(const float* data, std::size_t n, std::size_t dim, const float* query,
                     int k, std::vector<Neighbor>& out);

class KdForest {
 public:
  /// Copies `data` (n x dim, row-major).
  KdForest(const float* data, std::size_t n, std::size_t dim, const KdForestParams& params = {});

  std::size_t size() const { return n_; }
  std::size_t dim() const { return dim_; }

  /// Approximate k nearest neighbours, ascending by distance.
  void knn(const float* query, int k, std::vector<Neighbor>& out) const;

 private:
  struct Node {
    int dim = -1;       // -1 marks a leaf
    float split = 0.0f;
    int left = -1;      // child node ids, or [begin, end) into the tree's index list for leaves
    int right = -1;
  };
  struct Tree {
    std::vector<Node> nodes;
    std::vector<int> index;
  };

  int build(Tree& tree, int begin, int end, std::uint64_t& rng_state);
  float dist2(const float* a, const float* b) const;

  std::size_t n_ = 0;
  std::size_t dim_ = 0;
  KdForestParams params_;
  std::vector<float> data_;
  std::vector<Tree> trees_;
};

}  // namespace ptz
