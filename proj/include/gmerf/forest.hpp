#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "gmerf/common.hpp"

namespace gmerf {

/// Non-owning view of a weighted regression problem. Rows of `features`
/// are observations; `case_weights` drive both the resampling probabilities
/// and the split/leaf statistics.
struct TrainingSet {
  const Matrix& features;
  const Vector& response;
  const Vector& case_weights;
};

struct ForestConfig {
  int n_trees = 500;
  // Unset means max(1, floor(sqrt(p))).
  std::optional<int> mtry;
  // Nodes holding this many in-bag draws or fewer become leaves.
  int min_node_size = 5;
  double sample_fraction = 1.0;
  std::uint64_t seed = 42;
  // 0 means hardware concurrency. Output never depends on this.
  int threads = 1;
};

int resolved_mtry(const ForestConfig& cfg, Index num_features);

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;

  bool is_leaf() const noexcept { return feature < 0; }
};

class Tree {
 public:
  Tree() = default;
  explicit Tree(std::vector<TreeNode> nodes) : nodes_(std::move(nodes)) {}

  // Rows go left when x[feature] <= threshold.
  double predict(const Matrix& features, Index row) const {
    int k = 0;
    while (!nodes_[k].is_leaf()) {
      const TreeNode& node = nodes_[k];
      k = features(row, node.feature) <= node.threshold ? node.left : node.right;
    }
    return nodes_[k].value;
  }

  const std::vector<TreeNode>& nodes() const noexcept { return nodes_; }
  std::size_t num_leaves() const;

 private:
  std::vector<TreeNode> nodes_;
};

/// Immutable trained ensemble. In-bag counts (how often each training row
/// was drawn for each tree) are kept for out-of-bag prediction; a forest
/// restored from disk may omit them.
class Forest {
 public:
  Forest(std::vector<Tree> trees, Index num_features, Index num_train,
         std::vector<std::vector<std::uint32_t>> inbag_counts = {});

  Index num_trees() const noexcept { return static_cast<Index>(trees_.size()); }
  Index num_features() const noexcept { return num_features_; }
  Index num_train() const noexcept { return num_train_; }
  const std::vector<Tree>& trees() const noexcept { return trees_; }

  bool has_inbag() const noexcept { return !inbag_.empty(); }
  std::uint32_t inbag_count(Index tree, Index row) const { return inbag_[tree][row]; }

 private:
  std::vector<Tree> trees_;
  Index num_features_;
  Index num_train_;
  std::vector<std::vector<std::uint32_t>> inbag_;
};

Forest fit_forest(const TrainingSet& data, const ForestConfig& cfg);

/// Mean of the tree predictions for every row of `features`.
Vector predict(const Forest& forest, const Matrix& features, int threads = 1);

struct OobPrediction {
  Vector values;
  // Rows that were in-bag in every tree; they carry the full-forest value.
  std::vector<bool> degenerate;

  Index num_degenerate() const;
};

OobPrediction oob_predict(const Forest& forest, const Matrix& features);

struct TuneResult {
  int mtry = 1;
  std::vector<int> candidates;
  std::vector<double> cv_error;  // weighted mean squared error per candidate
};

/// K-fold cross-validated choice of mtry. Folds are fixed by cfg.seed so
/// all candidates see the same partition; ties go to the smaller mtry.
TuneResult tune_mtry(const TrainingSet& data, int folds, std::span<const int> candidates,
                     const ForestConfig& cfg);

}  // namespace gmerf
