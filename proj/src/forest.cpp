#include "gmerf/forest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include <boost/math/distributions/binomial.hpp>

#include "gmerf/parallel.hpp"
#include "gmerf/random.hpp"

namespace gmerf {

namespace {

constexpr std::uint64_t kTreeStream = 0x7472656573ULL;
constexpr std::uint64_t kFoldStream = 0x666f6c6473ULL;
constexpr std::uint64_t kLeftBranch = 0x4c4c4c4c4c4c4c4cULL;
constexpr std::uint64_t kRightBranch = 0x5252525252525252ULL;

void validate(const TrainingSet& data, const ForestConfig& cfg) {
  const Index n = data.features.rows();
  const Index p = data.features.cols();
  if (data.response.size() != n || data.case_weights.size() != n) {
    throw Error(ErrorKind::invalid_input, "invalid input: features, response and case weights differ in length");
  }
  if (p < 1) throw Error(ErrorKind::invalid_input, "invalid input: no feature columns");
  if (cfg.n_trees < 1) throw Error(ErrorKind::invalid_input, "invalid input: n_trees must be positive");
  if (cfg.min_node_size < 1) throw Error(ErrorKind::invalid_input, "invalid input: min_node_size must be positive");
  if (!(cfg.sample_fraction > 0.0 && cfg.sample_fraction <= 1.0)) {
    throw Error(ErrorKind::invalid_input, "invalid input: sample_fraction must lie in (0, 1]");
  }
  const int mtry = resolved_mtry(cfg, p);
  if (mtry < 1 || mtry > p) {
    throw Error(ErrorKind::invalid_input,
                "invalid input: mtry " + std::to_string(mtry) + " outside [1, " + std::to_string(p) + "]");
  }
  if (n < 2 || n < cfg.min_node_size) {
    throw Error(ErrorKind::insufficient_data,
                "insufficient data: " + std::to_string(n) + " observations, min_node_size " +
                    std::to_string(cfg.min_node_size));
  }
  if (!data.features.allFinite() || !data.response.allFinite() || !data.case_weights.allFinite()) {
    throw Error(ErrorKind::invalid_input, "invalid input: non-finite feature, response or weight");
  }
  if ((data.case_weights.array() <= 0.0).any()) {
    throw Error(ErrorKind::invalid_input, "invalid input: case weights must be positive");
  }
}

// Smallest k with P(Binomial(m, p) <= k) >= u.
std::uint32_t binomial_quantile(double u, std::uint32_t m, double p) {
  if (m == 0 || p <= 0.0) return 0;
  if (p >= 1.0) return m;
  if (static_cast<double>(m) * p > 30.0) {
    const boost::math::binomial_distribution<double> law(m, p);
    const double k = boost::math::quantile(law, std::clamp(u, 1e-300, 1.0 - 1e-16));
    return static_cast<std::uint32_t>(std::clamp(std::ceil(k - 1e-9), 0.0, static_cast<double>(m)));
  }
  double pmf = std::exp(static_cast<double>(m) * std::log1p(-p));
  double cdf = pmf;
  const double ratio = p / (1.0 - p);
  std::uint32_t k = 0;
  while (cdf < u && k < m) {
    pmf *= ratio * static_cast<double>(m - k) / static_cast<double>(k + 1);
    ++k;
    cdf += pmf;
  }
  return k;
}

// Weighted multinomial draws: row i is selected with probability w_i / sum(w).
// Counts are drawn row by row as conditional binomials with one uniform per
// row, so a small change in the weights moves only a few counts.
std::vector<std::uint32_t> draw_inbag(const std::vector<double>& weights, Index draws, Rng& rng) {
  const std::size_t n = weights.size();
  std::vector<double> tail(n + 1, 0.0);
  for (std::size_t i = n; i-- > 0;) tail[i] = tail[i + 1] + weights[i];
  std::vector<std::uint32_t> counts(n, 0);
  auto remaining = static_cast<std::uint32_t>(draws);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = uniform01(rng);
    if (remaining == 0) continue;
    const double p = i + 1 == n ? 1.0 : weights[i] / tail[i];
    counts[i] = binomial_quantile(u, remaining, p);
    remaining -= counts[i];
  }
  return counts;
}

class TreeBuilder {
 public:
  TreeBuilder(const TrainingSet& data, const std::vector<std::vector<int>>& row_order, int mtry,
              int min_node_size)
      : data_(data), row_order_(row_order), mtry_(mtry), min_node_size_(min_node_size) {}

  // Feature candidates at a node are drawn from a generator keyed by the
  // node's path from the root, so a changed split elsewhere in the tree
  // leaves them untouched.
  Tree build(const std::vector<std::uint32_t>& counts, std::uint64_t tree_key) {
    assign_slots(counts);
    std::vector<TreeNode> nodes(1);
    struct Pending {
      int node;
      int begin;
      int end;
      std::uint64_t key;
    };
    std::vector<Pending> stack{{0, 0, static_cast<int>(slot_row_.size()), tree_key}};
    while (!stack.empty()) {
      const Pending cur = stack.back();
      stack.pop_back();
      const Split split = find_split(cur.begin, cur.end, cur.key);
      if (split.feature < 0) {
        nodes[cur.node].value = split.leaf_value;
        continue;
      }
      const int mid = partition(cur.begin, cur.end, split);
      const int left = static_cast<int>(nodes.size());
      nodes.emplace_back();
      nodes.emplace_back();
      TreeNode& parent = nodes[cur.node];
      parent.feature = split.feature;
      parent.threshold = split.threshold;
      parent.left = left;
      parent.right = left + 1;
      parent.value = split.leaf_value;
      stack.push_back({left + 1, mid, cur.end, splitmix64(cur.key ^ kRightBranch)});
      stack.push_back({left, cur.begin, mid, splitmix64(cur.key ^ kLeftBranch)});
    }
    return Tree(std::move(nodes));
  }

 private:
  struct Split {
    int feature = -1;
    double threshold = 0.0;
    double leaf_value = 0.0;
  };

  // Every draw of the in-bag multiset becomes one slot; each feature keeps
  // its slots in ascending feature order so splits need no sorting.
  void assign_slots(const std::vector<std::uint32_t>& counts) {
    const Index n = data_.features.rows();
    const Index p = data_.features.cols();
    std::vector<int> first(n + 1, 0);
    for (Index i = 0; i < n; ++i) first[i + 1] = first[i] + static_cast<int>(counts[i]);
    const int m = first[n];
    slot_row_.assign(m, 0);
    y_.assign(m, 0.0);
    w_.assign(m, 0.0);
    wy_.assign(m, 0.0);
    for (Index i = 0; i < n; ++i) {
      for (int s = first[i]; s < first[i + 1]; ++s) {
        slot_row_[s] = static_cast<int>(i);
        y_[s] = data_.response[i];
        w_[s] = data_.case_weights[i];
        wy_[s] = w_[s] * y_[s];
      }
    }
    sorted_.assign(p, std::vector<int>());
    x_.assign(p, std::vector<double>(m));
    for (Index f = 0; f < p; ++f) {
      auto& order = sorted_[f];
      order.reserve(m);
      for (int row : row_order_[f]) {
        for (int s = first[row]; s < first[row + 1]; ++s) order.push_back(s);
      }
      for (int s = 0; s < m; ++s) x_[f][s] = data_.features(slot_row_[s], f);
    }
    goes_left_.assign(m, 0);
    buffer_.resize(m);
    feature_pool_.resize(p);
    std::iota(feature_pool_.begin(), feature_pool_.end(), 0);
  }

  Split find_split(int begin, int end, std::uint64_t key) {
    const auto& any = sorted_[0];
    double w_total = 0.0, wy_total = 0.0, wyy_total = 0.0;
    double y_min = y_[any[begin]], y_max = y_min;
    for (int k = begin; k < end; ++k) {
      const int s = any[k];
      w_total += w_[s];
      wy_total += wy_[s];
      wyy_total += wy_[s] * y_[s];
      y_min = std::min(y_min, y_[s]);
      y_max = std::max(y_max, y_[s]);
    }
    Split best;
    if (y_min == y_max) {
      best.leaf_value = y_min;
      return best;
    }
    best.leaf_value = std::clamp(wy_total / w_total, y_min, y_max);
    if (end - begin <= min_node_size_) return best;

    const double parent_score = wy_total * wy_total / w_total;
    double best_score = parent_score + 1e-12 * wyy_total;
    const int p = static_cast<int>(feature_pool_.size());
    std::iota(feature_pool_.begin(), feature_pool_.end(), 0);
    for (int j = 0; j < mtry_; ++j) {
      key = splitmix64(key);
      const int pick = j + static_cast<int>(key % static_cast<std::uint64_t>(p - j));
      std::swap(feature_pool_[j], feature_pool_[pick]);
      const int f = feature_pool_[j];
      const auto& order = sorted_[f];
      const auto& x = x_[f];
      double w_left = 0.0, wy_left = 0.0;
      for (int k = begin; k + 1 < end; ++k) {
        const int s = order[k];
        w_left += w_[s];
        wy_left += wy_[s];
        const double x_here = x[s];
        const double x_next = x[order[k + 1]];
        if (!(x_here < x_next)) continue;
        const double w_right = w_total - w_left;
        const double wy_right = wy_total - wy_left;
        const double score = wy_left * wy_left / w_left + wy_right * wy_right / w_right;
        if (score > best_score) {
          best_score = score;
          best.feature = f;
          double mid = x_here + 0.5 * (x_next - x_here);
          if (!(mid < x_next)) mid = x_here;
          best.threshold = mid;
        }
      }
    }
    return best;
  }

  int partition(int begin, int end, const Split& split) {
    const auto& x = x_[split.feature];
    for (int k = begin; k < end; ++k) {
      const int s = sorted_[0][k];
      goes_left_[s] = x[s] <= split.threshold ? 1 : 0;
    }
    int mid = begin;
    for (auto& order : sorted_) {
      int left = begin;
      int right = 0;
      for (int k = begin; k < end; ++k) {
        const int s = order[k];
        if (goes_left_[s]) {
          order[left++] = s;
        } else {
          buffer_[right++] = s;
        }
      }
      std::copy(buffer_.begin(), buffer_.begin() + right, order.begin() + left);
      mid = left;
    }
    return mid;
  }

  const TrainingSet& data_;
  const std::vector<std::vector<int>>& row_order_;
  int mtry_;
  int min_node_size_;

  std::vector<int> slot_row_;
  std::vector<double> y_, w_, wy_;
  std::vector<std::vector<int>> sorted_;
  std::vector<std::vector<double>> x_;
  std::vector<char> goes_left_;
  std::vector<int> buffer_;
  std::vector<int> feature_pool_;
};

}  // namespace

int resolved_mtry(const ForestConfig& cfg, Index num_features) {
  if (cfg.mtry) return *cfg.mtry;
  return std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(num_features)))));
}

std::size_t Tree::num_leaves() const {
  return static_cast<std::size_t>(
      std::count_if(nodes_.begin(), nodes_.end(), [](const TreeNode& n) { return n.is_leaf(); }));
}

Forest::Forest(std::vector<Tree> trees, Index num_features, Index num_train,
               std::vector<std::vector<std::uint32_t>> inbag_counts)
    : trees_(std::move(trees)),
      num_features_(num_features),
      num_train_(num_train),
      inbag_(std::move(inbag_counts)) {
  if (trees_.empty()) throw Error(ErrorKind::invalid_input, "forest needs at least one tree");
  for (const Tree& t : trees_) {
    if (t.nodes().empty()) throw Error(ErrorKind::invalid_input, "forest contains an empty tree");
  }
  if (!inbag_.empty()) {
    if (inbag_.size() != trees_.size()) {
      throw Error(ErrorKind::invalid_input, "in-bag bookkeeping does not match the number of trees");
    }
    for (const auto& counts : inbag_) {
      if (static_cast<Index>(counts.size()) != num_train_) {
        throw Error(ErrorKind::invalid_input, "in-bag bookkeeping does not match the training size");
      }
    }
  }
}

Forest fit_forest(const TrainingSet& data, const ForestConfig& cfg) {
  validate(data, cfg);
  const Index n = data.features.rows();
  const Index p = data.features.cols();
  const int mtry = resolved_mtry(cfg, p);

  std::vector<std::vector<int>> row_order(p, std::vector<int>(n));
  for (Index f = 0; f < p; ++f) {
    auto& order = row_order[f];
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return data.features(a, f) < data.features(b, f); });
  }
  const std::vector<double> weights(data.case_weights.begin(), data.case_weights.end());
  const auto draws = static_cast<Index>(std::ceil(cfg.sample_fraction * static_cast<double>(n)));

  const auto n_trees = static_cast<std::size_t>(cfg.n_trees);
  std::vector<Tree> trees(n_trees);
  std::vector<std::vector<std::uint32_t>> inbag(n_trees);
  parallel_for(n_trees, cfg.threads, [&](std::size_t t) {
    Rng rng(derive_seed(cfg.seed, kTreeStream, t));
    inbag[t] = draw_inbag(weights, draws, rng);
    TreeBuilder builder(data, row_order, mtry, cfg.min_node_size);
    trees[t] = builder.build(inbag[t], rng());
  });
  return Forest(std::move(trees), p, n, std::move(inbag));
}

Vector predict(const Forest& forest, const Matrix& features, int threads) {
  if (features.cols() != forest.num_features()) {
    throw Error(ErrorKind::invalid_input, "feature count " + std::to_string(features.cols()) +
                                              " does not match the forest's " +
                                              std::to_string(forest.num_features()));
  }
  const Index m = features.rows();
  Vector out(m);
  constexpr Index kChunk = 4096;
  const auto chunks = static_cast<std::size_t>((m + kChunk - 1) / kChunk);
  const double scale = 1.0 / static_cast<double>(forest.num_trees());
  parallel_for(chunks, threads, [&](std::size_t c) {
    const Index begin = static_cast<Index>(c) * kChunk;
    const Index end = std::min(m, begin + kChunk);
    for (Index i = begin; i < end; ++i) {
      double sum = 0.0;
      for (const Tree& tree : forest.trees()) sum += tree.predict(features, i);
      out[i] = sum * scale;
    }
  });
  return out;
}

Index OobPrediction::num_degenerate() const {
  return static_cast<Index>(std::count(degenerate.begin(), degenerate.end(), true));
}

OobPrediction oob_predict(const Forest& forest, const Matrix& features) {
  if (!forest.has_inbag()) {
    throw Error(ErrorKind::invalid_input, "forest carries no in-bag bookkeeping");
  }
  if (features.rows() != forest.num_train()) {
    throw Error(ErrorKind::invalid_input, "out-of-bag prediction needs the training rows");
  }
  if (features.cols() != forest.num_features()) {
    throw Error(ErrorKind::invalid_input, "feature count does not match the forest");
  }
  const Index n = features.rows();
  Vector sum = Vector::Zero(n);
  std::vector<int> used(n, 0);
  for (Index t = 0; t < forest.num_trees(); ++t) {
    const Tree& tree = forest.trees()[t];
    for (Index i = 0; i < n; ++i) {
      if (forest.inbag_count(t, i) != 0) continue;
      sum[i] += tree.predict(features, i);
      ++used[i];
    }
  }
  OobPrediction out;
  out.values.resize(n);
  out.degenerate.assign(n, false);
  for (Index i = 0; i < n; ++i) {
    if (used[i] > 0) {
      out.values[i] = sum[i] / used[i];
      continue;
    }
    double full = 0.0;
    for (const Tree& tree : forest.trees()) full += tree.predict(features, i);
    out.values[i] = full / static_cast<double>(forest.num_trees());
    out.degenerate[i] = true;
  }
  return out;
}

TuneResult tune_mtry(const TrainingSet& data, int folds, std::span<const int> candidates,
                     const ForestConfig& cfg) {
  const Index n = data.features.rows();
  const Index p = data.features.cols();
  if (folds < 2) throw Error(ErrorKind::invalid_input, "tune_mtry needs at least 2 folds");
  if (candidates.empty()) throw Error(ErrorKind::invalid_input, "tune_mtry needs at least one candidate");
  for (int c : candidates) {
    if (c < 1 || c > p) {
      throw Error(ErrorKind::invalid_input, "mtry candidate " + std::to_string(c) + " outside [1, " +
                                                std::to_string(p) + "]");
    }
  }
  if (data.response.size() != n || data.case_weights.size() != n) {
    throw Error(ErrorKind::invalid_input, "invalid input: features, response and case weights differ in length");
  }
  if (n / folds < 2) {
    throw Error(ErrorKind::insufficient_data, "insufficient data: a fold would hold fewer than 2 observations");
  }

  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(derive_seed(cfg.seed, kFoldStream));
  for (Index k = n - 1; k > 0; --k) {
    const auto j = static_cast<Index>(rng() % static_cast<std::uint64_t>(k + 1));
    std::swap(perm[k], perm[j]);
  }
  std::vector<int> fold_of(n);
  for (Index k = 0; k < n; ++k) fold_of[perm[k]] = static_cast<int>(k % folds);

  struct Fold {
    Matrix x_train, x_test;
    Vector y_train, w_train, y_test, w_test;
  };
  std::vector<Fold> split(folds);
  for (int f = 0; f < folds; ++f) {
    std::vector<Index> train, test;
    for (Index i = 0; i < n; ++i) (fold_of[i] == f ? test : train).push_back(i);
    Fold& fold = split[f];
    fold.x_train = data.features(train, Eigen::all);
    fold.y_train = data.response(train);
    fold.w_train = data.case_weights(train);
    fold.x_test = data.features(test, Eigen::all);
    fold.y_test = data.response(test);
    fold.w_test = data.case_weights(test);
  }

  TuneResult result;
  result.candidates.assign(candidates.begin(), candidates.end());
  const double total_weight = data.case_weights.sum();
  for (int c : candidates) {
    ForestConfig trial = cfg;
    trial.mtry = c;
    double err = 0.0;
    for (const Fold& fold : split) {
      const Forest forest = fit_forest({fold.x_train, fold.y_train, fold.w_train}, trial);
      const Vector pred = predict(forest, fold.x_test, cfg.threads);
      err += (fold.w_test.array() * (fold.y_test - pred).array().square()).sum();
    }
    result.cv_error.push_back(err / total_weight);
  }
  std::size_t best = 0;
  for (std::size_t k = 1; k < result.candidates.size(); ++k) {
    const double e = result.cv_error[k];
    const double e_best = result.cv_error[best];
    if (e < e_best || (e == e_best && result.candidates[k] < result.candidates[best])) best = k;
  }
  result.mtry = result.candidates[best];
  return result;
}

}  // namespace gmerf
