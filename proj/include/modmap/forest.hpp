#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "modmap/core.hpp"
#include "modmap/featurize.hpp"
#include "modmap/jsonl.hpp"
#include "modmap/rng.hpp"

namespace modmap {

// Dense row-major sample matrix.
class FeatureMatrix {
public:
    FeatureMatrix() = default;
    FeatureMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    void append_row(std::span<const double> values);

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

struct TrainingSet {
    FeatureLayout layout;
    std::vector<std::string> ids;
    FeatureMatrix features;
    std::vector<bool> labels;
    std::vector<double> weights;

    std::size_t size() const { return labels.size(); }

    // Unit weights. Throws InvalidArgument on length or layout mismatch.
    static TrainingSet from(const std::vector<FeatureVector>& features, const std::vector<bool>& labels);
};

// Per-sample weights N / (2 N_c). Throws DegenerateClassError if a class is absent.
std::vector<double> balanced_weights(const std::vector<bool>& labels);

// 1 - sum p_c^2 over weighted class counts. Throws InvalidArgument if all counts are zero.
double gini(std::span<const double> class_weights);

struct TreeNode {
    int feature = -1;  // -1 for leaves
    double threshold = 0.0;  // samples with value <= threshold go left
    int left = -1;
    int right = -1;
    double weight_neg = 0.0;
    double weight_pos = 0.0;

    bool is_leaf() const { return feature < 0; }
    double posterior() const { return weight_pos / (weight_neg + weight_pos); }
};

struct DecisionTree {
    std::vector<TreeNode> nodes;  // nodes[0] is the root
    std::optional<int> max_depth;

    const TreeNode& leaf_for(std::span<const double> values) const;
    double predict_score(std::span<const double> values) const { return leaf_for(values).posterior(); }
    int depth() const;
};

struct TreeParams {
    std::optional<int> max_depth;  // nullopt = grow until pure or unsplittable
    int features_per_split = 0;    // 0 or >= d means every feature
};

// CART with weighted Gini. Samples with weight 0 are ignored; weights may carry
// bootstrap multiplicities. Among sampled features, picks the (feature, midpoint
// threshold) with least weighted child impurity, preferring the lowest feature
// index and then the lowest threshold on ties, and only splits when impurity
// strictly decreases.
DecisionTree fit_tree(const FeatureMatrix& features, const std::vector<bool>& labels, std::span<const double> weights,
                      const TreeParams& params, Rng& rng);

struct ForestParams {
    int n_trees = 100;
    std::optional<int> max_depth;
    std::optional<int> features_per_split;  // default ceil(sqrt(d))
    bool bootstrap = true;
    bool balanced = true;
};

struct RandomForestModel {
    std::vector<DecisionTree> trees;
    ForestParams params;  // features_per_split resolved
    std::uint64_t seed = 0;
    FeatureLayout layout;
    ModalityId modality;
};

// Tree t draws from Rng(derive_seed(seed, t)), so results do not depend on threads.
RandomForestModel fit_forest(const TrainingSet& training, const ForestParams& params, std::uint64_t seed,
                             const ModalityId& modality = {}, int threads = 0);

struct Prediction {
    bool label = false;
    double score = 0.0;  // mean leaf positive posterior
};

Prediction predict(const RandomForestModel& model, std::span<const double> values);
// Throws InvalidArgument if the feature layout differs from the model's.
Prediction predict(const RandomForestModel& model, const FeatureVector& feature);

struct EvalResult {
    double accuracy = 0.0;
    double majority_baseline = 0.0;
    std::size_t n = 0;
    // confusion[actual][predicted], 0 = insolvable, 1 = solvable
    std::size_t confusion[2][2] = {{0, 0}, {0, 0}};
    bool majority_tie = false;
};

EvalResult evaluate_predictions(const std::vector<bool>& predicted, const std::vector<bool>& actual);
EvalResult evaluate(const RandomForestModel& model, const TrainingSet& eval_set);

struct GridPoint {
    int n_trees = 100;
    std::optional<int> max_depth;

    friend bool operator==(const GridPoint&, const GridPoint&) = default;
};

std::vector<GridPoint> default_grid();
// "n_trees=50,100;max_depth=2,4,none" -> cartesian product, n_trees major.
std::vector<GridPoint> parse_grid(const std::string& text);
OrderedJson grid_to_json(const std::vector<GridPoint>& grid);

struct LeaderboardRow {
    std::size_t grid_index = 0;
    GridPoint point;
    EvalResult validation;
};

struct GridSearchResult {
    RandomForestModel best;
    std::size_t best_index = 0;
    std::vector<LeaderboardRow> leaderboard;
};

// One forest per grid point, all with the same seed. Best = highest validation
// accuracy, then fewer trees, then smaller depth, then lower index.
// Throws LeakageError if train and validation share an id.
GridSearchResult grid_search(const TrainingSet& training, const TrainingSet& validation,
                             const std::vector<GridPoint>& grid, const ForestParams& base, std::uint64_t seed,
                             const ModalityId& modality = {}, int threads = 0);

void write_leaderboard_csv(const std::vector<LeaderboardRow>& rows, std::size_t best_index,
                           const std::string& modality, bool header, std::ostream& out);

OrderedJson model_to_json(const RandomForestModel& model);
RandomForestModel model_from_json(const Json& j);

}  // namespace modmap
