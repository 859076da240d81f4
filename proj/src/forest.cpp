#include "modmap/forest.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "modmap/error.hpp"
#include "modmap/parallel.hpp"
#include "modmap/text.hpp"

namespace modmap {

namespace {

// Impurity differences below this are treated as ties / no improvement.
constexpr double kImpurityEps = 1e-12;

double gini2(double neg, double pos)
{
    const double total = neg + pos;
    const double pn = neg / total;
    const double pp = pos / total;
    return 1.0 - pn * pn - pp * pp;
}

int ceil_sqrt(std::size_t d)
{
    std::size_t k = 1;
    while (k * k < d)
        ++k;
    return static_cast<int>(k);
}

class TreeBuilder {
public:
    TreeBuilder(const FeatureMatrix& x, const std::vector<bool>& y, std::span<const double> w,
                const TreeParams& params, Rng& rng)
        : x_(x), y_(y), w_(w), params_(params), rng_(rng), pool_(x.cols())
    {
    }

    DecisionTree build()
    {
        std::vector<std::size_t> samples;
        for (std::size_t i = 0; i < y_.size(); ++i)
            if (w_[i] > 0.0)
                samples.push_back(i);
        if (samples.empty())
            throw InvalidArgument("fit_tree needs at least one sample with positive weight");
        tree_.max_depth = params_.max_depth;
        grow(samples, 0);
        return std::move(tree_);
    }

private:
    struct Item {
        double x;
        double neg;
        double pos;
    };

    struct Split {
        int feature = -1;
        double threshold = 0.0;
        double impurity = std::numeric_limits<double>::infinity();
    };

    int grow(const std::vector<std::size_t>& samples, int depth)
    {
        double neg = 0.0, pos = 0.0;
        for (auto i : samples)
            (y_[i] ? pos : neg) += w_[i];

        const int id = static_cast<int>(tree_.nodes.size());
        TreeNode node;
        node.weight_neg = neg;
        node.weight_pos = pos;
        tree_.nodes.push_back(node);

        if ((params_.max_depth && depth >= *params_.max_depth) || neg == 0.0 || pos == 0.0)
            return id;

        const double parent = gini2(neg, pos);
        const Split best = best_split(samples, neg, pos);
        if (best.feature < 0 || !(best.impurity < parent - kImpurityEps))
            return id;

        std::vector<std::size_t> left, right;
        for (auto i : samples)
            (x_(i, best.feature) <= best.threshold ? left : right).push_back(i);

        const int l = grow(left, depth + 1);
        const int r = grow(right, depth + 1);
        auto& n = tree_.nodes[id];
        n.feature = best.feature;
        n.threshold = best.threshold;
        n.left = l;
        n.right = r;
        return id;
    }

    std::vector<int> sample_features()
    {
        const int d = static_cast<int>(x_.cols());
        std::iota(pool_.begin(), pool_.end(), 0);
        const int k = params_.features_per_split;
        if (k <= 0 || k >= d)
            return pool_;
        for (int i = 0; i < k; ++i) {
            const auto j = i + static_cast<int>(rng_.index(static_cast<std::uint64_t>(d - i)));
            std::swap(pool_[i], pool_[j]);
        }
        std::vector<int> chosen(pool_.begin(), pool_.begin() + k);
        std::sort(chosen.begin(), chosen.end());
        return chosen;
    }

    Split best_split(const std::vector<std::size_t>& samples, double neg, double pos)
    {
        Split best;
        const double total = neg + pos;
        for (int f : sample_features()) {
            items_.clear();
            for (auto i : samples)
                items_.push_back({x_(i, f), y_[i] ? 0.0 : w_[i], y_[i] ? w_[i] : 0.0});
            std::sort(items_.begin(), items_.end(), [](const Item& a, const Item& b) { return a.x < b.x; });

            double lneg = 0.0, lpos = 0.0;
            for (std::size_t i = 0; i + 1 < items_.size(); ++i) {
                lneg += items_[i].neg;
                lpos += items_[i].pos;
                const double a = items_[i].x;
                const double b = items_[i + 1].x;
                if (!(a < b))
                    continue;
                const double rneg = std::max(0.0, neg - lneg);
                const double rpos = std::max(0.0, pos - lpos);
                const double wl = lneg + lpos;
                const double wr = rneg + rpos;
                if (wl <= 0.0 || wr <= 0.0)
                    continue;
                const double impurity = (wl * gini2(lneg, lpos) + wr * gini2(rneg, rpos)) / total;
                if (impurity < best.impurity - kImpurityEps) {
                    double t = std::midpoint(a, b);
                    if (!(t < b))
                        t = a;
                    best = {f, t, impurity};
                }
            }
        }
        return best;
    }

    const FeatureMatrix& x_;
    const std::vector<bool>& y_;
    std::span<const double> w_;
    TreeParams params_;
    Rng& rng_;
    std::vector<int> pool_;
    std::vector<Item> items_;
    DecisionTree tree_;
};

}  // namespace

void FeatureMatrix::append_row(std::span<const double> values)
{
    if (rows_ == 0 && data_.empty())
        cols_ = values.size();
    if (values.size() != cols_)
        throw InvalidArgument("feature row width " + std::to_string(values.size()) + " != "
                              + std::to_string(cols_));
    data_.insert(data_.end(), values.begin(), values.end());
    ++rows_;
}

TrainingSet TrainingSet::from(const std::vector<FeatureVector>& features, const std::vector<bool>& labels)
{
    if (features.size() != labels.size())
        throw InvalidArgument("features and labels differ in length");
    TrainingSet ts;
    ts.labels = labels;
    ts.weights.assign(labels.size(), 1.0);
    if (!features.empty()) {
        ts.layout = features.front().layout;
        ts.features = FeatureMatrix(0, ts.layout.width());
    }
    for (const auto& fv : features) {
        if (!(fv.layout == ts.layout))
            throw InvalidArgument("mixed feature layouts in training set");
        ts.ids.push_back(fv.instance_id);
        ts.features.append_row(fv.values);
    }
    return ts;
}

std::vector<double> balanced_weights(const std::vector<bool>& labels)
{
    const auto n = labels.size();
    const auto n_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), true));
    const auto n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0)
        throw DegenerateClassError("balanced weights need both classes (got " + std::to_string(n_pos)
                                   + " positive, " + std::to_string(n_neg) + " negative)");
    const double w_pos = static_cast<double>(n) / (2.0 * static_cast<double>(n_pos));
    const double w_neg = static_cast<double>(n) / (2.0 * static_cast<double>(n_neg));
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i)
        w[i] = labels[i] ? w_pos : w_neg;
    return w;
}

double gini(std::span<const double> class_weights)
{
    double total = 0.0;
    for (double c : class_weights) {
        if (c < 0.0)
            throw InvalidArgument("class weights must be non-negative");
        total += c;
    }
    if (total <= 0.0)
        throw InvalidArgument("gini of an empty node");
    double sum_sq = 0.0;
    for (double c : class_weights)
        sum_sq += (c / total) * (c / total);
    return 1.0 - sum_sq;
}

const TreeNode& DecisionTree::leaf_for(std::span<const double> values) const
{
    const TreeNode* n = &nodes.front();
    while (!n->is_leaf())
        n = &nodes[values[n->feature] <= n->threshold ? n->left : n->right];
    return *n;
}

int DecisionTree::depth() const
{
    std::vector<int> d(nodes.size(), 0);
    int deepest = 0;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        deepest = std::max(deepest, d[i]);
        if (!nodes[i].is_leaf()) {
            d[nodes[i].left] = d[i] + 1;
            d[nodes[i].right] = d[i] + 1;
        }
    }
    return deepest;
}

DecisionTree fit_tree(const FeatureMatrix& features, const std::vector<bool>& labels, std::span<const double> weights,
                      const TreeParams& params, Rng& rng)
{
    if (features.rows() != labels.size() || weights.size() != labels.size())
        throw InvalidArgument("fit_tree inputs differ in length");
    return TreeBuilder(features, labels, weights, params, rng).build();
}

RandomForestModel fit_forest(const TrainingSet& training, const ForestParams& params, std::uint64_t seed,
                             const ModalityId& modality, int threads)
{
    const std::size_t n = training.size();
    if (n == 0)
        throw InvalidArgument("cannot fit a forest on an empty training set");
    if (params.n_trees < 1)
        throw InvalidArgument("n_trees must be positive");
    if (training.weights.size() != n || training.features.rows() != n)
        throw InvalidArgument("training set columns differ in length");

    std::vector<double> base = training.weights;
    if (params.balanced) {
        const auto bw = balanced_weights(training.labels);
        for (std::size_t i = 0; i < n; ++i)
            base[i] *= bw[i];
    }

    RandomForestModel model;
    model.params = params;
    const int d = static_cast<int>(training.features.cols());
    model.params.features_per_split = std::clamp(params.features_per_split.value_or(ceil_sqrt(d)), 1, std::max(d, 1));
    model.seed = seed;
    model.layout = training.layout;
    model.modality = modality;
    model.trees.resize(static_cast<std::size_t>(params.n_trees));

    const TreeParams tree_params{params.max_depth, *model.params.features_per_split};
    parallel_for(
        model.trees.size(),
        [&](std::size_t t) {
            Rng rng(derive_seed(seed, t));
            std::vector<double> w = base;
            if (params.bootstrap) {
                std::vector<double> counts(n, 0.0);
                for (std::size_t k = 0; k < n; ++k)
                    counts[rng.index(n)] += 1.0;
                for (std::size_t i = 0; i < n; ++i)
                    w[i] *= counts[i];
            }
            model.trees[t] = fit_tree(training.features, training.labels, w, tree_params, rng);
        },
        threads);
    return model;
}

Prediction predict(const RandomForestModel& model, std::span<const double> values)
{
    if (values.size() != model.layout.width())
        throw InvalidArgument("feature width " + std::to_string(values.size()) + " does not match model width "
                              + std::to_string(model.layout.width()));
    double sum = 0.0;
    for (const auto& tree : model.trees)
        sum += tree.predict_score(values);
    Prediction p;
    p.score = sum / static_cast<double>(model.trees.size());
    p.label = p.score >= 0.5;
    return p;
}

Prediction predict(const RandomForestModel& model, const FeatureVector& feature)
{
    if (!(feature.layout == model.layout))
        throw InvalidArgument("feature layout '" + std::string(to_string(feature.layout.variant))
                              + "' does not match model layout '" + std::string(to_string(model.layout.variant))
                              + "'");
    return predict(model, std::span<const double>(feature.values));
}

EvalResult evaluate_predictions(const std::vector<bool>& predicted, const std::vector<bool>& actual)
{
    if (predicted.size() != actual.size())
        throw InvalidArgument("prediction and label counts differ");
    if (actual.empty())
        throw InvalidArgument("cannot evaluate on an empty set");
    EvalResult r;
    r.n = actual.size();
    std::size_t correct = 0, n_pos = 0;
    for (std::size_t i = 0; i < r.n; ++i) {
        ++r.confusion[actual[i]][predicted[i]];
        correct += (actual[i] == predicted[i]);
        n_pos += actual[i];
    }
    const std::size_t n_neg = r.n - n_pos;
    r.accuracy = static_cast<double>(correct) / static_cast<double>(r.n);
    r.majority_tie = n_pos == n_neg;
    r.majority_baseline = r.majority_tie ? 0.5 : static_cast<double>(std::max(n_pos, n_neg)) / static_cast<double>(r.n);
    return r;
}

EvalResult evaluate(const RandomForestModel& model, const TrainingSet& eval_set)
{
    if (eval_set.size() == 0)
        throw InvalidArgument("cannot evaluate on an empty set");
    if (!(eval_set.layout == model.layout))
        throw InvalidArgument("evaluation set layout does not match the model");
    std::vector<bool> predicted(eval_set.size());
    for (std::size_t i = 0; i < eval_set.size(); ++i)
        predicted[i] = predict(model, eval_set.features.row(i)).label;
    return evaluate_predictions(predicted, eval_set.labels);
}

std::vector<GridPoint> default_grid()
{
    std::vector<GridPoint> grid;
    for (int trees : {50, 100, 200, 400})
        for (std::optional<int> depth : {std::optional<int>(2), std::optional<int>(4), std::optional<int>(8),
                                         std::optional<int>(16), std::optional<int>()})
            grid.push_back({trees, depth});
    return grid;
}

std::vector<GridPoint> parse_grid(const std::string& text)
{
    std::vector<int> trees;
    std::vector<std::optional<int>> depths;
    std::stringstream ss(text);
    std::string part;
    auto parse_int = [&](const std::string& v) {
        try {
            std::size_t pos = 0;
            int x = std::stoi(v, &pos);
            if (pos != v.size() || x < 0)
                throw std::invalid_argument(v);
            return x;
        } catch (const std::exception&) {
            throw ConfigError("bad grid value '" + v + "' in '" + text + "'");
        }
    };
    while (std::getline(ss, part, ';')) {
        auto eq = part.find('=');
        if (eq == std::string::npos)
            throw ConfigError("grid axis must look like name=v1,v2: '" + part + "'");
        const auto name = part.substr(0, eq);
        std::stringstream vs(part.substr(eq + 1));
        std::string v;
        while (std::getline(vs, v, ',')) {
            if (name == "n_trees") {
                int t = parse_int(v);
                if (t < 1)
                    throw ConfigError("n_trees must be positive");
                trees.push_back(t);
            } else if (name == "max_depth") {
                if (v == "none" || v == "inf")
                    depths.emplace_back();
                else
                    depths.emplace_back(parse_int(v));
            } else {
                throw ConfigError("unknown grid axis '" + name + "'");
            }
        }
    }
    if (trees.empty())
        trees = {100};
    if (depths.empty())
        depths = {std::nullopt};
    std::vector<GridPoint> grid;
    for (int t : trees)
        for (auto d : depths)
            grid.push_back({t, d});
    return grid;
}

OrderedJson grid_to_json(const std::vector<GridPoint>& grid)
{
    OrderedJson arr = OrderedJson::array();
    for (const auto& g : grid) {
        OrderedJson j;
        j["n_trees"] = g.n_trees;
        j["max_depth"] = g.max_depth ? OrderedJson(*g.max_depth) : OrderedJson(nullptr);
        arr.push_back(j);
    }
    return arr;
}

GridSearchResult grid_search(const TrainingSet& training, const TrainingSet& validation,
                             const std::vector<GridPoint>& grid, const ForestParams& base, std::uint64_t seed,
                             const ModalityId& modality, int threads)
{
    if (grid.empty())
        throw InvalidArgument("empty hyperparameter grid");
    const std::set<std::string> train_ids(training.ids.begin(), training.ids.end());
    for (const auto& id : validation.ids)
        if (train_ids.count(id))
            throw LeakageError("instance '" + id + "' appears in both training and validation sets");

    auto depth_key = [](const std::optional<int>& d) { return d ? *d : std::numeric_limits<int>::max(); };

    GridSearchResult result;
    bool have_best = false;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        ForestParams params = base;
        params.n_trees = grid[i].n_trees;
        params.max_depth = grid[i].max_depth;
        auto model = fit_forest(training, params, seed, modality, threads);
        const auto eval = evaluate(model, validation);
        result.leaderboard.push_back({i, grid[i], eval});

        bool better = !have_best;
        if (have_best) {
            const auto& cur = result.leaderboard[result.best_index];
            if (eval.accuracy != cur.validation.accuracy)
                better = eval.accuracy > cur.validation.accuracy;
            else if (grid[i].n_trees != cur.point.n_trees)
                better = grid[i].n_trees < cur.point.n_trees;
            else
                better = depth_key(grid[i].max_depth) < depth_key(cur.point.max_depth);
        }
        if (better) {
            result.best = std::move(model);
            result.best_index = i;
            have_best = true;
        }
    }
    return result;
}

void write_leaderboard_csv(const std::vector<LeaderboardRow>& rows, std::size_t best_index,
                           const std::string& modality, bool header, std::ostream& out)
{
    if (header)
        out << "modality,grid_index,n_trees,max_depth,val_accuracy,val_majority_baseline,val_n,selected\n";
    for (const auto& r : rows) {
        out << csv_field(modality) << ',' << r.grid_index << ',' << r.point.n_trees << ','
            << (r.point.max_depth ? std::to_string(*r.point.max_depth) : "none") << ','
            << format_double(r.validation.accuracy) << ',' << format_double(r.validation.majority_baseline) << ','
            << r.validation.n << ',' << (r.grid_index == best_index ? 1 : 0) << '\n';
    }
}

OrderedJson model_to_json(const RandomForestModel& model)
{
    OrderedJson j;
    j["format"] = "modmap.random_forest";
    j["modality"] = {{"index", model.modality.index}, {"name", model.modality.name}};
    j["layout"] = layout_to_json(model.layout);
    OrderedJson hp;
    hp["n_trees"] = model.params.n_trees;
    hp["max_depth"] = model.params.max_depth ? OrderedJson(*model.params.max_depth) : OrderedJson(nullptr);
    hp["features_per_split"] = model.params.features_per_split.value_or(0);
    hp["bootstrap"] = model.params.bootstrap;
    hp["balanced"] = model.params.balanced;
    j["hyperparams"] = hp;
    j["seed"] = model.seed;
    OrderedJson trees = OrderedJson::array();
    for (const auto& t : model.trees) {
        OrderedJson tj;
        std::vector<int> feature, left, right;
        std::vector<double> threshold, wneg, wpos;
        for (const auto& n : t.nodes) {
            feature.push_back(n.feature);
            threshold.push_back(n.threshold);
            left.push_back(n.left);
            right.push_back(n.right);
            wneg.push_back(n.weight_neg);
            wpos.push_back(n.weight_pos);
        }
        tj["feature"] = feature;
        tj["threshold"] = threshold;
        tj["left"] = left;
        tj["right"] = right;
        tj["weight_neg"] = wneg;
        tj["weight_pos"] = wpos;
        trees.push_back(std::move(tj));
    }
    j["trees"] = std::move(trees);
    return j;
}

RandomForestModel model_from_json(const Json& j)
{
    RandomForestModel m;
    try {
        if (j.at("format").get<std::string>() != "modmap.random_forest")
            throw ValidationError("not a random forest model file");
        m.modality.index = j.at("modality").at("index").get<int>();
        m.modality.name = j.at("modality").at("name").get<std::string>();
        m.layout = layout_from_json(j.at("layout"));
        const auto& hp = j.at("hyperparams");
        m.params.n_trees = hp.at("n_trees").get<int>();
        if (!hp.at("max_depth").is_null())
            m.params.max_depth = hp.at("max_depth").get<int>();
        m.params.features_per_split = hp.at("features_per_split").get<int>();
        m.params.bootstrap = hp.at("bootstrap").get<bool>();
        m.params.balanced = hp.at("balanced").get<bool>();
        m.seed = j.at("seed").get<std::uint64_t>();
        for (const auto& tj : j.at("trees")) {
            DecisionTree t;
            t.max_depth = m.params.max_depth;
            const auto feature = tj.at("feature").get<std::vector<int>>();
            const auto threshold = tj.at("threshold").get<std::vector<double>>();
            const auto left = tj.at("left").get<std::vector<int>>();
            const auto right = tj.at("right").get<std::vector<int>>();
            const auto wneg = tj.at("weight_neg").get<std::vector<double>>();
            const auto wpos = tj.at("weight_pos").get<std::vector<double>>();
            const auto n = feature.size();
            if (n == 0 || threshold.size() != n || left.size() != n || right.size() != n || wneg.size() != n
                || wpos.size() != n)
                throw ValidationError("tree node arrays differ in length");
            for (std::size_t i = 0; i < n; ++i) {
                TreeNode node{feature[i], threshold[i], left[i], right[i], wneg[i], wpos[i]};
                if (!node.is_leaf()
                    && (node.left <= static_cast<int>(i) || node.right <= static_cast<int>(i)
                        || node.left >= static_cast<int>(n) || node.right >= static_cast<int>(n)
                        || node.feature >= static_cast<int>(m.layout.width())))
                    throw ValidationError("tree node " + std::to_string(i) + " is malformed");
                t.nodes.push_back(node);
            }
            m.trees.push_back(std::move(t));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed model file: ") + e.what());
    }
    if (static_cast<int>(m.trees.size()) != m.params.n_trees)
        throw ValidationError("model declares " + std::to_string(m.params.n_trees) + " trees but stores "
                              + std::to_string(m.trees.size()));
    return m;
}

}  // namespace modmap
