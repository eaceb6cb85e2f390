#include "modwt/ps.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <unordered_map>

#include "modwt/error.hpp"
#include "modwt/rng.hpp"

namespace modwt {

void BoostConfig::validate() const {
  if (n_trees < 1) throw InputError("boost: n_trees must be positive");
  if (interaction_depth < 1) throw InputError("boost: interaction_depth must be positive");
  if (!(shrinkage > 0.0 && shrinkage <= 1.0)) throw InputError("boost: shrinkage must lie in (0,1]");
  if (!(bag_fraction > 0.0 && bag_fraction <= 1.0)) throw InputError("boost: bag_fraction must lie in (0,1]");
  if (!(min_node_weight >= 0.0)) throw InputError("boost: min_node_weight must be nonnegative");
  if (eval_stride < 1) throw InputError("boost: eval_stride must be positive");
  if (max_bins < 2 || max_bins > 65535) throw InputError("boost: max_bins must lie in [2, 65535]");
}

BoostConfig BoostConfig::from_json(const nlohmann::json& j, BoostConfig c) {
  try {
    c.n_trees = j.value("n_trees", c.n_trees);
    c.interaction_depth = j.value("interaction_depth", c.interaction_depth);
    c.shrinkage = j.value("shrinkage", c.shrinkage);
    c.bag_fraction = j.value("bag_fraction", c.bag_fraction);
    c.min_node_weight = j.value("min_node_weight", c.min_node_weight);
    c.eval_stride = j.value("eval_stride", c.eval_stride);
    c.max_bins = j.value("max_bins", c.max_bins);
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("stop_method")) {
      const auto s = j.at("stop_method").get<std::string>();
      if (s == "ks_max" || s == "ks.max") c.stop_method = StopMethod::ks_max;
      else if (s == "es_max" || s == "es.max") c.stop_method = StopMethod::es_max;
      else throw InputError("boost: unknown stop_method '" + s + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("boost: ") + e.what());
  }
  c.validate();
  return c;
}

BoostConfig BoostConfig::from_json(const nlohmann::json& j) { return from_json(j, BoostConfig{}); }

nlohmann::json BoostConfig::to_json() const {
  return {{"n_trees", n_trees},
          {"interaction_depth", interaction_depth},
          {"shrinkage", shrinkage},
          {"bag_fraction", bag_fraction},
          {"min_node_weight", min_node_weight},
          {"stop_method", stop_method == StopMethod::ks_max ? "ks_max" : "es_max"},
          {"eval_stride", eval_stride},
          {"seed", seed},
          {"max_bins", max_bins}};
}

int RegressionTree::depth() const {
  std::function<int(int)> rec = [&](int k) -> int {
    if (nodes[k].feature < 0) return 0;
    return 1 + std::max(rec(nodes[k].left), rec(nodes[k].right));
  };
  return nodes.empty() ? 0 : rec(0);
}

Eigen::VectorXd BoostedModel::score(const Eigen::MatrixXd& x, int iteration) const {
  if (iteration < 0 || iteration > iterations()) throw InputError("boost: iteration out of range");
  Eigen::VectorXd f = Eigen::VectorXd::Constant(x.rows(), initial_score_);
  for (int m = 0; m < iteration; ++m) {
    const auto& tree = trees_[m];
    for (Eigen::Index i = 0; i < x.rows(); ++i) f(i) += shrinkage_ * tree.predict(x.row(i));
  }
  return f;
}

namespace {

double expit(double f) { return f >= 0 ? 1.0 / (1.0 + std::exp(-f)) : std::exp(f) / (1.0 + std::exp(f)); }

double clamp_p(double p) { return std::clamp(p, kPropensityClamp, 1.0 - kPropensityClamp); }

// log(1 + e^f), stable for large |f|
double softplus(double f) { return f > 0 ? f + std::log1p(std::exp(-f)) : std::log1p(std::exp(f)); }

}  // namespace

Eigen::VectorXd BoostedModel::propensity(const Eigen::MatrixXd& x, int iteration) const {
  Eigen::VectorXd f = score(x, iteration);
  for (Eigen::Index i = 0; i < f.size(); ++i) f(i) = clamp_p(expit(f(i)));
  return f;
}

namespace {

// Column-wise bins: each bin is a contiguous run of sorted distinct values,
// identified by its largest value.
struct BinnedDesign {
  std::size_t n = 0;
  std::size_t p = 0;
  std::vector<std::uint16_t> codes;           // row-major n x p
  std::vector<std::vector<double>> upper;     // per column, ascending bin upper edges
  std::vector<std::size_t> offset;            // histogram offset per column
  std::size_t total_bins = 0;
};

BinnedDesign bin_design(const Eigen::MatrixXd& x, int max_bins) {
  BinnedDesign b;
  b.n = static_cast<std::size_t>(x.rows());
  b.p = static_cast<std::size_t>(x.cols());
  b.codes.resize(b.n * b.p);
  for (std::size_t j = 0; j < b.p; ++j) {
    std::vector<double> sorted(b.n);
    for (std::size_t i = 0; i < b.n; ++i) sorted[i] = x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> distinct;
    std::unique_copy(sorted.begin(), sorted.end(), std::back_inserter(distinct));
    std::vector<double> edges;
    if (distinct.size() <= static_cast<std::size_t>(max_bins)) {
      edges = distinct;
    } else {
      for (int k = 1; k <= max_bins; ++k) {
        const auto pos = std::min(b.n - 1, (static_cast<std::size_t>(k) * b.n) / static_cast<std::size_t>(max_bins));
        const double v = k == max_bins ? sorted.back() : sorted[pos == 0 ? 0 : pos - 1];
        if (edges.empty() || v > edges.back()) edges.push_back(v);
      }
    }
    for (std::size_t i = 0; i < b.n; ++i) {
      const double v = x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      b.codes[i * b.p + j] = static_cast<std::uint16_t>(std::lower_bound(edges.begin(), edges.end(), v) - edges.begin());
    }
    b.offset.push_back(b.total_bins);
    b.total_bins += edges.size();
    b.upper.push_back(std::move(edges));
  }
  return b;
}

struct Histogram {
  std::vector<double> g;  // sum of w * residual
  std::vector<double> h;  // sum of w
  std::vector<std::int64_t> count;
};

struct SplitChoice {
  double gain = 0.0;
  int feature = -1;
  int bin = -1;
};

struct GrowLeaf {
  int node = 0;
  int depth = 0;
  std::uint64_t path = 0;  // encodes the root split and side for depth-1 nodes
  std::vector<std::uint32_t> rows;
  Histogram hist;
  double g = 0.0;
  double h = 0.0;
  SplitChoice best;
};

// Without bagging, the row set of the root and of each root child depends
// only on the split, so their weight and count histograms are cached and
// per-tree work reduces to accumulating gradients.
class TreeGrower {
 public:
  TreeGrower(const BinnedDesign& design, double min_node_weight, int max_splits, bool cache_static)
      : d_(design), min_w_(min_node_weight), max_splits_(max_splits), cache_static_(cache_static) {}

  // Grows a tree on `rows` using gradients g and weights h; returns the
  // tree plus the rows of each leaf keyed by node index.
  RegressionTree grow(std::vector<std::uint32_t> rows, std::span<const double> g, std::span<const double> h,
                      std::vector<std::pair<int, std::vector<std::uint32_t>>>& leaves_out) {
    RegressionTree tree;
    tree.nodes.push_back(TreeNode{});
    std::vector<GrowLeaf> leaves;
    GrowLeaf root;
    root.rows = std::move(rows);
    build(root, g, h);
    leaves.push_back(std::move(root));

    for (int s = 0; s < max_splits_; ++s) {
      int pick = -1;
      for (int k = 0; k < static_cast<int>(leaves.size()); ++k)
        if (leaves[k].best.feature >= 0 && (pick < 0 || leaves[k].best.gain > leaves[pick].best.gain)) pick = k;
      if (pick < 0) break;

      GrowLeaf parent = std::move(leaves[pick]);
      leaves.erase(leaves.begin() + pick);
      const auto feat = static_cast<std::size_t>(parent.best.feature);
      const auto bin = static_cast<std::uint16_t>(parent.best.bin);

      GrowLeaf left, right;
      for (auto i : parent.rows) (d_.codes[i * d_.p + feat] <= bin ? left.rows : right.rows).push_back(i);

      const int left_id = static_cast<int>(tree.nodes.size());
      tree.nodes.push_back(TreeNode{});
      tree.nodes.push_back(TreeNode{});
      auto& pn = tree.nodes[parent.node];
      pn.feature = parent.best.feature;
      pn.threshold = d_.upper[feat][bin];
      pn.left = left_id;
      pn.right = left_id + 1;
      left.node = left_id;
      right.node = left_id + 1;
      left.depth = right.depth = parent.depth + 1;
      const std::uint64_t key = (static_cast<std::uint64_t>(feat) << 17) | (static_cast<std::uint64_t>(bin) << 1);
      left.path = key;
      right.path = key | 1u;

      if (s + 1 < max_splits_) {
        // smaller child by direct accumulation, sibling by subtraction
        GrowLeaf& small = left.rows.size() <= right.rows.size() ? left : right;
        GrowLeaf& large = &small == &left ? right : left;
        build(small, g, h);
        large.hist = std::move(parent.hist);
        for (std::size_t b = 0; b < d_.total_bins; ++b) large.hist.g[b] -= small.hist.g[b];
        if (const Histogram* cached = lookup(large)) {
          large.hist.h = cached->h;
          large.hist.count = cached->count;
        } else {
          for (std::size_t b = 0; b < d_.total_bins; ++b) {
            large.hist.h[b] -= small.hist.h[b];
            large.hist.count[b] -= small.hist.count[b];
          }
          store(large);
        }
        large.g = parent.g - small.g;
        large.h = parent.h - small.h;
        large.best = find_split(large.hist, large.g, large.h);
      }
      leaves.push_back(std::move(left));
      leaves.push_back(std::move(right));
    }

    leaves_out.clear();
    for (auto& l : leaves) leaves_out.emplace_back(l.node, std::move(l.rows));
    return tree;
  }

 private:
  bool cacheable(const GrowLeaf& leaf) const { return cache_static_ && leaf.depth <= 1; }

  const Histogram* lookup(const GrowLeaf& leaf) const {
    if (!cacheable(leaf)) return nullptr;
    if (leaf.depth == 0) return root_cache_ ? &*root_cache_ : nullptr;
    auto it = child_cache_.find(leaf.path);
    return it == child_cache_.end() ? nullptr : &it->second;
  }

  void store(const GrowLeaf& leaf) {
    if (!cacheable(leaf)) return;
    Histogram copy{{}, leaf.hist.h, leaf.hist.count};
    if (leaf.depth == 0) root_cache_ = std::move(copy);
    else child_cache_.emplace(leaf.path, std::move(copy));
  }

  void build(GrowLeaf& leaf, std::span<const double> g, std::span<const double> h) {
    leaf.hist.g.assign(d_.total_bins, 0.0);
    leaf.g = 0.0;
    leaf.h = 0.0;
    const Histogram* cached = lookup(leaf);
    if (cached) {
      leaf.hist.h = cached->h;
      leaf.hist.count = cached->count;
      for (auto i : leaf.rows) {
        const double gi = g[i];
        leaf.g += gi;
        leaf.h += h[i];
        const std::uint16_t* code = &d_.codes[i * d_.p];
        for (std::size_t j = 0; j < d_.p; ++j) leaf.hist.g[d_.offset[j] + code[j]] += gi;
      }
    } else {
      leaf.hist.h.assign(d_.total_bins, 0.0);
      leaf.hist.count.assign(d_.total_bins, 0);
      for (auto i : leaf.rows) {
        const double gi = g[i], hi = h[i];
        leaf.g += gi;
        leaf.h += hi;
        const std::uint16_t* code = &d_.codes[i * d_.p];
        for (std::size_t j = 0; j < d_.p; ++j) {
          const auto b = d_.offset[j] + code[j];
          leaf.hist.g[b] += gi;
          leaf.hist.h[b] += hi;
          ++leaf.hist.count[b];
        }
      }
      store(leaf);
    }
    leaf.best = find_split(leaf.hist, leaf.g, leaf.h);
  }

  // Weighted variance reduction; strict improvement keeps the lowest
  // column index, then the lowest threshold, on ties.
  SplitChoice find_split(const Histogram& hist, double g_total, double h_total) const {
    SplitChoice best;
    if (h_total <= 0.0) return best;
    const double parent_term = g_total * g_total / h_total;
    for (std::size_t j = 0; j < d_.p; ++j) {
      const std::size_t nb = d_.upper[j].size();
      double gl = 0.0, hl = 0.0;
      std::int64_t cl = 0, ctot = 0;
      for (std::size_t b = 0; b < nb; ++b) ctot += hist.count[d_.offset[j] + b];
      for (std::size_t b = 0; b + 1 < nb; ++b) {
        const auto k = d_.offset[j] + b;
        gl += hist.g[k];
        hl += hist.h[k];
        cl += hist.count[k];
        const double gr = g_total - gl, hr = h_total - hl;
        if (cl == 0 || cl == ctot) continue;
        if (hl < min_w_ || hr < min_w_ || hl <= 0.0 || hr <= 0.0) continue;
        const double gain = gl * gl / hl + gr * gr / hr - parent_term;
        if (gain > best.gain) best = {gain, static_cast<int>(j), static_cast<int>(b)};
      }
    }
    return best;
  }

  const BinnedDesign& d_;
  double min_w_;
  int max_splits_;
  bool cache_static_;
  std::optional<Histogram> root_cache_;
  std::unordered_map<std::uint64_t, Histogram> child_cache_;
};

double bernoulli_deviance(std::span<const double> f, std::span<const std::uint8_t> y, std::span<const double> w) {
  double dev = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) dev += w[i] * (softplus(f[i]) - y[i] * f[i]);
  return 2.0 * dev;
}

}  // namespace

BoostedModel fit_boosted_propensity(const DesignMatrix& design, std::span<const std::uint8_t> treatment,
                                    std::span<const double> sample_weights, const BoostConfig& cfg) {
  cfg.validate();
  const auto n = static_cast<std::size_t>(design.rows());
  if (treatment.size() != n || sample_weights.size() != n)
    throw InputError("boost: design, treatment and weights differ in length");

  // Mean-normalized weights make every step invariant to weight scale.
  const double wsum = std::accumulate(sample_weights.begin(), sample_weights.end(), 0.0);
  std::vector<double> w(n);
  double w1 = 0.0, w0 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = sample_weights[i] * static_cast<double>(n) / wsum;
    (treatment[i] ? w1 : w0) += w[i];
  }
  if (w1 <= 0.0 || w0 <= 0.0) throw StatisticalError("boost: treatment vector has a single class");

  const double f0 = std::log(w1 / w0);
  const auto binned = bin_design(design.values, cfg.max_bins);
  const bool bagging = cfg.bag_fraction < 1.0;
  TreeGrower grower(binned, cfg.min_node_weight, cfg.interaction_depth, !bagging);

  std::vector<double> f(n, f0), g(n), p(n);
  std::vector<RegressionTree> trees;
  trees.reserve(static_cast<std::size_t>(cfg.n_trees));

  std::mt19937_64 bag_rng(cfg.seed);
  const auto bag_size = std::max<std::size_t>(2, static_cast<std::size_t>(std::floor(cfg.bag_fraction * static_cast<double>(n))));
  std::vector<std::uint32_t> all_rows(n);
  std::iota(all_rows.begin(), all_rows.end(), 0u);
  std::vector<std::pair<int, std::vector<std::uint32_t>>> leaves;

  for (int m = 0; m < cfg.n_trees; ++m) {
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = expit(f[i]);
      g[i] = w[i] * (treatment[i] - p[i]);
    }
    std::vector<std::uint32_t> rows = all_rows;
    if (bagging) {
      std::shuffle(rows.begin(), rows.end(), bag_rng);
      rows.resize(std::min(bag_size, n));
      std::sort(rows.begin(), rows.end());
    }
    RegressionTree tree = grower.grow(std::move(rows), g, w, leaves);

    // Newton step per leaf for the Bernoulli loss.
    for (const auto& [node, members] : leaves) {
      double num = 0.0, den = 0.0, hw = 0.0;
      for (auto i : members) {
        num += g[i];
        den += w[i] * p[i] * (1.0 - p[i]);
        hw += w[i];
      }
      tree.nodes[node].value = den > 1e-12 * hw ? num / den : 0.0;
    }
    if (bagging) {
      for (std::size_t i = 0; i < n; ++i) {
        int k = 0;
        const std::uint16_t* code = &binned.codes[i * binned.p];
        while (tree.nodes[k].feature >= 0) {
          const auto& nd = tree.nodes[k];
          const auto feat = static_cast<std::size_t>(nd.feature);
          k = binned.upper[feat][code[feat]] <= nd.threshold ? nd.left : nd.right;
        }
        f[i] += cfg.shrinkage * tree.nodes[k].value;
      }
    } else {
      for (const auto& [node, members] : leaves) {
        const double step = cfg.shrinkage * tree.nodes[node].value;
        for (auto i : members) f[i] += step;
      }
    }
    trees.push_back(std::move(tree));
  }
  return BoostedModel(f0, cfg.shrinkage, std::move(trees));
}

std::vector<double> deviance_path(const BoostedModel& model, const DesignMatrix& design,
                                  std::span<const std::uint8_t> treatment, std::span<const double> sample_weights) {
  const auto n = static_cast<std::size_t>(design.rows());
  const double wsum = std::accumulate(sample_weights.begin(), sample_weights.end(), 0.0);
  std::vector<double> w(n), f(n, model.initial_score());
  for (std::size_t i = 0; i < n; ++i) w[i] = sample_weights[i] * static_cast<double>(n) / wsum;
  std::vector<double> out{bernoulli_deviance(f, treatment, w)};
  for (const auto& tree : model.trees()) {
    for (std::size_t i = 0; i < n; ++i) f[i] += model.shrinkage() * tree.predict(design.values.row(static_cast<Eigen::Index>(i)));
    out.push_back(bernoulli_deviance(f, treatment, w));
  }
  return out;
}

std::vector<double> ate_weights(std::span<const double> propensity, std::span<const std::uint8_t> treatment) {
  std::vector<double> w(propensity.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double p = clamp_p(propensity[i]);
    w[i] = treatment[i] ? 1.0 / p : 1.0 / (1.0 - p);
  }
  return w;
}

double effective_sample_size(std::span<const double> w, std::span<const std::uint8_t> t, int arm) {
  double s = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i)
    if (t[i] == arm) {
      s += w[i];
      s2 += w[i] * w[i];
    }
  return s2 > 0.0 ? s * s / s2 : 0.0;
}

namespace {

std::vector<double> composite_at(const Eigen::VectorXd& propensity, std::span<const std::uint8_t> t,
                                 std::span<const double> survey) {
  std::vector<double> p(propensity.data(), propensity.data() + propensity.size());
  auto w = ate_weights(p, t);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] *= survey[i];
  return w;
}

}  // namespace

Criterion evaluate_criterion(const BoostedModel& model, int iteration, const DesignMatrix& design,
                             const BalanceColumns& balance, std::span<const std::uint8_t> treatment,
                             std::span<const double> sample_weights) {
  const auto w = composite_at(model.propensity(design.values, iteration), treatment, sample_weights);
  return balance_criterion_serial(balance, treatment, w);
}

IterationSelection select_iteration(int n_iterations, int stride, const std::function<double(int)>& criterion) {
  if (n_iterations < 0 || stride < 1) throw InputError("select_iteration: bad arguments");
  std::vector<std::pair<int, double>> seen;
  auto eval = [&](int it) {
    for (const auto& [k, v] : seen)
      if (k == it) return;
    seen.emplace_back(it, criterion(it));
  };
  for (int it = 0; it < n_iterations; it += stride) eval(it);
  eval(n_iterations);

  auto argmin = [&] {
    std::sort(seen.begin(), seen.end());
    auto best = seen.front();
    for (const auto& e : seen)
      if (e.second < best.second) best = e;
    return best.first;
  };
  const int coarse = argmin();
  const int lo = std::max(0, coarse - stride), hi = std::min(n_iterations, coarse + stride);
  for (int it = lo; it <= hi; ++it) eval(it);

  IterationSelection out;
  out.iteration = argmin();
  out.evaluated = std::move(seen);
  return out;
}

PropensityFit fit_propensity(const DesignMatrix& design, const BalanceColumns& balance,
                             std::span<const std::uint8_t> treatment, std::span<const double> survey_weight,
                             const BoostConfig& cfg) {
  PropensityFit fit;
  fit.model = fit_boosted_propensity(design, treatment, survey_weight, cfg);
  const auto& model = fit.model;
  const auto n = design.rows();

  // Scores are replayed forward; criterion calls arrive mostly ascending.
  Eigen::VectorXd f = Eigen::VectorXd::Constant(n, model.initial_score());
  int at = 0;
  std::vector<TracePoint> trace;
  auto criterion = [&](int it) {
    if (it < at) {
      f.setConstant(model.initial_score());
      at = 0;
    }
    for (; at < it; ++at)
      for (Eigen::Index i = 0; i < n; ++i) f(i) += model.shrinkage() * model.trees()[at].predict(design.values.row(i));
    Eigen::VectorXd p(n);
    for (Eigen::Index i = 0; i < n; ++i) p(i) = clamp_p(expit(f(i)));
    const auto w = composite_at(p, treatment, survey_weight);
    const auto c = balance_criterion_serial(balance, treatment, w);
    trace.push_back({it, c.ks_max, c.es_max});
    return cfg.stop_method == StopMethod::ks_max ? c.ks_max : c.es_max;
  };
  const auto sel = select_iteration(model.iterations(), cfg.eval_stride, criterion);
  std::sort(trace.begin(), trace.end(), [](const TracePoint& a, const TracePoint& b) { return a.iteration < b.iteration; });
  fit.criterion_trace = std::move(trace);
  fit.selected_iteration = sel.iteration;

  const Eigen::VectorXd p = model.propensity(design.values, sel.iteration);
  fit.propensity.assign(p.data(), p.data() + p.size());
  fit.ps_weight = ate_weights(fit.propensity, treatment);
  fit.composite_weight.resize(fit.ps_weight.size());
  for (std::size_t i = 0; i < fit.ps_weight.size(); ++i) fit.composite_weight[i] = fit.ps_weight[i] * survey_weight[i];
  fit.ess_treated = effective_sample_size(fit.composite_weight, treatment, 1);
  fit.ess_control = effective_sample_size(fit.composite_weight, treatment, 0);
  return fit;
}

namespace {

void check_cells(const Dataset& ds, const std::string& what) {
  std::size_t cells[2] = {0, 0};
  for (auto t : ds.treatment()) ++cells[t];
  if (cells[0] < 2 || cells[1] < 2)
    throw InputError(what + ": each treatment arm needs at least 2 rows (have " + std::to_string(cells[1]) +
                     " treated, " + std::to_string(cells[0]) + " control)");
}

}  // namespace

std::vector<PropensityFit> fit_stratified(const Dataset& ds, const BoostConfig& cfg) {
  cfg.validate();
  std::vector<int> levels;
  for (int z = 0; z <= 1; ++z)
    if (std::find(ds.moderator().begin(), ds.moderator().end(), static_cast<std::uint8_t>(z)) != ds.moderator().end())
      levels.push_back(z);
  if (levels.empty()) throw InputError("fit_stratified: dataset has no rows");

  std::vector<PropensityFit> fits(levels.size());
  std::vector<std::exception_ptr> errors(levels.size());
  const auto nlev = static_cast<long>(levels.size());
#pragma omp parallel for schedule(static, 1)
  for (long k = 0; k < nlev; ++k) {
    try {
      const int z = levels[k];
      std::vector<std::size_t> rows;
      for (std::size_t i = 0; i < ds.rows(); ++i)
        if (ds.moderator()[i] == z) rows.push_back(i);
      const Dataset sub = ds.subset(rows);
      const auto label = stratum_label(ds, z);
      check_cells(sub, "stratum " + label);
      BoostConfig scfg = cfg;
      scfg.seed = cfg.seed ^ static_cast<std::uint64_t>(z);
      const auto balance = prepare_balance_columns(encode_balance(sub), sub.survey_weight());
      PropensityFit fit = fit_propensity(encode(sub, false), balance, sub.treatment(), sub.survey_weight(), scfg);
      fit.stratum = label;
      fit.moderator_level = z;
      fit.rows = std::move(rows);
      fits[k] = std::move(fit);
    } catch (...) {
      errors[k] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return fits;
}

PropensityFit fit_pooled(const Dataset& ds, const BoostConfig& cfg) {
  cfg.validate();
  check_cells(ds, "pooled fit");
  BoostConfig pcfg = cfg;
  pcfg.seed = cfg.seed ^ 2u;
  DesignMatrix bal = encode_balance(ds);
  bal.values.conservativeResize(Eigen::NoChange, bal.cols() + 1);
  for (Eigen::Index i = 0; i < bal.rows(); ++i) bal.values(i, bal.cols() - 1) = ds.moderator()[i];
  bal.labels.push_back({ds.schema().moderator, ""});
  const auto balance = prepare_balance_columns(bal, ds.survey_weight());
  PropensityFit fit = fit_propensity(encode(ds, true), balance, ds.treatment(), ds.survey_weight(), pcfg);
  fit.stratum = "pooled";
  fit.moderator_level = -1;
  fit.rows.resize(ds.rows());
  std::iota(fit.rows.begin(), fit.rows.end(), std::size_t{0});
  return fit;
}

std::vector<double> composite_weights(const Dataset& ds, std::span<const PropensityFit> fits) {
  std::vector<double> w(ds.rows(), std::numeric_limits<double>::quiet_NaN());
  for (const auto& fit : fits)
    for (std::size_t k = 0; k < fit.rows.size(); ++k) w.at(fit.rows[k]) = fit.composite_weight[k];
  for (std::size_t i = 0; i < w.size(); ++i)
    if (std::isnan(w[i])) throw InputError("composite weights: row " + std::to_string(ds.row_ids()[i]) + " has no PS fit");
  return w;
}

}  // namespace modwt
