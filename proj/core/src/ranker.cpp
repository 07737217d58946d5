#include "diffcal/ranker.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

#include "diffcal/errors.hpp"
#include "diffcal/metrics.hpp"

namespace diffcal {

namespace {

Eigen::MatrixXf apply_linear(const nn::DenseLayer& layer,
                             const Eigen::MatrixXf& x) {
  Eigen::MatrixXf y = layer.weight * x;
  y.colwise() += layer.bias;
  return y;
}

void fuse_into(const std::vector<float>& a, const std::vector<float>& b,
               float* out) {
  const std::size_t d = a.size();
  for (std::size_t k = 0; k < d; ++k) out[k] = a[k];
  for (std::size_t k = 0; k < d; ++k) out[d + k] = b[k];
  for (std::size_t k = 0; k < d; ++k) out[2 * d + k] = a[k] - b[k];
  for (std::size_t k = 0; k < d; ++k) out[3 * d + k] = std::fabs(a[k] - b[k]);
}

std::vector<nn::DenseLayer> make_net(int in_dim, const RankerConfig& config,
                                     Rng& rng) {
  std::vector<nn::DenseLayer> layers;
  int in = in_dim;
  for (int h : config.hidden_dims) {
    layers.emplace_back(in, h, rng);
    in = h;
  }
  layers.emplace_back(in, 1, rng);
  return layers;
}

// Deterministic logit without touching the layers' forward caches, so a
// shared ranker can be scored concurrently.
double net_logit(const std::vector<nn::DenseLayer>& layers,
                 const Eigen::MatrixXf& x) {
  Eigen::MatrixXf h = x;
  for (std::size_t l = 0; l + 1 < layers.size(); ++l)
    h = nn::relu(apply_linear(layers[l], h));
  return static_cast<double>(apply_linear(layers.back(), h)(0, 0));
}

struct PairTensor {
  Eigen::MatrixXf features;    // 4D x P
  std::vector<int> labels;
  std::vector<double> weights;
};

PairTensor build_tensor(const std::vector<RankPair>& pairs) {
  const std::size_t dim = pairs.front().left_embedding.size();
  PairTensor t;
  t.features.resize(static_cast<Eigen::Index>(4 * dim),
                    static_cast<Eigen::Index>(pairs.size()));
  t.labels.reserve(pairs.size());
  t.weights.reserve(pairs.size());
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    if (pairs[p].left_embedding.size() != dim ||
        pairs[p].right_embedding.size() != dim)
      throw DimensionError("rank pair embeddings disagree on dimension");
    fuse_into(pairs[p].left_embedding, pairs[p].right_embedding,
              t.features.col(static_cast<Eigen::Index>(p)).data());
    t.labels.push_back(pairs[p].label);
    t.weights.push_back(pairs[p].weight);
  }
  return t;
}

std::vector<nn::DenseLayer> train_network(const PairTensor& tensor,
                                          const std::vector<std::size_t>& train_idx,
                                          const RankerConfig& config,
                                          std::uint64_t seed) {
  Rng rng(seed);
  auto layers = make_net(static_cast<int>(tensor.features.rows()), config, rng);
  const std::size_t hidden = config.hidden_dims.size();
  std::vector<std::size_t> order = train_idx;
  int t = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t b =
          std::min<std::size_t>(config.batch_size, order.size() - start);
      Eigen::MatrixXf xb(tensor.features.rows(), static_cast<Eigen::Index>(b));
      for (std::size_t k = 0; k < b; ++k)
        xb.col(static_cast<Eigen::Index>(k)) =
            tensor.features.col(static_cast<Eigen::Index>(order[start + k]));

      std::vector<Eigen::MatrixXf> pre(hidden), masks(hidden);
      Eigen::MatrixXf h = xb;
      for (std::size_t l = 0; l < hidden; ++l) {
        pre[l] = layers[l].forward(h);
        h = nn::relu(pre[l]);
        if (config.dropout > 0.0) {
          masks[l] = nn::dropout_mask(h.rows(), h.cols(),
                                      static_cast<float>(config.dropout), rng);
          h = h.cwiseProduct(masks[l]);
        }
      }
      Eigen::MatrixXf logits = layers[hidden].forward(h);

      // weighted BCE gradient, averaged over the batch
      Eigen::MatrixXf dlogits(1, static_cast<Eigen::Index>(b));
      const float inv_b = 1.0f / static_cast<float>(b);
      for (std::size_t k = 0; k < b; ++k) {
        const std::size_t idx = order[start + k];
        const float p =
            1.0f / (1.0f + std::exp(-logits(0, static_cast<Eigen::Index>(k))));
        dlogits(0, static_cast<Eigen::Index>(k)) =
            static_cast<float>(tensor.weights[idx]) *
            (p - static_cast<float>(tensor.labels[idx])) * inv_b;
      }

      Eigen::MatrixXf g = layers[hidden].backward(dlogits);
      for (std::size_t l = hidden; l-- > 0;) {
        if (config.dropout > 0.0) g = g.cwiseProduct(masks[l]);
        g = layers[l].backward(nn::relu_backward(pre[l], g));
      }
      ++t;
      for (auto& layer : layers)
        layer.adam_step(static_cast<float>(config.learning_rate), t);
    }
  }
  return layers;
}

}  // namespace

void RankerConfig::validate() const {
  if (hidden_dims.empty()) throw ConfigError("hidden_dims must be nonempty");
  for (int h : hidden_dims)
    if (h < 1) throw ConfigError("hidden_dims entries must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (folds < 2) throw ConfigError("folds must be >= 2");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (min_gap < 0.0) throw ConfigError("min_gap must be >= 0");
}

std::vector<RankPair> generate_pairs(const std::vector<RankItem>& items,
                                     const RankerConfig& config,
                                     PairGenReport* report) {
  config.validate();
  if (!items.empty()) {
    const std::size_t dim = items.front().embedding.size();
    for (const auto& item : items)
      if (item.embedding.size() != dim)
        throw DimensionError("item " + item.question_id +
                             " embedding dimension differs");
  }

  std::map<std::string, std::vector<std::size_t>> by_topic;
  for (std::size_t i = 0; i < items.size(); ++i)
    by_topic[items[i].topic].push_back(i);

  std::vector<RankPair> pairs;
  std::size_t topic_index = 0;
  for (auto& [topic, idx] : by_topic) {
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return items[a].question_id < items[b].question_id;
    });
    std::vector<std::pair<std::size_t, std::size_t>> candidates;
    for (std::size_t a = 0; a < idx.size(); ++a)
      for (std::size_t b = a + 1; b < idx.size(); ++b)
        if (std::fabs(items[idx[a]].difficulty - items[idx[b]].difficulty) >=
            config.min_gap)
          candidates.emplace_back(idx[a], idx[b]);

    const std::size_t max_unordered = config.pair_cap / 2;
    if (candidates.size() > max_unordered) {
      Rng rng(Rng::derive(config.seed, topic_index));
      rng.shuffle(candidates);
      candidates.resize(max_unordered);
      std::sort(candidates.begin(), candidates.end());
      if (report) report->capped_topics.push_back(topic);
    }

    for (auto [a, b] : candidates) {
      const double gap = items[a].difficulty - items[b].difficulty;
      const double w = std::sqrt(std::fabs(gap));
      const int label = gap > 0.0 ? 1 : 0;
      pairs.push_back({items[a].question_id, items[b].question_id,
                       items[a].embedding, items[b].embedding, label, w});
      pairs.push_back({items[b].question_id, items[a].question_id,
                       items[b].embedding, items[a].embedding, 1 - label, w});
    }
    ++topic_index;
  }
  if (report) report->emitted = pairs.size();
  return pairs;
}

std::vector<float> fuse_features(const std::vector<float>& e_i,
                                 const std::vector<float>& e_j) {
  if (e_i.size() != e_j.size())
    throw DimensionError("embedding dimensions differ: " +
                         std::to_string(e_i.size()) + " vs " +
                         std::to_string(e_j.size()));
  std::vector<float> x(4 * e_i.size());
  fuse_into(e_i, e_j, x.data());
  return x;
}

DifficultyRanker train_ranker(const std::vector<RankPair>& pairs,
                              const RankerConfig& config) {
  config.validate();
  if (pairs.empty()) throw MissingDataError("no ranking pairs provided");

  bool has_pos = false, has_neg = false;
  for (const auto& p : pairs) (p.label ? has_pos : has_neg) = true;
  if (!has_pos || !has_neg)
    throw UndefinedStatisticError("all pair labels identical; nothing to rank");

  // every pair must ship with its mirrored counterpart
  std::map<std::pair<std::string, std::string>, std::pair<int, double>> seen;
  for (const auto& p : pairs) seen[{p.left_id, p.right_id}] = {p.label, p.weight};
  for (const auto& p : pairs) {
    auto it = seen.find({p.right_id, p.left_id});
    if (it == seen.end() || it->second.first != 1 - p.label ||
        it->second.second != p.weight)
      throw ConflictError("pair (" + p.left_id + ", " + p.right_id +
                          ") lacks a symmetric counterpart");
  }

  PairTensor tensor = build_tensor(pairs);

  // fold assignment by question id keeps both orders of a pair together
  std::set<std::string> id_set;
  for (const auto& p : pairs) {
    id_set.insert(p.left_id);
    id_set.insert(p.right_id);
  }
  std::vector<std::string> ids(id_set.begin(), id_set.end());
  Rng fold_rng(Rng::derive(config.seed, 0x0f01d));
  fold_rng.shuffle(ids);
  std::unordered_map<std::string, int> fold_of;
  for (std::size_t i = 0; i < ids.size(); ++i)
    fold_of[ids[i]] = static_cast<int>(i % static_cast<std::size_t>(config.folds));

  DifficultyRanker ranker;
  ranker.config = config;
  ranker.embed_dim = static_cast<int>(pairs.front().left_embedding.size());

  for (int fold = 0; fold < config.folds; ++fold) {
    std::vector<std::size_t> train_idx, val_idx;
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      const int fl = fold_of[pairs[p].left_id];
      const int fr = fold_of[pairs[p].right_id];
      if (fl == fold && fr == fold)
        val_idx.push_back(p);
      else if (fl != fold && fr != fold)
        train_idx.push_back(p);
      // pairs straddling the fold boundary are dropped to avoid leakage
    }
    if (train_idx.empty() || val_idx.empty()) {
      ranker.train_metrics.fold_auc.push_back(
          std::numeric_limits<double>::quiet_NaN());
      ranker.train_metrics.notes.push_back(
          "fold " + std::to_string(fold) + " has no usable train/val split");
      continue;
    }
    auto layers = train_network(tensor, train_idx, config,
                                Rng::derive(config.seed, fold + 1));
    std::vector<int> labels;
    std::vector<double> scores;
    for (std::size_t p : val_idx) {
      labels.push_back(tensor.labels[p]);
      scores.push_back(
          net_logit(layers, tensor.features.col(static_cast<Eigen::Index>(p))));
    }
    const bool one_class =
        std::all_of(labels.begin(), labels.end(),
                    [&](int l) { return l == labels.front(); });
    if (one_class) {
      ranker.train_metrics.fold_auc.push_back(
          std::numeric_limits<double>::quiet_NaN());
      ranker.train_metrics.notes.push_back(
          "fold " + std::to_string(fold) + " validation labels are one-class");
    } else {
      ranker.train_metrics.fold_auc.push_back(roc_auc(labels, scores));
    }
  }

  double sum = 0.0;
  int counted = 0;
  for (double a : ranker.train_metrics.fold_auc) {
    if (std::isnan(a)) continue;
    sum += a;
    ++counted;
  }
  ranker.train_metrics.mean_auc = counted ? sum / counted : 0.0;

  std::vector<std::size_t> all_idx(pairs.size());
  for (std::size_t p = 0; p < pairs.size(); ++p) all_idx[p] = p;
  ranker.layers = train_network(tensor, all_idx, config,
                                Rng::derive(config.seed, 0));
  return ranker;
}

double score_pair(const DifficultyRanker& ranker, const std::vector<float>& e_i,
                  const std::vector<float>& e_j) {
  if (static_cast<int>(e_i.size()) != ranker.embed_dim ||
      static_cast<int>(e_j.size()) != ranker.embed_dim)
    throw DimensionError("embedding dimension does not match ranker input");
  Eigen::MatrixXf x(static_cast<Eigen::Index>(4 * e_i.size()), 1);
  fuse_into(e_i, e_j, x.data());
  const double p = sigmoid(net_logit(ranker.layers, x));
  return std::clamp(p, 1e-12, 1.0 - 1e-12);
}

double difficulty_reward(const DifficultyRanker& ranker,
                         const std::vector<float>& e_original,
                         const std::vector<float>& e_rewrite) {
  return score_pair(ranker, e_rewrite, e_original) -
         score_pair(ranker, e_original, e_rewrite);
}

nlohmann::json ranker_to_json(const DifficultyRanker& ranker) {
  nlohmann::json j;
  j["config"] = {{"hidden_dims", ranker.config.hidden_dims},
                 {"dropout", ranker.config.dropout},
                 {"batch_size", ranker.config.batch_size},
                 {"epochs", ranker.config.epochs},
                 {"folds", ranker.config.folds},
                 {"learning_rate", ranker.config.learning_rate},
                 {"seed", ranker.config.seed},
                 {"min_gap", ranker.config.min_gap},
                 {"pair_cap", ranker.config.pair_cap}};
  j["embed_dim"] = ranker.embed_dim;
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& layer : ranker.layers) {
    std::vector<float> flat(layer.weight.size());
    // row-major flattening, independent of Eigen's storage order
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c)
        flat[static_cast<std::size_t>(r * layer.weight.cols() + c)] =
            layer.weight(r, c);
    layers.push_back({{"in", layer.weight.cols()},
                      {"out", layer.weight.rows()},
                      {"weight", flat},
                      {"bias", std::vector<float>(layer.bias.data(),
                                                  layer.bias.data() +
                                                      layer.bias.size())}});
  }
  j["layers"] = layers;
  nlohmann::json aucs = nlohmann::json::array();
  for (double a : ranker.train_metrics.fold_auc)
    aucs.push_back(std::isnan(a) ? nlohmann::json() : nlohmann::json(a));
  j["train_metrics"] = {{"fold_auc", aucs},
                        {"mean_auc", ranker.train_metrics.mean_auc},
                        {"notes", ranker.train_metrics.notes}};
  return j;
}

DifficultyRanker ranker_from_json(const nlohmann::json& j) {
  DifficultyRanker ranker;
  const auto& c = j.at("config");
  ranker.config.hidden_dims = c.at("hidden_dims").get<std::vector<int>>();
  ranker.config.dropout = c.at("dropout").get<double>();
  ranker.config.batch_size = c.at("batch_size").get<int>();
  ranker.config.epochs = c.at("epochs").get<int>();
  ranker.config.folds = c.at("folds").get<int>();
  ranker.config.learning_rate = c.at("learning_rate").get<double>();
  ranker.config.seed = c.at("seed").get<std::uint64_t>();
  ranker.config.min_gap = c.at("min_gap").get<double>();
  ranker.config.pair_cap = c.at("pair_cap").get<std::size_t>();
  ranker.embed_dim = j.at("embed_dim").get<int>();

  Rng scratch(0);
  for (const auto& lj : j.at("layers")) {
    const int in = lj.at("in").get<int>();
    const int out = lj.at("out").get<int>();
    nn::DenseLayer layer(in, out, scratch);
    const auto flat = lj.at("weight").get<std::vector<float>>();
    if (static_cast<int>(flat.size()) != in * out)
      throw DimensionError("serialized layer weight count mismatch");
    for (Eigen::Index r = 0; r < out; ++r)
      for (Eigen::Index c2 = 0; c2 < in; ++c2)
        layer.weight(r, c2) = flat[static_cast<std::size_t>(r * in + c2)];
    const auto bias = lj.at("bias").get<std::vector<float>>();
    if (static_cast<int>(bias.size()) != out)
      throw DimensionError("serialized layer bias count mismatch");
    for (Eigen::Index r = 0; r < out; ++r) layer.bias(r) = bias[r];
    ranker.layers.push_back(std::move(layer));
  }

  const auto& m = j.at("train_metrics");
  for (const auto& a : m.at("fold_auc"))
    ranker.train_metrics.fold_auc.push_back(
        a.is_null() ? std::numeric_limits<double>::quiet_NaN()
                    : a.get<double>());
  ranker.train_metrics.mean_auc = m.at("mean_auc").get<double>();
  ranker.train_metrics.notes = m.at("notes").get<std::vector<std::string>>();
  return ranker;
}

std::string ranker_report_csv(const TrainMetrics& metrics) {
  std::ostringstream out;
  out << "fold,auc\n";
  char buf[32];
  for (std::size_t i = 0; i < metrics.fold_auc.size(); ++i) {
    if (std::isnan(metrics.fold_auc[i])) {
      out << i << ",nan\n";
    } else {
      std::snprintf(buf, sizeof buf, "%.6f", metrics.fold_auc[i]);
      out << i << ',' << buf << '\n';
    }
  }
  return out.str();
}

}  // namespace diffcal
