#include "complearn/baselines.hpp"

#include <map>

namespace complearn {

std::string_view to_string(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::linear: return "linear";
    case BaselineKind::multi_attr: return "multi_attr";
    case BaselineKind::contrastive: return "contrastive";
  }
  return "linear";
}

BaselineKind parse_baseline_kind(std::string_view text) {
  if (text == "linear") return BaselineKind::linear;
  if (text == "multi_attr") return BaselineKind::multi_attr;
  if (text == "contrastive") return BaselineKind::contrastive;
  throw ConfigError("unknown baseline kind '" + std::string(text) + "'");
}

namespace {

std::vector<ParamRef> layer_params(LinearLayer& layer) {
  return {{as_span(layer.weights), as_span(layer.grad_weights)}, {as_span(layer.bias), as_span(layer.grad_bias)}};
}

void append(std::vector<ParamRef>& out, std::vector<ParamRef> more) {
  out.insert(out.end(), more.begin(), more.end());
}

Mat32 multi_hot(const EmbeddingPack& pack, std::span<const std::size_t> records,
                const std::map<std::string, int>& index) {
  Mat32 y = Mat32::Zero(static_cast<Eigen::Index>(records.size()), static_cast<Eigen::Index>(index.size()));
  for (std::size_t i = 0; i < records.size(); ++i) {
    for (const auto& l : pack.records[records[i]].labels) {
      auto it = index.find(l);
      if (it != index.end()) y(static_cast<Eigen::Index>(i), it->second) = 1.0f;
    }
  }
  return y;
}

}  // namespace

Mat64 BaselineHead::scores(const Mat32& rows) const {
  switch (kind) {
    case BaselineKind::linear:
      return head.forward(rows).cast<double>();
    case BaselineKind::multi_attr: {
      Mat64 out(rows.rows(), static_cast<Eigen::Index>(per_word.size()));
      for (std::size_t w = 0; w < per_word.size(); ++w) {
        out.col(static_cast<Eigen::Index>(w)) = per_word[w].forward(rows).col(0).cast<double>();
      }
      return out;
    }
    case BaselineKind::contrastive: {
      const Mat64 z = head.forward(rows).cast<double>();
      const Mat64 t = table.cast<double>();
      const Vec64 zn = z.rowwise().norm().cwiseMax(1e-12);
      const Vec64 tn = t.rowwise().norm().cwiseMax(1e-12);
      const Mat64 z_hat = z.array().colwise() / zn.array();
      const Mat64 t_hat = t.array().colwise() / tn.array();
      return z_hat * t_hat.transpose();
    }
  }
  throw DomainError("unknown baseline kind");
}

BaselineHead train_baseline(BaselineKind kind, const EmbeddingPack& pack, const std::vector<std::size_t>& records,
                            const std::vector<std::string>& vocab, const BaselineConfig& config,
                            const LinearLayer* init_first) {
  if (records.empty()) throw DomainError("train_baseline: no training records");
  if (vocab.empty()) throw DomainError("train_baseline: empty vocabulary");
  if (config.steps == 0 || config.batch_size == 0) throw ConfigError("train_baseline: steps and batch_size must be positive");

  Rng rng(derive_seed(config.seed, std::string("baseline:") + std::string(to_string(kind))));
  BaselineHead out;
  out.kind = kind;
  out.vocab = vocab;
  std::map<std::string, int> index;
  for (std::size_t i = 0; i < vocab.size(); ++i) index.emplace(vocab[i], static_cast<int>(i));
  if (index.size() != vocab.size()) throw DomainError("train_baseline: duplicate vocabulary entries");

  const std::size_t dim = pack.dim;
  std::vector<ParamRef> params;
  std::vector<std::vector<int>> groups;
  switch (kind) {
    case BaselineKind::linear:
      out.head = MlpHead::init(dim, config.hidden_dim, vocab.size(), rng);
      if (init_first) {
        if (init_first->in_dim() != dim || init_first->out_dim() != config.hidden_dim) {
          throw ShapeError("train_baseline: initial first layer has the wrong shape");
        }
        out.head.first = *init_first;
        out.head.first.zero_grad();
      }
      append(params, layer_params(out.head.first));
      append(params, layer_params(out.head.second));
      break;
    case BaselineKind::multi_attr:
      for (std::size_t w = 0; w < vocab.size(); ++w) {
        out.per_word.push_back(MlpHead::init(dim, config.hidden_dim, 1, rng));
      }
      for (auto& h : out.per_word) {
        append(params, layer_params(h.first));
        append(params, layer_params(h.second));
      }
      break;
    case BaselineKind::contrastive: {
      out.head = MlpHead::init(dim, config.hidden_dim, config.projection_dim, rng);
      std::normal_distribution<float> normal(0.0f, 1.0f);
      out.table = Mat32(static_cast<Eigen::Index>(vocab.size()), static_cast<Eigen::Index>(config.projection_dim));
      for (Eigen::Index i = 0; i < out.table.size(); ++i) out.table.data()[i] = normal(rng);
      append(params, layer_params(out.head.first));
      append(params, layer_params(out.head.second));
      for (const auto& cat : pack.category_map.categories()) {
        std::vector<int> group;
        for (const auto& w : cat.words) {
          auto it = index.find(w);
          if (it != index.end()) group.push_back(it->second);
        }
        groups.push_back(std::move(group));
      }
      break;
    }
  }
  Mat32 grad_table = Mat32::Zero(out.table.rows(), out.table.cols());
  if (kind == BaselineKind::contrastive) params.push_back({as_span(out.table), as_span(grad_table)});

  OptimizerState optimizer(AdamConfig{config.learning_rate});
  std::uniform_int_distribution<std::size_t> pick(0, records.size() - 1);
  std::vector<std::size_t> batch(config.batch_size);
  for (std::size_t step = 0; step < config.steps; ++step) {
    for (auto& b : batch) b = records[pick(rng)];
    const Mat32 x = gather_rows<float>(pack, batch);
    double loss = 0.0;
    switch (kind) {
      case BaselineKind::linear:
        loss = bce_objective(out.head, x, multi_hot(pack, batch, index), true);
        break;
      case BaselineKind::multi_attr: {
        const Mat32 y = multi_hot(pack, batch, index);
        for (std::size_t w = 0; w < out.per_word.size(); ++w) {
          const Mat32 yw = y.col(static_cast<Eigen::Index>(w));
          loss += bce_objective(out.per_word[w], x, yw, true);
        }
        break;
      }
      case BaselineKind::contrastive: {
        std::vector<std::vector<int>> positives(batch.size(), std::vector<int>(groups.size(), -1));
        for (std::size_t i = 0; i < batch.size(); ++i) {
          for (const auto& l : pack.records[batch[i]].labels) {
            auto it = index.find(l);
            if (it == index.end()) continue;
            for (std::size_t c = 0; c < groups.size(); ++c) {
              if (std::find(groups[c].begin(), groups[c].end(), it->second) != groups[c].end()) {
                positives[i][c] = it->second;
              }
            }
          }
        }
        loss = contrastive_objective(out.head, out.table, &grad_table, x, positives, groups, config.temperature,
                                     true);
        break;
      }
    }
    if (!std::isfinite(loss)) throw NumericError("baseline training produced a non-finite loss");
    optimizer.step(params);
  }
  return out;
}

EvalReport eval_baseline(const BaselineHead& head, const EmbeddingPack& pack,
                         const std::vector<std::size_t>& records, std::size_t k) {
  if (head.kind == BaselineKind::linear) {
    for (std::size_t r : records) {
      for (const auto& l : pack.records[r].labels) {
        if (std::find(head.vocab.begin(), head.vocab.end(), l) == head.vocab.end()) {
          throw DomainError("linear head: unsupported label '" + l + "' outside its fixed vocabulary of " +
                            std::to_string(head.output_dim()) + " words");
        }
      }
    }
  }
  const Mat64 cost = -head.scores(gather_rows<float>(pack, records));
  EvalReport report = score_topk(pack, records, head.vocab, cost, k);
  report.method = std::string(to_string(head.kind));
  return report;
}

}  // namespace complearn
