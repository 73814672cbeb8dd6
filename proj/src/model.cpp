#include "ridg/model.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include <json.hpp>

#include "ridg/errors.hpp"

namespace ridg {

void ModelConfig::validate() const {
  if (input_dim < 1) throw ConfigError("model: input_dim must be >= 1");
  if (feature_dim < 1) throw ConfigError("model: feature_dim must be >= 1");
  if (class_count < 2) throw ConfigError("model: class_count must be >= 2");
  for (std::size_t w : hidden) {
    if (w < 1) throw ConfigError("model: hidden widths must be >= 1");
  }
}

template <typename Real>
FeatureExtractor<Real>::FeatureExtractor(std::vector<DenseLayer<Real>> layers)
    : layers_(std::move(layers)) {
  if (layers_.empty()) throw ConfigError("feature extractor needs a layer");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (l.weight.shape().size() != 2 ||
        l.bias.shape() != Shape{1, l.weight.dim(1)} ||
        (i > 0 && layers_[i - 1].weight.dim(1) != l.weight.dim(0))) {
      throw DimensionError("feature extractor: layer " + std::to_string(i) +
                           " has weight " + shape_str(l.weight.shape()) +
                           " and bias " + shape_str(l.bias.shape()));
    }
  }
}

template <typename Real>
std::size_t FeatureExtractor<Real>::input_dim() const {
  return layers_.front().weight.dim(0);
}

template <typename Real>
std::size_t FeatureExtractor<Real>::output_dim() const {
  return layers_.back().weight.dim(1);
}

template <typename Real>
Tensor<Real> FeatureExtractor<Real>::forward(Tape<Real>& tape,
                                             const Tensor<Real>& x) const {
  if (x.shape().size() != 2 || x.dim(1) != input_dim()) {
    throw DimensionError("forward_features: input " + shape_str(x.shape()) +
                         " but network expects N x " +
                         std::to_string(input_dim()));
  }
  Tensor<Real> h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = tape.add(tape.matmul(h, layers_[i].weight), layers_[i].bias);
    if (i + 1 < layers_.size()) h = tape.relu(h);
  }
  return h;
}

template <typename Real>
LinearHead<Real>::LinearHead(Tensor<Real> weight) : weight_(std::move(weight)) {
  if (weight_.shape().size() != 2) {
    throw DimensionError("linear head weight must be D x K, got " +
                         shape_str(weight_.shape()));
  }
}

template <typename Real>
Tensor<Real> LinearHead<Real>::forward(Tape<Real>& tape,
                                       const Tensor<Real>& z) const {
  if (z.shape().size() != 2 || z.dim(1) != feature_dim()) {
    throw DimensionError("forward_logits: features " + shape_str(z.shape()) +
                         " vs head weight " + shape_str(weight_.shape()));
  }
  return tape.matmul(z, weight_);
}

template <typename Real>
std::vector<Tensor<Real>> Model<Real>::parameters() const {
  std::vector<Tensor<Real>> out;
  for (const auto& l : features.layers()) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
  out.push_back(head.weight());
  return out;
}

namespace {

template <typename Real>
Tensor<Real> copy_param(const Tensor<Real>& t) {
  return Tensor<Real>::parameter(t.shape(),
                                 std::vector<Real>(t.data().begin(),
                                                   t.data().end()));
}

}  // namespace

template <typename Real>
Model<Real> Model<Real>::clone() const {
  std::vector<DenseLayer<Real>> layers;
  for (const auto& l : features.layers()) {
    layers.push_back({copy_param(l.weight), copy_param(l.bias)});
  }
  return Model{config, FeatureExtractor<Real>(std::move(layers)),
               LinearHead<Real>(copy_param(head.weight()))};
}

template <typename Real>
Model<Real> init_model(const ModelConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  // Values are drawn in double so both precisions see the same stream.
  auto draw = [&](std::size_t fan_in, std::size_t count) {
    std::vector<Real> values(count, Real(0));
    if (config.init == InitScheme::zeros) return values;
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : values) v = static_cast<Real>(dist(rng));
    return values;
  };
  std::vector<std::size_t> widths{config.input_dim};
  widths.insert(widths.end(), config.hidden.begin(), config.hidden.end());
  widths.push_back(config.feature_dim);
  std::vector<DenseLayer<Real>> layers;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const std::size_t in = widths[i], out = widths[i + 1];
    auto w = Tensor<Real>::parameter({in, out}, draw(in, in * out));
    auto b = Tensor<Real>::parameter({1, out}, draw(in, out));
    layers.push_back({std::move(w), std::move(b)});
  }
  auto head = Tensor<Real>::parameter(
      {config.feature_dim, config.class_count},
      draw(config.feature_dim, config.feature_dim * config.class_count));
  return Model<Real>{config, FeatureExtractor<Real>(std::move(layers)),
                     LinearHead<Real>(std::move(head))};
}

template <typename Real>
Tensor<Real> forward_features(const Model<Real>& model, Tape<Real>& tape,
                              const Tensor<Real>& x) {
  return model.features.forward(tape, x);
}

template <typename Real>
Tensor<Real> forward_logits(const LinearHead<Real>& head, Tape<Real>& tape,
                            const Tensor<Real>& z) {
  return head.forward(tape, z);
}

namespace {

using nlohmann::json;

template <typename Real>
json tensor_json(const Tensor<Real>& t) {
  return json{{"shape", t.shape()},
              {"values", std::vector<double>(t.data().begin(), t.data().end())}};
}

template <typename Real>
Tensor<Real> tensor_from_json(const json& j) {
  const Shape shape = j.at("shape").get<Shape>();
  const auto values = j.at("values").get<std::vector<double>>();
  return Tensor<Real>::parameter(shape,
                                 std::vector<Real>(values.begin(), values.end()));
}

}  // namespace

template <typename Real>
void save_checkpoint(const Model<Real>& model,
                     const std::filesystem::path& path) {
  json layers = json::array();
  for (const auto& l : model.features.layers()) {
    layers.push_back({{"weight", tensor_json(l.weight)},
                      {"bias", tensor_json(l.bias)}});
  }
  const auto& c = model.config;
  json doc{{"format", "ridg-checkpoint-1"},
           {"precision", precision_name<Real>()},
           {"seed", c.seed},
           {"config",
            {{"input_dim", c.input_dim},
             {"hidden", c.hidden},
             {"feature_dim", c.feature_dim},
             {"class_count", c.class_count}}},
           {"layers", std::move(layers)},
           {"head", tensor_json(model.head.weight())}};
  std::ofstream out(path);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out << doc.dump(1) << '\n';
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

template <typename Real>
Model<Real> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw IoError("malformed checkpoint " + path.string() + ": " + e.what());
  }
  if (doc.value("format", "") != "ridg-checkpoint-1") {
    throw SchemaError("unrecognized checkpoint format in " + path.string());
  }
  ModelConfig config;
  const auto& c = doc.at("config");
  config.input_dim = c.at("input_dim").get<std::size_t>();
  config.hidden = c.at("hidden").get<std::vector<std::size_t>>();
  config.feature_dim = c.at("feature_dim").get<std::size_t>();
  config.class_count = c.at("class_count").get<std::size_t>();
  config.seed = doc.at("seed").get<std::uint64_t>();
  std::vector<DenseLayer<Real>> layers;
  for (const auto& l : doc.at("layers")) {
    layers.push_back({tensor_from_json<Real>(l.at("weight")),
                      tensor_from_json<Real>(l.at("bias"))});
  }
  Model<Real> model{config, FeatureExtractor<Real>(std::move(layers)),
                    LinearHead<Real>(tensor_from_json<Real>(doc.at("head")))};
  if (model.features.input_dim() != config.input_dim ||
      model.features.output_dim() != config.feature_dim ||
      model.head.feature_dim() != config.feature_dim ||
      model.head.class_count() != config.class_count) {
    throw SchemaError("checkpoint layers disagree with its config: " +
                      path.string());
  }
  return model;
}

#define RIDG_INSTANTIATE_MODEL(Real)                                        \
  template class FeatureExtractor<Real>;                                    \
  template class LinearHead<Real>;                                          \
  template struct Model<Real>;                                              \
  template Model<Real> init_model<Real>(const ModelConfig&);                \
  template Tensor<Real> forward_features<Real>(const Model<Real>&,          \
                                               Tape<Real>&,                 \
                                               const Tensor<Real>&);        \
  template Tensor<Real> forward_logits<Real>(const LinearHead<Real>&,       \
                                             Tape<Real>&,                   \
                                             const Tensor<Real>&);          \
  template void save_checkpoint<Real>(const Model<Real>&,                   \
                                      const std::filesystem::path&);        \
  template Model<Real> load_checkpoint<Real>(const std::filesystem::path&);

RIDG_INSTANTIATE_MODEL(float)
RIDG_INSTANTIATE_MODEL(double)

}  // namespace ridg
