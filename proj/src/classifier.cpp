#include "osld/classifier.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>
#include <set>
#include <stdexcept>

#include "osld/util.hpp"

namespace osld {

using nlohmann::json;

namespace {

void fill_uniform(std::vector<float>& values, std::size_t count, double bound, Rng& rng) {
  values.resize(count);
  for (auto& v : values) v = static_cast<float>(rng.uniform(-bound, bound));
}

void check_dim(std::size_t expected, std::size_t got, const char* what) {
  if (expected != got) {
    throw std::invalid_argument(std::string(what) + ": dimension mismatch (expected " + std::to_string(expected) +
                                ", got " + std::to_string(got) + ")");
  }
}

// Softmax probabilities in place (max-shifted); returns log-sum-exp.
double softmax_inplace(std::vector<double>& z) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double& v : z) {
    v = std::exp(v - m);
    s += v;
  }
  for (double& v : z) v /= s;
  return m + std::log(s);
}

}  // namespace

ClassifierHead init_head(std::vector<std::string> class_order, std::size_t in_dim, std::uint64_t seed) {
  if (in_dim == 0) throw std::invalid_argument("init_head: zero input dimension");
  ClassifierHead h;
  h.in_dim = in_dim;
  h.class_order = std::move(class_order);
  Rng rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
  fill_uniform(h.weight, h.classes() * in_dim, bound, rng);
  fill_uniform(h.bias, h.classes(), bound, rng);
  return h;
}

std::vector<double> logits(const ClassifierHead& head, std::span<const float> e) {
  check_dim(head.in_dim, e.size(), "logits");
  std::vector<double> z(head.classes());
  for (std::size_t j = 0; j < z.size(); ++j) {
    double s = head.bias[j];
    const float* w = head.weight.data() + j * head.in_dim;
    for (std::size_t k = 0; k < head.in_dim; ++k) s += static_cast<double>(w[k]) * e[k];
    z[j] = s;
  }
  return z;
}

HeadGradient ce_loss_and_grad(const ClassifierHead& head, const EmbeddingMatrix& X, std::span<const int> labels) {
  if (labels.size() != X.rows()) throw std::invalid_argument("ce_loss_and_grad: label count mismatch");
  if (X.rows() == 0) throw std::invalid_argument("ce_loss_and_grad: empty batch");
  check_dim(head.in_dim, X.dim(), "ce_loss_and_grad");
  const std::size_t n = head.classes();
  HeadGradient g;
  g.weight.assign(head.weight.size(), 0.0);
  g.bias.assign(n, 0.0);
  const double inv_b = 1.0 / static_cast<double>(X.rows());
  for (std::size_t r = 0; r < X.rows(); ++r) {
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= n) {
      throw std::out_of_range("ce_loss_and_grad: label " + std::to_string(y) + " out of range");
    }
    auto p = logits(head, X.row(r));
    const double zy = p[static_cast<std::size_t>(y)];
    const double lse = softmax_inplace(p);
    g.loss += (lse - zy) * inv_b;
    p[static_cast<std::size_t>(y)] -= 1.0;
    const auto e = X.row(r);
    for (std::size_t j = 0; j < n; ++j) {
      const double gj = p[j] * inv_b;
      g.bias[j] += gj;
      double* gw = g.weight.data() + j * head.in_dim;
      for (std::size_t k = 0; k < head.in_dim; ++k) gw[k] += gj * e[k];
    }
  }
  return g;
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("argmax: empty input");
  std::size_t best = 0;
  for (std::size_t j = 1; j < values.size(); ++j) {
    if (values[j] > values[best]) best = j;
  }
  return best;
}

std::size_t predict_index(const ClassifierHead& head, std::span<const float> e) { return argmax(logits(head, e)); }

const std::string& predict(const ClassifierHead& head, std::span<const float> e) {
  return head.class_order[predict_index(head, e)];
}

TrainConfig TrainConfig::finetune_profile() {
  TrainConfig c;
  c.profile = "finetune";
  c.learning_rate = 2e-5;
  return c;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning_rate must be positive");
  if (weight_decay < 0.0) throw std::invalid_argument("TrainConfig: weight_decay must be non-negative");
  if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be at least 1");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be at least 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("TrainConfig: betas must be in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw std::invalid_argument("TrainConfig: epsilon must be positive");
  if (hidden_layer && hidden_width < 1) throw std::invalid_argument("TrainConfig: hidden_width must be positive");
}

json TrainConfig::to_json() const {
  return {{"profile", profile},     {"learning_rate", learning_rate}, {"weight_decay", weight_decay},
          {"warmup_steps", warmup_steps}, {"epochs", epochs},       {"batch_size", batch_size},
          {"beta1", beta1},         {"beta2", beta2},                 {"epsilon", epsilon},
          {"hidden_layer", hidden_layer}, {"hidden_width", hidden_width}, {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c = j.value("profile", std::string("default")) == "finetune" ? finetune_profile() : TrainConfig{};
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.hidden_layer = j.value("hidden_layer", c.hidden_layer);
  c.hidden_width = j.value("hidden_width", c.hidden_width);
  c.seed = j.value("seed", c.seed);
  return c;
}

std::size_t Network::input_dim() const {
  if (projection) return projection->in;
  if (hidden) return hidden->in;
  return head.in_dim;
}

namespace {

std::vector<double> dense(const DenseLayer& layer, std::span<const double> x) {
  std::vector<double> y(layer.out);
  for (std::size_t o = 0; o < layer.out; ++o) {
    double s = layer.bias.empty() ? 0.0 : layer.bias[o];
    const float* w = layer.weight.data() + o * layer.in;
    for (std::size_t k = 0; k < layer.in; ++k) s += static_cast<double>(w[k]) * x[k];
    y[o] = s;
  }
  return y;
}

struct Activations {
  std::vector<double> input;
  std::vector<double> rep;     // projection output (or input)
  std::vector<double> hidden;  // tanh output (or rep)
  std::vector<double> logits;
};

Activations forward(const Network& net, std::span<const float> e) {
  check_dim(net.input_dim(), e.size(), "Network::forward");
  Activations a;
  a.input.assign(e.begin(), e.end());
  a.rep = net.projection ? dense(*net.projection, a.input) : a.input;
  if (net.hidden) {
    a.hidden = dense(*net.hidden, a.rep);
    for (double& v : a.hidden) v = std::tanh(v);
  } else {
    a.hidden = a.rep;
  }
  a.logits.resize(net.head.classes());
  for (std::size_t j = 0; j < a.logits.size(); ++j) {
    double s = net.head.bias[j];
    const float* w = net.head.weight.data() + j * net.head.in_dim;
    for (std::size_t k = 0; k < net.head.in_dim; ++k) s += static_cast<double>(w[k]) * a.hidden[k];
    a.logits[j] = s;
  }
  return a;
}

}  // namespace

std::vector<double> Network::representation(std::span<const float> e) const { return forward(*this, e).rep; }

std::vector<double> Network::logits(std::span<const float> e) const { return forward(*this, e).logits; }

std::size_t Network::predict_index(std::span<const float> e) const { return argmax(logits(e)); }

void Network::add_identity_projection() {
  if (projection) return;
  const std::size_t d = input_dim();
  DenseLayer p;
  p.in = d;
  p.out = d;
  p.weight.assign(d * d, 0.0f);
  for (std::size_t i = 0; i < d; ++i) p.weight[i * d + i] = 1.0f;
  projection = std::move(p);
}

void Network::expand(const std::vector<std::string>& new_classes, std::uint64_t seed) {
  std::set<std::string> existing(head.class_order.begin(), head.class_order.end());
  for (const auto& c : new_classes) {
    if (!existing.insert(c).second) throw std::invalid_argument("Network::expand: duplicate class '" + c + "'");
  }
  const ClassifierHead fresh = init_head(new_classes, head.in_dim, seed);
  head.class_order.insert(head.class_order.end(), new_classes.begin(), new_classes.end());
  head.weight.insert(head.weight.end(), fresh.weight.begin(), fresh.weight.end());
  head.bias.insert(head.bias.end(), fresh.bias.begin(), fresh.bias.end());
}

Network make_network(std::vector<std::string> class_order, std::size_t input_dim, const TrainConfig& config) {
  Network net;
  std::size_t head_in = input_dim;
  if (config.hidden_layer) {
    Rng rng(derive_seed(config.seed, 101));
    DenseLayer h;
    h.in = input_dim;
    h.out = config.hidden_width;
    const double bound = 1.0 / std::sqrt(static_cast<double>(input_dim));
    fill_uniform(h.weight, h.in * h.out, bound, rng);
    fill_uniform(h.bias, h.out, bound, rng);
    net.hidden = std::move(h);
    head_in = config.hidden_width;
  }
  net.head = init_head(std::move(class_order), head_in, derive_seed(config.seed, 102));
  return net;
}

std::vector<std::span<float>> parameter_tensors(Network& net) {
  std::vector<std::span<float>> out;
  if (net.projection) out.emplace_back(net.projection->weight);
  if (net.hidden) {
    out.emplace_back(net.hidden->weight);
    out.emplace_back(net.hidden->bias);
  }
  out.emplace_back(net.head.weight);
  out.emplace_back(net.head.bias);
  return out;
}

std::vector<std::string> parameter_names(const Network& net) {
  std::vector<std::string> out;
  if (net.projection) out.emplace_back("projection.weight");
  if (net.hidden) {
    out.emplace_back("hidden.weight");
    out.emplace_back("hidden.bias");
  }
  out.emplace_back("head.weight");
  out.emplace_back("head.bias");
  return out;
}

NetworkGradient network_loss_and_grad(const Network& net, const EmbeddingMatrix& X, std::span<const std::size_t> rows,
                                      std::span<const int> labels, const TrainOptions& options) {
  if (rows.empty()) throw std::invalid_argument("network_loss_and_grad: empty batch");
  if (labels.size() != X.rows()) throw std::invalid_argument("network_loss_and_grad: label count mismatch");
  const std::size_t n_classes = net.classes();
  const std::size_t batch = rows.size();
  const double inv_b = 1.0 / static_cast<double>(batch);

  NetworkGradient g;
  std::size_t t = 0;
  std::size_t proj_t = 0, hid_w = 0, hid_b = 0;
  if (net.projection) {
    proj_t = t++;
    g.tensors.emplace_back(net.projection->weight.size(), 0.0);
  }
  if (net.hidden) {
    hid_w = t++;
    g.tensors.emplace_back(net.hidden->weight.size(), 0.0);
    hid_b = t++;
    g.tensors.emplace_back(net.hidden->bias.size(), 0.0);
  }
  const std::size_t head_w = t++;
  g.tensors.emplace_back(net.head.weight.size(), 0.0);
  const std::size_t head_b = t++;
  g.tensors.emplace_back(net.head.bias.size(), 0.0);

  std::vector<Activations> acts;
  acts.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) acts.push_back(forward(net, X.row(rows[b])));

  // Gradient wrt the representation, filled by the CE pass, then the hook.
  std::vector<std::vector<double>> grad_rep(batch);

  for (std::size_t b = 0; b < batch; ++b) {
    const int y = labels[rows[b]];
    if (y < 0 || static_cast<std::size_t>(y) >= n_classes) {
      throw std::out_of_range("network_loss_and_grad: label " + std::to_string(y) + " out of range");
    }
    auto p = acts[b].logits;
    const double zy = p[static_cast<std::size_t>(y)];
    const double lse = softmax_inplace(p);
    g.ce_loss += (lse - zy) * inv_b;
    p[static_cast<std::size_t>(y)] -= 1.0;

    const auto& h = acts[b].hidden;
    std::vector<double> grad_h(net.head.in_dim, 0.0);
    for (std::size_t j = 0; j < n_classes; ++j) {
      const double gj = p[j] * inv_b;
      g.tensors[head_b][j] += gj;
      double* gw = g.tensors[head_w].data() + j * net.head.in_dim;
      const float* w = net.head.weight.data() + j * net.head.in_dim;
      for (std::size_t k = 0; k < net.head.in_dim; ++k) {
        gw[k] += gj * h[k];
        grad_h[k] += gj * w[k];
      }
    }
    if (net.hidden) {
      const DenseLayer& hl = *net.hidden;
      std::vector<double> grad_r(hl.in, 0.0);
      for (std::size_t o = 0; o < hl.out; ++o) {
        const double gpre = grad_h[o] * (1.0 - h[o] * h[o]);
        g.tensors[hid_b][o] += gpre;
        double* gw = g.tensors[hid_w].data() + o * hl.in;
        const float* w = hl.weight.data() + o * hl.in;
        for (std::size_t k = 0; k < hl.in; ++k) {
          gw[k] += gpre * acts[b].rep[k];
          grad_r[k] += gpre * w[k];
        }
      }
      grad_rep[b] = std::move(grad_r);
    } else {
      grad_rep[b] = std::move(grad_h);
    }
  }

  if (options.aux) {
    std::vector<std::vector<double>> reps(batch);
    for (std::size_t b = 0; b < batch; ++b) reps[b] = acts[b].rep;
    std::vector<std::vector<double>> aux_grad(batch, std::vector<double>(reps[0].size(), 0.0));
    g.aux_loss = options.aux(rows, reps, aux_grad);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t k = 0; k < grad_rep[b].size(); ++k) grad_rep[b][k] += options.aux_weight * aux_grad[b][k];
    }
  }
  g.loss = g.ce_loss + options.aux_weight * g.aux_loss;

  if (net.projection) {
    const DenseLayer& pl = *net.projection;
    for (std::size_t b = 0; b < batch; ++b) {
      const auto& e = acts[b].input;
      for (std::size_t o = 0; o < pl.out; ++o) {
        const double go = grad_rep[b][o];
        double* gw = g.tensors[proj_t].data() + o * pl.in;
        for (std::size_t k = 0; k < pl.in; ++k) gw[k] += go * e[k];
      }
    }
  }
  return g;
}

TrainResult train(Network& net, const EmbeddingMatrix& X, std::span<const int> labels, const TrainConfig& config,
                  const TrainOptions& options) {
  config.validate();
  if (labels.size() != X.rows()) throw std::invalid_argument("train: label count mismatch");
  check_dim(net.input_dim(), X.dim(), "train");
  std::set<int> distinct(labels.begin(), labels.end());
  for (int y : distinct) {
    if (y < 0 || static_cast<std::size_t>(y) >= net.classes()) {
      throw std::out_of_range("train: label " + std::to_string(y) + " out of range");
    }
  }
  if (distinct.size() < 2) throw std::invalid_argument("train: labels must cover at least 2 classes");

  auto params = parameter_tensors(net);
  const auto names = parameter_names(net);
  std::vector<std::vector<double>> m(params.size()), v(params.size());
  std::vector<bool> trainable(params.size(), true), decay(params.size(), false);
  for (std::size_t t = 0; t < params.size(); ++t) {
    m[t].assign(params[t].size(), 0.0);
    v[t].assign(params[t].size(), 0.0);
    decay[t] = names[t].ends_with(".weight");
    if (names[t] == "projection.weight" && !options.train_projection) trainable[t] = false;
  }

  TrainResult result;
  std::vector<std::size_t> order(X.rows());
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(config.seed, 1000 + epoch));
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::span<const std::size_t> batch(order.data() + start, end - start);
      const NetworkGradient g = network_loss_and_grad(net, X, batch, labels, options);
      if (!std::isfinite(g.loss)) throw std::runtime_error("train: non-finite loss at step " + std::to_string(result.steps));
      result.loss_curve.push_back(g.loss);

      const double step = static_cast<double>(result.steps + 1);
      const double warm = config.warmup_steps == 0
                              ? 1.0
                              : std::min(1.0, step / static_cast<double>(config.warmup_steps));
      const double lr = config.learning_rate * warm;
      const double bc1 = 1.0 - std::pow(config.beta1, step);
      const double bc2 = 1.0 - std::pow(config.beta2, step);
      for (std::size_t t = 0; t < params.size(); ++t) {
        if (!trainable[t]) continue;
        auto& p = params[t];
        const auto& grad = g.tensors[t];
        for (std::size_t i = 0; i < p.size(); ++i) {
          m[t][i] = config.beta1 * m[t][i] + (1.0 - config.beta1) * grad[i];
          v[t][i] = config.beta2 * v[t][i] + (1.0 - config.beta2) * grad[i] * grad[i];
          const double mhat = m[t][i] / bc1;
          const double vhat = v[t][i] / bc2;
          double value = p[i];
          if (decay[t]) value -= lr * config.weight_decay * value;
          value -= lr * mhat / (std::sqrt(vhat) + config.epsilon);
          p[i] = static_cast<float>(value);
        }
      }
      ++result.steps;
    }
  }
  return result;
}

HeadTraining train(ClassifierHead head, const EmbeddingMatrix& X, std::span<const int> labels, const TrainConfig& config) {
  Network net;
  net.head = std::move(head);
  auto result = train(net, X, labels, config);
  return {std::move(net.head), std::move(result.loss_curve)};
}

double accuracy(const Network& net, const EmbeddingMatrix& X, std::span<const int> labels) {
  if (X.rows() == 0) return 0.0;
  std::size_t correct = 0;
  for (std::size_t r = 0; r < X.rows(); ++r) {
    if (static_cast<int>(net.predict_index(X.row(r))) == labels[r]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(X.rows());
}

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out += static_cast<char>((v >> (8 * k)) & 0xffu);
}

std::uint32_t get_u32(std::string_view bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (int k = 3; k >= 0; --k) v = (v << 8) | static_cast<unsigned char>(bytes[offset + static_cast<std::size_t>(k)]);
  return v;
}

void put_floats(std::string& out, std::span<const float> values) {
  for (float x : values) put_u32(out, std::bit_cast<std::uint32_t>(x));
}

}  // namespace

std::string serialize_network(const Network& net, const json& config_echo) {
  json tensors = json::array();
  auto shape = [&](const char* name, std::size_t rows, std::size_t cols) {
    tensors.push_back({{"name", name}, {"shape", {rows, cols}}});
  };
  if (net.projection) shape("projection.weight", net.projection->out, net.projection->in);
  if (net.hidden) {
    shape("hidden.weight", net.hidden->out, net.hidden->in);
    shape("hidden.bias", net.hidden->out, 1);
  }
  shape("head.weight", net.head.classes(), net.head.in_dim);
  shape("head.bias", net.head.classes(), 1);
  json header = {{"format", "osld-head/1"},
                 {"N", net.head.classes()},
                 {"d", net.input_dim()},
                 {"class_order", net.head.class_order},
                 {"config", config_echo},
                 {"tensors", tensors}};
  const std::string h = header.dump();
  std::string out(kCheckpointMagic, 8);
  put_u32(out, static_cast<std::uint32_t>(h.size()));
  out += h;
  if (net.projection) put_floats(out, net.projection->weight);
  if (net.hidden) {
    put_floats(out, net.hidden->weight);
    put_floats(out, net.hidden->bias);
  }
  put_floats(out, net.head.weight);
  put_floats(out, net.head.bias);
  return out;
}

Network parse_network(std::string_view bytes, const std::string& source_name) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    throw FormatError(source_name + ": bad magic (expected OSLDHED1)");
  }
  const std::uint32_t hlen = get_u32(bytes, 8);
  if (bytes.size() - 12 < hlen) throw FormatError(source_name + ": truncated header");
  json header;
  try {
    header = json::parse(bytes.substr(12, hlen));
  } catch (const json::exception& e) {
    throw FormatError(source_name + ": malformed header (" + e.what() + ")");
  }
  std::size_t offset = 12 + hlen;
  auto read_tensor = [&](std::size_t count) {
    if (bytes.size() - offset < count * 4) throw FormatError(source_name + ": truncated payload");
    std::vector<float> v(count);
    for (std::size_t i = 0; i < count; ++i) {
      v[i] = std::bit_cast<float>(get_u32(bytes, offset + 4 * i));
      if (!std::isfinite(v[i])) throw FormatError(source_name + ": non-finite parameter");
    }
    offset += count * 4;
    return v;
  };
  Network net;
  try {
    for (const auto& t : header.at("tensors")) {
      const auto name = t.at("name").get<std::string>();
      const auto rows = t.at("shape")[0].get<std::size_t>();
      const auto cols = t.at("shape")[1].get<std::size_t>();
      if (name == "projection.weight") {
        net.projection = DenseLayer{cols, rows, read_tensor(rows * cols), {}};
      } else if (name == "hidden.weight") {
        net.hidden = DenseLayer{cols, rows, read_tensor(rows * cols), {}};
      } else if (name == "hidden.bias") {
        if (!net.hidden) throw FormatError(source_name + ": hidden.bias before hidden.weight");
        net.hidden->bias = read_tensor(rows);
      } else if (name == "head.weight") {
        net.head.in_dim = cols;
        net.head.weight = read_tensor(rows * cols);
      } else if (name == "head.bias") {
        net.head.bias = read_tensor(rows);
      } else {
        throw FormatError(source_name + ": unknown tensor '" + name + "'");
      }
    }
    net.head.class_order = header.at("class_order").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw FormatError(source_name + ": malformed header (" + e.what() + ")");
  }
  if (offset != bytes.size()) throw FormatError(source_name + ": trailing bytes after payload");
  if (net.head.bias.size() != net.head.classes() || net.head.weight.size() != net.head.classes() * net.head.in_dim) {
    throw FormatError(source_name + ": tensor shapes do not match class_order");
  }
  return net;
}

void write_network(const std::filesystem::path& path, const Network& net, const json& config_echo) {
  write_file_atomic(path, serialize_network(net, config_echo));
}

Network load_network(const std::filesystem::path& path) { return parse_network(read_file(path), path.string()); }

}  // namespace osld
