#include "seld/neural.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "seld/errors.hpp"

namespace seld::nn {
namespace {

constexpr int kPad = kKernel / 2;

template <class T>
T sigmoid(T z) {
  const T s = T(1) / (T(1) + std::exp(-z));
  // Keep outputs strictly inside (0, 1) even where exp saturates.
  return std::clamp(s, std::numeric_limits<T>::min(), T(1) - std::numeric_limits<T>::epsilon() / 2);
}

std::size_t volume(const Shape& s) {
  std::size_t v = 1;
  for (int d : s) v *= static_cast<std::size_t>(d);
  return v;
}

// ---- Conv2D (5x5, same padding) + ReLU --------------------------------------

template <class T>
void conv_forward(const Shape& in_shape, int out_channels, std::span<const T> p, std::span<const T> in,
                  std::vector<T>& out) {
  const int cin = in_shape[0], rows = in_shape[1], cols = in_shape[2];
  const std::size_t plane = static_cast<std::size_t>(rows) * cols;
  const T* weights = p.data();
  const T* bias = p.data() + static_cast<std::size_t>(out_channels) * cin * kKernel * kKernel;
  out.assign(static_cast<std::size_t>(out_channels) * plane, T(0));
  for (int o = 0; o < out_channels; ++o) {
    T* out_o = out.data() + o * plane;
    std::fill(out_o, out_o + plane, bias[o]);
    for (int i = 0; i < cin; ++i) {
      const T* in_i = in.data() + i * plane;
      const T* w = weights + (static_cast<std::size_t>(o) * cin + i) * kKernel * kKernel;
      for (int kt = 0; kt < kKernel; ++kt) {
        const int dt = kt - kPad;
        const int t0 = std::max(0, -dt), t1 = std::min(rows, rows - dt);
        for (int t = t0; t < t1; ++t) {
          const T* src = in_i + static_cast<std::size_t>(t + dt) * cols;
          T* dst = out_o + static_cast<std::size_t>(t) * cols;
          for (int kf = 0; kf < kKernel; ++kf) {
            const int df = kf - kPad;
            const T wv = w[kt * kKernel + kf];
            const int f0 = std::max(0, -df), f1 = std::min(cols, cols - df);
            for (int f = f0; f < f1; ++f) dst[f] += wv * src[f + df];
          }
        }
      }
    }
    for (std::size_t k = 0; k < plane; ++k) out_o[k] = std::max(out_o[k], T(0));
  }
}

template <class T>
void conv_backward(const Shape& in_shape, int out_channels, std::span<const T> p, std::span<const T> in,
                   std::span<const T> out, std::span<const T> dout, std::span<T> dp, std::vector<T>* din) {
  const int cin = in_shape[0], rows = in_shape[1], cols = in_shape[2];
  const std::size_t plane = static_cast<std::size_t>(rows) * cols;
  const std::size_t wcount = static_cast<std::size_t>(out_channels) * cin * kKernel * kKernel;
  std::vector<T> dpre(dout.begin(), dout.end());
  for (std::size_t k = 0; k < dpre.size(); ++k) {
    if (!(out[k] > T(0))) dpre[k] = T(0);
  }
  if (din != nullptr) din->assign(in.size(), T(0));
  for (int o = 0; o < out_channels; ++o) {
    const T* g = dpre.data() + o * plane;
    T bsum = 0;
    for (std::size_t k = 0; k < plane; ++k) bsum += g[k];
    dp[wcount + o] += bsum;
    for (int i = 0; i < cin; ++i) {
      const T* in_i = in.data() + i * plane;
      T* din_i = din != nullptr ? din->data() + i * plane : nullptr;
      const std::size_t wbase = (static_cast<std::size_t>(o) * cin + i) * kKernel * kKernel;
      for (int kt = 0; kt < kKernel; ++kt) {
        const int dt = kt - kPad;
        const int t0 = std::max(0, -dt), t1 = std::min(rows, rows - dt);
        for (int kf = 0; kf < kKernel; ++kf) {
          const int df = kf - kPad;
          const int f0 = std::max(0, -df), f1 = std::min(cols, cols - df);
          const T wv = p[wbase + kt * kKernel + kf];
          T acc = 0;
          for (int t = t0; t < t1; ++t) {
            const T* grow = g + static_cast<std::size_t>(t) * cols;
            const T* src = in_i + static_cast<std::size_t>(t + dt) * cols;
            for (int f = f0; f < f1; ++f) acc += grow[f] * src[f + df];
            if (din_i != nullptr) {
              T* drow = din_i + static_cast<std::size_t>(t + dt) * cols;
              for (int f = f0; f < f1; ++f) drow[f + df] += wv * grow[f];
            }
          }
          dp[wbase + kt * kKernel + kf] += acc;
        }
      }
    }
  }
}

// ---- MaxPool2D (2x2) ----------------------------------------------------------

template <class T>
void pool2d_forward(const Shape& in_shape, std::span<const T> in, std::vector<T>& out, std::vector<int>& arg) {
  const int ch = in_shape[0], rows = in_shape[1], cols = in_shape[2];
  const int orows = rows / 2, ocols = cols / 2;
  out.assign(static_cast<std::size_t>(ch) * orows * ocols, T(0));
  arg.assign(out.size(), 0);
  std::size_t k = 0;
  for (int c = 0; c < ch; ++c) {
    for (int t = 0; t < orows; ++t) {
      for (int f = 0; f < ocols; ++f, ++k) {
        int best = (c * rows + 2 * t) * cols + 2 * f;
        for (int a = 0; a < 2; ++a) {
          for (int b = 0; b < 2; ++b) {
            const int idx = (c * rows + 2 * t + a) * cols + 2 * f + b;
            if (in[idx] > in[best]) best = idx;
          }
        }
        out[k] = in[best];
        arg[k] = best;
      }
    }
  }
}

// ---- LSTM ---------------------------------------------------------------------
// Gate order i, f, g, o. Parameters: W [4H x D], U [4H x H], b [4H].

template <class T>
void lstm_forward(int steps, int dim, int hidden, std::span<const T> p, std::span<const T> in, std::vector<T>& out,
                  std::vector<T>& cache) {
  const std::size_t H = hidden, D = dim, G = 4 * H;
  const T* W = p.data();
  const T* U = W + G * D;
  const T* b = U + G * H;
  out.assign(static_cast<std::size_t>(steps) * H, T(0));
  // cache per step: gates (4H), c (H), tanh(c) (H)
  cache.assign(static_cast<std::size_t>(steps) * 6 * H, T(0));
  std::vector<T> z(G);
  std::vector<T> h_prev(H, T(0)), c_prev(H, T(0));
  for (int t = 0; t < steps; ++t) {
    const T* x = in.data() + static_cast<std::size_t>(t) * D;
    for (std::size_t r = 0; r < G; ++r) {
      T acc = b[r];
      const T* wr = W + r * D;
      for (std::size_t d = 0; d < D; ++d) acc += wr[d] * x[d];
      const T* ur = U + r * H;
      for (std::size_t j = 0; j < H; ++j) acc += ur[j] * h_prev[j];
      z[r] = acc;
    }
    T* gates = cache.data() + static_cast<std::size_t>(t) * 6 * H;
    T* cell = gates + G;
    T* tcell = cell + H;
    T* h = out.data() + static_cast<std::size_t>(t) * H;
    for (std::size_t j = 0; j < H; ++j) {
      const T ig = sigmoid(z[j]);
      const T fg = sigmoid(z[H + j]);
      const T gg = std::tanh(z[2 * H + j]);
      const T og = sigmoid(z[3 * H + j]);
      gates[j] = ig;
      gates[H + j] = fg;
      gates[2 * H + j] = gg;
      gates[3 * H + j] = og;
      cell[j] = fg * c_prev[j] + ig * gg;
      tcell[j] = std::tanh(cell[j]);
      h[j] = og * tcell[j];
    }
    std::copy(h, h + H, h_prev.begin());
    std::copy(cell, cell + H, c_prev.begin());
  }
}

template <class T>
void lstm_backward(int steps, int dim, int hidden, std::span<const T> p, std::span<const T> in, std::span<const T> out,
                   std::span<const T> cache, std::span<const T> dout, std::span<T> dp, std::vector<T>* din) {
  const std::size_t H = hidden, D = dim, G = 4 * H;
  const T* W = p.data();
  const T* U = W + G * D;
  T* dW = dp.data();
  T* dU = dW + G * D;
  T* db = dU + G * H;
  if (din != nullptr) din->assign(static_cast<std::size_t>(steps) * D, T(0));
  std::vector<T> dh_next(H, T(0)), dc_next(H, T(0)), dz(G), dh(H);
  for (int t = steps - 1; t >= 0; --t) {
    const T* gates = cache.data() + static_cast<std::size_t>(t) * 6 * H;
    const T* tcell = gates + G + H;
    const T* c_prev = t > 0 ? cache.data() + static_cast<std::size_t>(t - 1) * 6 * H + G : nullptr;
    const T* h_prev = t > 0 ? out.data() + static_cast<std::size_t>(t - 1) * H : nullptr;
    const T* x = in.data() + static_cast<std::size_t>(t) * D;
    for (std::size_t j = 0; j < H; ++j) {
      dh[j] = dout[static_cast<std::size_t>(t) * H + j] + dh_next[j];
      const T ig = gates[j], fg = gates[H + j], gg = gates[2 * H + j], og = gates[3 * H + j];
      const T dog = dh[j] * tcell[j];
      const T dc = dh[j] * og * (T(1) - tcell[j] * tcell[j]) + dc_next[j];
      const T cp = c_prev != nullptr ? c_prev[j] : T(0);
      dz[j] = dc * gg * ig * (T(1) - ig);
      dz[H + j] = dc * cp * fg * (T(1) - fg);
      dz[2 * H + j] = dc * ig * (T(1) - gg * gg);
      dz[3 * H + j] = dog * og * (T(1) - og);
      dc_next[j] = dc * fg;
    }
    std::fill(dh_next.begin(), dh_next.end(), T(0));
    for (std::size_t r = 0; r < G; ++r) {
      const T g = dz[r];
      db[r] += g;
      T* dwr = dW + r * D;
      const T* wr = W + r * D;
      for (std::size_t d = 0; d < D; ++d) dwr[d] += g * x[d];
      if (din != nullptr) {
        T* dx = din->data() + static_cast<std::size_t>(t) * D;
        for (std::size_t d = 0; d < D; ++d) dx[d] += g * wr[d];
      }
      const T* ur = U + r * H;
      if (h_prev != nullptr) {
        T* dur = dU + r * H;
        for (std::size_t j = 0; j < H; ++j) dur[j] += g * h_prev[j];
      }
      for (std::size_t j = 0; j < H; ++j) dh_next[j] += g * ur[j];
    }
  }
}

// ---- Time-distributed dense + sigmoid ------------------------------------------

template <class T>
void dense_forward(int steps, int dim, int outputs, std::span<const T> p, std::span<const T> in, std::vector<T>& out) {
  const T* W = p.data();
  const T* b = W + static_cast<std::size_t>(outputs) * dim;
  out.assign(static_cast<std::size_t>(steps) * outputs, T(0));
  for (int t = 0; t < steps; ++t) {
    const T* x = in.data() + static_cast<std::size_t>(t) * dim;
    for (int o = 0; o < outputs; ++o) {
      T acc = b[o];
      const T* wr = W + static_cast<std::size_t>(o) * dim;
      for (int d = 0; d < dim; ++d) acc += wr[d] * x[d];
      out[static_cast<std::size_t>(t) * outputs + o] = sigmoid(acc);
    }
  }
}

template <class T>
void dense_backward(int steps, int dim, int outputs, std::span<const T> p, std::span<const T> in,
                    std::span<const T> out, std::span<const T> dout, std::span<T> dp, std::vector<T>* din) {
  const T* W = p.data();
  T* dW = dp.data();
  T* db = dW + static_cast<std::size_t>(outputs) * dim;
  if (din != nullptr) din->assign(static_cast<std::size_t>(steps) * dim, T(0));
  for (int t = 0; t < steps; ++t) {
    const T* x = in.data() + static_cast<std::size_t>(t) * dim;
    for (int o = 0; o < outputs; ++o) {
      const std::size_t k = static_cast<std::size_t>(t) * outputs + o;
      const T dz = dout[k] * out[k] * (T(1) - out[k]);
      if (dz == T(0)) continue;
      db[o] += dz;
      T* dwr = dW + static_cast<std::size_t>(o) * dim;
      const T* wr = W + static_cast<std::size_t>(o) * dim;
      for (int d = 0; d < dim; ++d) dwr[d] += dz * x[d];
      if (din != nullptr) {
        T* dx = din->data() + static_cast<std::size_t>(t) * dim;
        for (int d = 0; d < dim; ++d) dx[d] += dz * wr[d];
      }
    }
  }
}

}  // namespace

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv2d:
      return "conv2d";
    case LayerKind::max_pool2d:
      return "max_pool2d";
    case LayerKind::merge_freq_channels:
      return "merge_freq_channels";
    case LayerKind::lstm:
      return "lstm";
    case LayerKind::dense_sigmoid:
      return "dense_sigmoid";
    case LayerKind::time_max_pool:
      return "time_max_pool";
  }
  return "?";
}

LayerKind layer_kind_from(const std::string& name) {
  for (auto k : {LayerKind::conv2d, LayerKind::max_pool2d, LayerKind::merge_freq_channels, LayerKind::lstm,
                 LayerKind::dense_sigmoid, LayerKind::time_max_pool}) {
    if (to_string(k) == name) return k;
  }
  throw FormatError("unknown layer kind '" + name + "'");
}

ModelSpec ModelSpec::crnn(int frames, int bands, const std::vector<int>& conv_filters,
                          const std::vector<int>& lstm_units, int outputs, std::uint64_t seed) {
  ModelSpec s;
  s.input_frames = frames;
  s.input_bands = bands;
  s.seed = seed;
  for (int c : conv_filters) {
    s.layers.push_back({LayerKind::conv2d, c});
    s.layers.push_back({LayerKind::max_pool2d, 0});
  }
  s.layers.push_back({LayerKind::merge_freq_channels, 0});
  for (int h : lstm_units) s.layers.push_back({LayerKind::lstm, h});
  s.layers.push_back({LayerKind::dense_sigmoid, outputs});
  s.layers.push_back({LayerKind::time_max_pool, 0});
  return s;
}

void to_json(nlohmann::json& j, const ModelSpec& s) {
  auto layers = nlohmann::json::array();
  for (const auto& l : s.layers) layers.push_back({{"kind", to_string(l.kind)}, {"units", l.units}});
  j = {{"input_frames", s.input_frames}, {"input_bands", s.input_bands}, {"layers", layers}, {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, ModelSpec& s) {
  s = ModelSpec{};
  s.input_frames = j.at("input_frames").get<int>();
  s.input_bands = j.at("input_bands").get<int>();
  s.seed = j.value("seed", std::uint64_t{0});
  for (const auto& l : j.at("layers")) {
    s.layers.push_back({layer_kind_from(l.at("kind").get<std::string>()), l.value("units", 0)});
  }
}

std::vector<Shape> infer_shapes(const ModelSpec& spec) {
  if (spec.input_frames <= 0 || spec.input_bands <= 0) throw ShapeError("input frames and bands must be positive", 0);
  if (spec.layers.empty()) throw ShapeError("model has no layers", 0);
  std::vector<Shape> shapes{{1, spec.input_frames, spec.input_bands}};
  for (std::size_t li = 0; li < spec.layers.size(); ++li) {
    const auto& layer = spec.layers[li];
    const Shape& in = shapes.back();
    const int idx = static_cast<int>(li);
    auto need_rank = [&](std::size_t rank) {
      if (in.size() != rank) {
        throw ShapeError(to_string(layer.kind) + " expects a rank-" + std::to_string(rank) + " input, got rank " +
                             std::to_string(in.size()),
                         idx);
      }
    };
    auto need_units = [&] {
      if (layer.units <= 0) throw ShapeError(to_string(layer.kind) + " needs a positive unit count", idx);
    };
    Shape out;
    switch (layer.kind) {
      case LayerKind::conv2d:
        need_rank(3);
        need_units();
        out = {layer.units, in[1], in[2]};
        break;
      case LayerKind::max_pool2d:
        need_rank(3);
        if (in[1] < 2 || in[2] < 2) throw ShapeError("max_pool2d input smaller than 2x2", idx);
        out = {in[0], in[1] / 2, in[2] / 2};
        break;
      case LayerKind::merge_freq_channels:
        need_rank(3);
        out = {in[1], in[0] * in[2]};
        break;
      case LayerKind::lstm:
        need_rank(2);
        need_units();
        out = {in[0], layer.units};
        break;
      case LayerKind::dense_sigmoid:
        need_rank(2);
        need_units();
        out = {in[0], layer.units};
        break;
      case LayerKind::time_max_pool:
        need_rank(2);
        if (li + 1 != spec.layers.size()) throw ShapeError("time_max_pool must be the last layer", idx);
        out = {in[1]};
        break;
    }
    shapes.push_back(out);
  }
  if (shapes.back().size() != 1) throw ShapeError("model must end with time_max_pool", static_cast<int>(spec.layers.size()) - 1);
  return shapes;
}

std::size_t layer_parameter_count(const LayerSpec& layer, const Shape& input) {
  const auto units = static_cast<std::size_t>(layer.units);
  switch (layer.kind) {
    case LayerKind::conv2d:
      return kKernel * kKernel * static_cast<std::size_t>(input[0]) * units + units;
    case LayerKind::lstm:
      return 4 * (static_cast<std::size_t>(input[1]) * units + units * units + units);
    case LayerKind::dense_sigmoid:
      return static_cast<std::size_t>(input[1]) * units + units;
    default:
      return 0;
  }
}

std::size_t count_parameters(const ModelSpec& spec) {
  const auto shapes = infer_shapes(spec);
  std::size_t total = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) total += layer_parameter_count(spec.layers[i], shapes[i]);
  return total;
}

template <class T>
Model<T>::Model(ModelSpec spec) : spec_(std::move(spec)), shapes_(infer_shapes(spec_)) {
  offsets_.push_back(0);
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    offsets_.push_back(offsets_.back() + layer_parameter_count(spec_.layers[i], shapes_[i]));
  }
  params_.assign(offsets_.back(), T(0));
  initialize(spec_.seed);
}

template <class T>
std::size_t Model<T>::input_size() const {
  return volume(shapes_.front());
}

template <class T>
std::size_t Model<T>::output_size() const {
  return volume(shapes_.back());
}

template <class T>
std::span<T> Model<T>::layer_parameters(std::size_t layer) {
  return std::span<T>(params_).subspan(offsets_[layer], offsets_[layer + 1] - offsets_[layer]);
}

template <class T>
std::span<const T> Model<T>::layer_parameters(std::size_t layer) const {
  return std::span<const T>(params_).subspan(offsets_[layer], offsets_[layer + 1] - offsets_[layer]);
}

template <class T>
void Model<T>::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  for (std::size_t li = 0; li < spec_.layers.size(); ++li) {
    const auto& layer = spec_.layers[li];
    const Shape& in = shapes_[li];
    auto p = layer_parameters(li);
    const auto units = static_cast<std::size_t>(layer.units);
    switch (layer.kind) {
      case LayerKind::conv2d: {
        const double limit = std::sqrt(6.0 / (kKernel * kKernel * in[0]));
        const std::size_t weights = p.size() - units;
        for (std::size_t i = 0; i < weights; ++i) p[i] = static_cast<T>(limit * uni(rng));
        break;
      }
      case LayerKind::dense_sigmoid: {
        const double limit = std::sqrt(3.0 / in[1]);
        const std::size_t weights = p.size() - units;
        for (std::size_t i = 0; i < weights; ++i) p[i] = static_cast<T>(limit * uni(rng));
        break;
      }
      case LayerKind::lstm: {
        const double limit = 1.0 / std::sqrt(static_cast<double>(units));
        const std::size_t weights = p.size() - 4 * units;
        for (std::size_t i = 0; i < weights; ++i) p[i] = static_cast<T>(limit * uni(rng));
        for (std::size_t j = 0; j < units; ++j) p[weights + units + j] = T(1);  // forget gate
        break;
      }
      default:
        break;
    }
  }
}

template <class T>
Trace<T> Model<T>::forward(std::span<const T> input) const {
  if (input.size() != input_size()) {
    throw ShapeError("input has " + std::to_string(input.size()) + " values, model expects " +
                         std::to_string(input_size()) + " (" + std::to_string(spec_.input_frames) + " x " +
                         std::to_string(spec_.input_bands) + ")",
                     0);
  }
  const std::size_t L = spec_.layers.size();
  Trace<T> tr;
  tr.activations.resize(L + 1);
  tr.argmax.resize(L);
  tr.cache.resize(L);
  tr.activations[0].assign(input.begin(), input.end());
  for (std::size_t li = 0; li < L; ++li) {
    const auto& layer = spec_.layers[li];
    const Shape& in_shape = shapes_[li];
    const std::span<const T> in = tr.activations[li];
    auto& out = tr.activations[li + 1];
    const auto p = layer_parameters(li);
    switch (layer.kind) {
      case LayerKind::conv2d:
        conv_forward<T>(in_shape, layer.units, p, in, out);
        break;
      case LayerKind::max_pool2d:
        pool2d_forward<T>(in_shape, in, out, tr.argmax[li]);
        break;
      case LayerKind::merge_freq_channels: {
        const int ch = in_shape[0], rows = in_shape[1], cols = in_shape[2];
        out.resize(in.size());
        for (int c = 0; c < ch; ++c) {
          for (int t = 0; t < rows; ++t) {
            for (int f = 0; f < cols; ++f) {
              out[(static_cast<std::size_t>(t) * ch + c) * cols + f] = in[(static_cast<std::size_t>(c) * rows + t) * cols + f];
            }
          }
        }
        break;
      }
      case LayerKind::lstm:
        lstm_forward<T>(in_shape[0], in_shape[1], layer.units, p, in, out, tr.cache[li]);
        break;
      case LayerKind::dense_sigmoid:
        dense_forward<T>(in_shape[0], in_shape[1], layer.units, p, in, out);
        break;
      case LayerKind::time_max_pool: {
        const int steps = in_shape[0], width = in_shape[1];
        out.assign(static_cast<std::size_t>(width), T(0));
        auto& arg = tr.argmax[li];
        arg.assign(static_cast<std::size_t>(width), 0);
        for (int k = 0; k < width; ++k) {
          int best = 0;
          for (int t = 1; t < steps; ++t) {
            if (in[static_cast<std::size_t>(t) * width + k] > in[static_cast<std::size_t>(best) * width + k]) best = t;
          }
          arg[k] = best;
          out[k] = in[static_cast<std::size_t>(best) * width + k];
        }
        break;
      }
    }
  }
  return tr;
}

template <class T>
std::vector<T> Model<T>::predict(std::span<const T> input) const {
  auto tr = forward(input);
  return std::move(tr.activations.back());
}

template <class T>
std::vector<T> Model<T>::backward_impl(const Trace<T>& trace, std::span<const T> output_grad, std::span<T> param_grad,
                                       bool need_input) const {
  if (output_grad.size() != output_size()) throw ShapeError("output gradient size mismatch", static_cast<int>(layer_count()) - 1);
  if (param_grad.size() != params_.size()) throw ShapeError("parameter gradient buffer size mismatch");
  if (trace.activations.size() != layer_count() + 1) throw ShapeError("trace does not belong to this model");
  std::vector<T> grad(output_grad.begin(), output_grad.end());
  std::vector<T> next;
  for (std::size_t li = layer_count(); li-- > 0;) {
    const auto& layer = spec_.layers[li];
    const Shape& in_shape = shapes_[li];
    const std::span<const T> in = trace.activations[li];
    const std::span<const T> out = trace.activations[li + 1];
    const auto p = layer_parameters(li);
    auto dp = param_grad.subspan(offsets_[li], offsets_[li + 1] - offsets_[li]);
    std::vector<T>* din = (li > 0 || need_input) ? &next : nullptr;
    switch (layer.kind) {
      case LayerKind::conv2d:
        conv_backward<T>(in_shape, layer.units, p, in, out, grad, dp, din);
        break;
      case LayerKind::max_pool2d:
        if (din != nullptr) {
          din->assign(in.size(), T(0));
          const auto& arg = trace.argmax[li];
          for (std::size_t k = 0; k < grad.size(); ++k) (*din)[static_cast<std::size_t>(arg[k])] += grad[k];
        }
        break;
      case LayerKind::merge_freq_channels:
        if (din != nullptr) {
          const int ch = in_shape[0], rows = in_shape[1], cols = in_shape[2];
          din->assign(in.size(), T(0));
          for (int c = 0; c < ch; ++c) {
            for (int t = 0; t < rows; ++t) {
              for (int f = 0; f < cols; ++f) {
                (*din)[(static_cast<std::size_t>(c) * rows + t) * cols + f] =
                    grad[(static_cast<std::size_t>(t) * ch + c) * cols + f];
              }
            }
          }
        }
        break;
      case LayerKind::lstm:
        lstm_backward<T>(in_shape[0], in_shape[1], layer.units, p, in, out, trace.cache[li], grad, dp, din);
        break;
      case LayerKind::dense_sigmoid:
        dense_backward<T>(in_shape[0], in_shape[1], layer.units, p, in, out, grad, dp, din);
        break;
      case LayerKind::time_max_pool:
        if (din != nullptr) {
          const int width = in_shape[1];
          din->assign(in.size(), T(0));
          const auto& arg = trace.argmax[li];
          for (int k = 0; k < width; ++k) (*din)[static_cast<std::size_t>(arg[k]) * width + k] = grad[k];
        }
        break;
    }
    if (din == nullptr) return {};
    grad.swap(next);
  }
  return grad;
}

template <class T>
void Model<T>::backward(const Trace<T>& trace, std::span<const T> output_grad, std::span<T> param_grad) const {
  backward_impl(trace, output_grad, param_grad, false);
}

template <class T>
std::vector<T> Model<T>::backward_with_input(const Trace<T>& trace, std::span<const T> output_grad,
                                             std::span<T> param_grad) const {
  return backward_impl(trace, output_grad, param_grad, true);
}

template class Model<float>;
template class Model<double>;

namespace {

template <class P, class Y>
LossReport bce_impl(std::span<const P> probabilities, std::span<const Y> targets) {
  if (probabilities.size() != targets.size() || probabilities.empty()) {
    throw ShapeError("bce_loss: probabilities and targets differ in length");
  }
  LossReport r;
  const double n = static_cast<double>(probabilities.size());
  r.probabilities.reserve(probabilities.size());
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    const double p_raw = probabilities[i];
    const double p = std::clamp(p_raw, kProbClamp, 1.0 - kProbClamp);
    const double y = targets[i];
    r.loss -= (y * std::log(p) + (1.0 - y) * std::log(1.0 - p)) / n;
    r.grad.push_back((p - y) / (p * (1.0 - p)) / n);
    r.probabilities.push_back(p_raw);
    r.predictions.push_back(p_raw >= kDecisionThreshold);
  }
  return r;
}

}  // namespace

LossReport bce_loss(std::span<const float> probabilities, std::span<const float> targets) {
  return bce_impl(probabilities, targets);
}

LossReport bce_loss(std::span<const double> probabilities, std::span<const double> targets) {
  return bce_impl(probabilities, targets);
}

double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

namespace {

void record(GradCheckReport& report, double analytic, double numeric, std::size_t index) {
  const double err = relative_error(analytic, numeric);
  if (report.checked == 0 || err > report.max_relative_error) {
    report.max_relative_error = err;
    report.worst_index = index;
    report.worst_analytic = analytic;
    report.worst_numeric = numeric;
  }
  ++report.checked;
}

}  // namespace

GradCheckReport gradient_check(Model<double>& model, std::span<const double> input, std::span<const double> targets,
                               double step) {
  auto loss_of = [&] { return bce_loss(std::span<const double>(model.predict(input)), targets).loss; };
  const auto trace = model.forward(input);
  const auto loss = bce_loss(trace.output(), targets);
  std::vector<double> out_grad(loss.grad.begin(), loss.grad.end());
  std::vector<double> analytic(model.parameter_count(), 0.0);
  model.backward(trace, out_grad, analytic);

  GradCheckReport report;
  auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + step;
    const double up = loss_of();
    params[i] = saved - step;
    const double down = loss_of();
    params[i] = saved;
    record(report, analytic[i], (up - down) / (2.0 * step), i);
  }
  return report;
}

GradCheckReport gradient_check_projection(Model<double>& model, std::vector<double> input,
                                          std::span<const double> weights, double step) {
  if (weights.size() != model.output_size()) throw ShapeError("projection weights do not match the model output");
  auto loss_of = [&] {
    const auto out = model.predict(input);
    double sum = 0.0;
    for (std::size_t k = 0; k < out.size(); ++k) sum += weights[k] * out[k];
    return sum;
  };
  const auto trace = model.forward(input);
  std::vector<double> param_grad(model.parameter_count(), 0.0);
  const auto input_grad = model.backward_with_input(trace, weights, param_grad);

  GradCheckReport report;
  auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + step;
    const double up = loss_of();
    params[i] = saved - step;
    const double down = loss_of();
    params[i] = saved;
    record(report, param_grad[i], (up - down) / (2.0 * step), i);
  }
  for (std::size_t i = 0; i < input.size(); ++i) {
    const double saved = input[i];
    input[i] = saved + step;
    const double up = loss_of();
    input[i] = saved - step;
    const double down = loss_of();
    input[i] = saved;
    record(report, input_grad[i], (up - down) / (2.0 * step), params.size() + i);
  }
  return report;
}

std::vector<GradCheckCase> gradient_check_suite(std::uint64_t seed, double step) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  auto random_vector = [&](std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = uni(rng);
    return v;
  };
  using L = LayerKind;
  const std::vector<std::pair<std::string, std::vector<LayerSpec>>> isolated{
      {"conv2d", {{L::conv2d, 3}, {L::merge_freq_channels, 0}, {L::time_max_pool, 0}}},
      {"max_pool2d", {{L::max_pool2d, 0}, {L::merge_freq_channels, 0}, {L::time_max_pool, 0}}},
      {"merge_freq_channels", {{L::merge_freq_channels, 0}, {L::time_max_pool, 0}}},
      {"lstm", {{L::merge_freq_channels, 0}, {L::lstm, 4}, {L::time_max_pool, 0}}},
      {"dense_sigmoid", {{L::merge_freq_channels, 0}, {L::dense_sigmoid, 3}, {L::time_max_pool, 0}}},
      {"time_max_pool", {{L::merge_freq_channels, 0}, {L::time_max_pool, 0}}},
  };
  std::vector<GradCheckCase> out;
  for (const auto& [name, layers] : isolated) {
    ModelSpec spec{6, 5, layers, rng()};
    Model<double> model(spec);
    // Spread the biases too so ReLU and max routes are well away from ties.
    for (auto& p : model.parameters()) p = 0.5 * uni(rng);
    const auto input = random_vector(model.input_size());
    const auto weights = random_vector(model.output_size());
    out.push_back({name, gradient_check_projection(model, input, weights, step)});
  }
  Model<double> composed(ModelSpec::crnn(8, 8, {2, 2}, {4}, 3, rng()));
  const auto input = random_vector(composed.input_size());
  const std::vector<double> targets{1.0, 0.0, 1.0};
  out.push_back({"composed_crnn", gradient_check(composed, input, targets, step)});
  return out;
}

}  // namespace seld::nn
