#include "semg/model.hpp"

#include <zlib.h>

#include <cmath>
#include <random>

#include "semg/binio.hpp"
#include "semg/errors.hpp"

namespace semg::model {

namespace {

constexpr std::string_view kModelMagic = "SMDL";
constexpr std::uint32_t kModelVersion = 1;

template <typename T>
void add(Tensor<T>& a, const Tensor<T>& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

template <typename T>
void he_normal(std::span<T> w, std::size_t fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (auto& v : w) v = static_cast<T>(n(rng));
}

template <typename To, typename From>
std::vector<To> cast_vec(const std::vector<From>& v) {
  return std::vector<To>(v.begin(), v.end());
}

template <typename To, typename From>
nn::ConvParams<To> cast_conv(const nn::ConvParams<From>& p) {
  return {nn::tensor_cast<To>(p.kernel), cast_vec<To>(p.bias)};
}

template <typename To, typename From>
nn::DenseParams<To> cast_dense(const nn::DenseParams<From>& p) {
  return {nn::tensor_cast<To>(p.weights), cast_vec<To>(p.bias)};
}

template <typename To, typename From>
nn::BatchNormParams<To> cast_bn(const nn::BatchNormParams<From>& p) {
  return {cast_vec<To>(p.gamma), cast_vec<To>(p.beta), cast_vec<To>(p.running_mean), cast_vec<To>(p.running_var),
          p.eps, p.momentum};
}

}  // namespace

// ---- config -------------------------------------------------------------------------

void ModelConfig::validate() const {
  if (stem_channels == 0 || feature_channels == 0 || attention_hidden == 0) {
    throw InputError("model channel counts must be positive");
  }
  if (kernel_h % 2 == 0 || kernel_w % 2 == 0) throw InputError("model kernel sizes must be odd");
  if (input_freq == 0 || input_frames == 0 || input_channels == 0) throw InputError("model input shape must be positive");
  if (n_classes != 3) throw InputError("model n_classes must be 3");
}

bool ModelConfig::same_architecture(const ModelConfig& o) const {
  auto a = *this;
  a.seed = o.seed;
  return a == o;
}

ModelConfig reduced_config() {
  ModelConfig c;
  c.stem_channels = 2;
  c.feature_channels = 4;
  c.attention_hidden = 4;
  c.input_freq = 9;
  c.input_frames = 6;
  return c;
}

// ---- buffers ------------------------------------------------------------------------

template <typename T>
std::vector<std::pair<std::string, std::span<T>>> trainable_buffers(ModelState<T>& s) {
  std::vector<std::pair<std::string, std::span<T>>> out;
  auto conv = [&](const std::string& name, nn::ConvParams<T>& p) {
    out.emplace_back(name + ".kernel", p.kernel.span());
    out.emplace_back(name + ".bias", std::span<T>(p.bias));
  };
  auto bn = [&](const std::string& name, nn::BatchNormParams<T>& p) {
    out.emplace_back(name + ".gamma", std::span<T>(p.gamma));
    out.emplace_back(name + ".beta", std::span<T>(p.beta));
  };
  auto dense = [&](const std::string& name, nn::DenseParams<T>& p) {
    out.emplace_back(name + ".weights", p.weights.span());
    out.emplace_back(name + ".bias", std::span<T>(p.bias));
  };
  conv("stem.conv", s.stem.conv);
  bn("stem.bn", s.stem.bn);
  conv("feature.conv1", s.feature.conv1);
  bn("feature.bn1", s.feature.bn1);
  conv("feature.conv2", s.feature.conv2);
  bn("feature.bn2", s.feature.bn2);
  conv("feature.proj", s.feature.proj);
  dense("attention.fc1", s.attention.fc1);
  dense("attention.fc2", s.attention.fc2);
  dense("head", s.head);
  return out;
}

template <typename T>
std::vector<std::pair<std::string, std::span<T>>> state_buffers(ModelState<T>& s) {
  std::vector<std::pair<std::string, std::span<T>>> out;
  auto bn = [&](const std::string& name, nn::BatchNormParams<T>& p) {
    out.emplace_back(name + ".running_mean", std::span<T>(p.running_mean));
    out.emplace_back(name + ".running_var", std::span<T>(p.running_var));
  };
  bn("stem.bn", s.stem.bn);
  bn("feature.bn1", s.feature.bn1);
  bn("feature.bn2", s.feature.bn2);
  out.emplace_back("standardization.mean", std::span<T>(s.standardization.mean));
  out.emplace_back("standardization.std", std::span<T>(s.standardization.std));
  return out;
}

template <typename T>
std::size_t trainable_param_count(const ModelState<T>& s) {
  std::size_t n = 0;
  for (const auto& [name, buf] : trainable_buffers(const_cast<ModelState<T>&>(s))) n += buf.size();
  return n;
}

// ---- init -----------------------------------------------------------------------------

template <typename T>
ModelState<T> init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelState<T> s;
  s.config = config;
  s.config.seed = seed;
  const std::size_t kh = config.kernel_h, kw = config.kernel_w;
  const std::size_t cin = config.input_channels, cs = config.stem_channels, cf = config.feature_channels;
  const std::size_t F = config.input_freq, Tn = config.input_frames, hid = config.attention_hidden;

  s.stem.conv = nn::ConvParams<T>::zeros(kh, kw, cin, cs);
  s.stem.bn = nn::BatchNormParams<T>::identity(cs);
  s.feature.conv1 = nn::ConvParams<T>::zeros(kh, kw, cs, cf);
  s.feature.bn1 = nn::BatchNormParams<T>::identity(cf);
  s.feature.conv2 = nn::ConvParams<T>::zeros(kh, kw, cf, cf);
  s.feature.bn2 = nn::BatchNormParams<T>::identity(cf);
  s.feature.proj = nn::ConvParams<T>::zeros(1, 1, cs, cf);
  s.attention.fc1 = nn::DenseParams<T>::zeros(F, hid);
  s.attention.fc2 = nn::DenseParams<T>::zeros(hid, F);
  s.head = nn::DenseParams<T>::zeros(F * Tn * (cs + cf), config.n_classes);
  s.standardization = {std::vector<T>(cin, T{0}), std::vector<T>(cin, T{1})};

  std::mt19937_64 rng(seed);
  he_normal(s.stem.conv.kernel.span(), kh * kw * cin, rng);
  he_normal(s.feature.conv1.kernel.span(), kh * kw * cs, rng);
  he_normal(s.feature.conv2.kernel.span(), kh * kw * cf, rng);
  he_normal(s.feature.proj.kernel.span(), cs, rng);
  he_normal(s.attention.fc1.weights.span(), F, rng);
  he_normal(s.attention.fc2.weights.span(), hid, rng);
  he_normal(s.head.weights.span(), s.head.n_in(), rng);
  return s;
}

template <typename To, typename From>
ModelState<To> cast_state(const ModelState<From>& s) {
  ModelState<To> o;
  o.config = s.config;
  o.stem = {cast_conv<To>(s.stem.conv), cast_bn<To>(s.stem.bn)};
  o.feature = {cast_conv<To>(s.feature.conv1), cast_bn<To>(s.feature.bn1), cast_conv<To>(s.feature.conv2),
               cast_bn<To>(s.feature.bn2), cast_conv<To>(s.feature.proj)};
  o.attention = {cast_dense<To>(s.attention.fc1), cast_dense<To>(s.attention.fc2)};
  o.head = cast_dense<To>(s.head);
  o.standardization = {cast_vec<To>(s.standardization.mean), cast_vec<To>(s.standardization.std)};
  return o;
}

template <typename T>
void fit_standardization(ModelState<T>& s, std::span<const dsp::FeatureTensor> features) {
  const std::size_t C = dsp::FeatureTensor::channels;
  if (features.empty()) throw DatasetError("cannot fit standardization on an empty training set");
  std::vector<double> sum(C, 0.0), sq(C, 0.0);
  double n = 0;
  for (const auto& ft : features) {
    for (std::size_t i = 0; i < ft.values.size(); i += C)
      for (std::size_t c = 0; c < C; ++c) sum[c] += ft.values[i + c];
    n += static_cast<double>(ft.values.size() / C);
  }
  for (std::size_t c = 0; c < C; ++c) sum[c] /= n;
  for (const auto& ft : features)
    for (std::size_t i = 0; i < ft.values.size(); i += C)
      for (std::size_t c = 0; c < C; ++c) {
        const double d = ft.values[i + c] - sum[c];
        sq[c] += d * d;
      }
  s.standardization.mean.resize(C);
  s.standardization.std.resize(C);
  for (std::size_t c = 0; c < C; ++c) {
    const double sd = std::sqrt(sq[c] / n);
    s.standardization.mean[c] = static_cast<T>(sum[c]);
    s.standardization.std[c] = static_cast<T>(sd > 0 ? sd : 1.0);
  }
}

template <typename T>
Tensor<T> stack_features(std::span<const dsp::FeatureTensor> features, std::span<const std::size_t> indices) {
  const std::size_t B = indices.empty() ? features.size() : indices.size();
  if (B == 0) throw InputError("cannot stack an empty feature batch");
  const auto& first = features[indices.empty() ? 0 : indices[0]];
  const std::size_t per = first.size();
  Tensor<T> x({B, first.freq, first.frames, dsp::FeatureTensor::channels});
  for (std::size_t b = 0; b < B; ++b) {
    const auto& ft = features[indices.empty() ? b : indices[b]];
    if (ft.size() != per || ft.values.size() != per) throw InputError("feature tensors have mixed shapes");
    std::copy(ft.values.begin(), ft.values.end(), x.data() + b * per);
  }
  return x;
}

// ---- stem -----------------------------------------------------------------------------

template <typename T>
Tensor<T> stem_forward(const Tensor<T>& x, StemParams<T>& p, Mode mode, StemCache<T>* cache) {
  auto c = nn::conv2d_forward(x, p.conv);
  auto b = nn::batchnorm_forward(c, p.bn, mode, cache ? &cache->bn : nullptr);
  auto y = nn::relu_forward(b);
  if (cache) {
    cache->x = x;
    cache->pre_relu = std::move(b);
  }
  return y;
}

template <typename T>
Tensor<T> stem_backward(const StemCache<T>& cache, const StemParams<T>& p, const Tensor<T>& gy, StemParams<T>& grads) {
  auto gb = nn::relu_backward(cache.pre_relu, gy);
  nn::BatchNormGrads<T> gbn;
  auto gc = nn::batchnorm_backward(cache.bn, p.bn, gb, gbn);
  grads.bn.gamma = std::move(gbn.gamma);
  grads.bn.beta = std::move(gbn.beta);
  return nn::conv2d_backward(cache.x, p.conv, gc, grads.conv);
}

// ---- feature block ----------------------------------------------------------------------

template <typename T>
Tensor<T> feature_block_forward(const Tensor<T>& x, FeatureBlockParams<T>& p, Mode mode, FeatureBlockCache<T>* cache) {
  auto c1 = nn::conv2d_forward(x, p.conv1);
  auto b1 = nn::batchnorm_forward(c1, p.bn1, mode, cache ? &cache->bn1 : nullptr);
  auto r1 = nn::relu_forward(b1);
  auto c2 = nn::conv2d_forward(r1, p.conv2);
  auto sum = nn::batchnorm_forward(c2, p.bn2, mode, cache ? &cache->bn2 : nullptr);
  add(sum, nn::conv2d_forward(x, p.proj));
  auto y = nn::relu_forward(sum);
  if (cache) {
    cache->x = x;
    cache->b1 = std::move(b1);
    cache->r1 = std::move(r1);
    cache->sum = std::move(sum);
  }
  return y;
}

template <typename T>
Tensor<T> feature_block_backward(const FeatureBlockCache<T>& cache, const FeatureBlockParams<T>& p, const Tensor<T>& gy,
                                 FeatureBlockParams<T>& grads) {
  auto gsum = nn::relu_backward(cache.sum, gy);
  auto gx = nn::conv2d_backward(cache.x, p.proj, gsum, grads.proj);
  nn::BatchNormGrads<T> g2;
  auto gc2 = nn::batchnorm_backward(cache.bn2, p.bn2, gsum, g2);
  grads.bn2.gamma = std::move(g2.gamma);
  grads.bn2.beta = std::move(g2.beta);
  auto gr1 = nn::conv2d_backward(cache.r1, p.conv2, gc2, grads.conv2);
  auto gb1 = nn::relu_backward(cache.b1, gr1);
  nn::BatchNormGrads<T> g1;
  auto gc1 = nn::batchnorm_backward(cache.bn1, p.bn1, gb1, g1);
  grads.bn1.gamma = std::move(g1.gamma);
  grads.bn1.beta = std::move(g1.beta);
  add(gx, nn::conv2d_backward(cache.x, p.conv1, gc1, grads.conv1));
  return gx;
}

// ---- attention block ----------------------------------------------------------------------

template <typename T>
AttentionOutput<T> attention_block_forward(const Tensor<T>& x, const AttentionParams<T>& p, AttentionCache<T>* cache) {
  if (x.rank() != 4 || x.dim(1) != p.fc1.n_in() || p.fc2.n_out() != x.dim(1)) {
    throw InputError("attention block shape mismatch: input " + nn::shape_str(x.shape()));
  }
  const std::size_t B = x.dim(0), F = x.dim(1), inner = x.dim(2) * x.dim(3);
  Tensor<T> desc({B, F});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t f = 0; f < F; ++f) {
      const T* row = x.data() + (b * F + f) * inner;
      double acc = 0.0;
      for (std::size_t k = 0; k < inner; ++k) acc += static_cast<double>(row[k]);
      desc[b * F + f] = static_cast<T>(acc / static_cast<double>(inner));
    }
  auto h_pre = nn::dense_forward(desc, p.fc1);
  auto h = nn::relu_forward(h_pre);
  auto w = nn::sigmoid_forward(nn::dense_forward(h, p.fc2));
  Tensor<T> y(x.shape());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t f = 0; f < F; ++f) {
      const T wf = w[b * F + f];
      const std::size_t off = (b * F + f) * inner;
      for (std::size_t k = 0; k < inner; ++k) y[off + k] = wf * x[off + k];
    }
  if (cache) {
    cache->x = x;
    cache->desc = std::move(desc);
    cache->h_pre = std::move(h_pre);
    cache->h = std::move(h);
    cache->w = w;
  }
  return {std::move(y), std::move(w)};
}

template <typename T>
Tensor<T> attention_block_backward(const AttentionCache<T>& cache, const AttentionParams<T>& p, const Tensor<T>& gy,
                                   AttentionParams<T>& grads) {
  const auto& x = cache.x;
  const std::size_t B = x.dim(0), F = x.dim(1), inner = x.dim(2) * x.dim(3);
  Tensor<T> gw({B, F});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t f = 0; f < F; ++f) {
      const std::size_t off = (b * F + f) * inner;
      double acc = 0.0;
      for (std::size_t k = 0; k < inner; ++k) acc += static_cast<double>(gy[off + k]) * static_cast<double>(x[off + k]);
      gw[b * F + f] = static_cast<T>(acc);
    }
  auto gz = nn::sigmoid_backward(cache.w, gw);
  auto gh = nn::dense_backward(cache.h, p.fc2, gz, grads.fc2);
  auto gh_pre = nn::relu_backward(cache.h_pre, gh);
  auto gdesc = nn::dense_backward(cache.desc, p.fc1, gh_pre, grads.fc1);
  Tensor<T> gx(x.shape());
  const T inv = static_cast<T>(1.0 / static_cast<double>(inner));
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t f = 0; f < F; ++f) {
      const T wf = cache.w[b * F + f];
      const T gd = gdesc[b * F + f] * inv;
      const std::size_t off = (b * F + f) * inner;
      for (std::size_t k = 0; k < inner; ++k) gx[off + k] = wf * gy[off + k] + gd;
    }
  return gx;
}

// ---- network ------------------------------------------------------------------------------

namespace {

template <typename T>
void check_input(const ModelConfig& c, const Tensor<T>& x) {
  if (x.rank() != 4 || x.dim(1) != c.input_freq || x.dim(2) != c.input_frames || x.dim(3) != c.input_channels) {
    throw InputError("model input must be (batch, " + std::to_string(c.input_freq) + ", " +
                     std::to_string(c.input_frames) + ", " + std::to_string(c.input_channels) + "), got " +
                     nn::shape_str(x.shape()));
  }
}

template <typename T>
Tensor<T> standardize(const ModelState<T>& s, const Tensor<T>& x) {
  if (!s.config.standardize) return x;
  const std::size_t C = x.dim(3);
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); i += C)
    for (std::size_t c = 0; c < C; ++c) y[i + c] = (x[i + c] - s.standardization.mean[c]) / s.standardization.std[c];
  return y;
}

template <typename T>
ForwardResult<T> forward_impl(ModelState<T>& s, const Tensor<T>& x, Mode mode, ForwardCache<T>* cache) {
  check_input(s.config, x);
  auto xs = standardize(s, x);
  auto stem = stem_forward(xs, s.stem, mode, cache ? &cache->stem : nullptr);
  auto att = attention_block_forward(stem, s.attention, cache ? &cache->attention : nullptr);
  auto feat = feature_block_forward(stem, s.feature, mode, cache ? &cache->feature : nullptr);
  auto flat = nn::flatten(nn::concat_channels(att.y, feat));
  auto logits = nn::dense_forward(flat, s.head);
  auto probs = nn::softmax(logits);
  if (cache) {
    cache->x_std = std::move(xs);
    cache->stem_out = std::move(stem);
    cache->flat = std::move(flat);
  }
  return {std::move(logits), std::move(probs), std::move(att.weights)};
}

}  // namespace

template <typename T>
ForwardResult<T> forward(ModelState<T>& s, const Tensor<T>& x, Mode mode, ForwardCache<T>* cache) {
  return forward_impl(s, x, mode, cache);
}

template <typename T>
ForwardResult<T> forward_infer(const ModelState<T>& s, const Tensor<T>& x) {
  // Infer mode reads BN running stats without writing them.
  return forward_impl<T>(const_cast<ModelState<T>&>(s), x, Mode::Infer, nullptr);
}

template <typename T>
Tensor<T> backward(const ModelState<T>& s, const ForwardCache<T>& cache, const Tensor<T>& grad_logits, ModelGrads<T>& g) {
  g.config = s.config;
  auto gflat = nn::dense_backward(cache.flat, s.head, grad_logits, g.head);
  const auto& so = cache.stem_out;
  nn::Shape cat_shape{so.dim(0), so.dim(1), so.dim(2), static_cast<std::size_t>(s.config.stem_channels + s.config.feature_channels)};
  auto [ga, gf] = nn::split_channels(nn::unflatten(gflat, cat_shape), s.config.stem_channels);
  auto gs = attention_block_backward(cache.attention, s.attention, ga, g.attention);
  add(gs, feature_block_backward(cache.feature, s.feature, gf, g.feature));
  auto gx = stem_backward(cache.stem, s.stem, gs, g.stem);
  if (s.config.standardize) {
    const std::size_t C = gx.dim(3);
    for (std::size_t i = 0; i < gx.size(); i += C)
      for (std::size_t c = 0; c < C; ++c) gx[i + c] /= s.standardization.std[c];
  }
  return gx;
}

int predict(std::span<const double> probs) {
  int best = 0;
  for (std::size_t k = 1; k < probs.size(); ++k) {
    if (probs[k] > probs[static_cast<std::size_t>(best)]) best = static_cast<int>(k);
  }
  return best;
}

// ---- serialization -------------------------------------------------------------------------

template <typename T>
std::vector<std::uint8_t> serialize(const ModelState<T>& s) {
  auto& ms = const_cast<ModelState<T>&>(s);
  binio::Writer w;
  w.magic(kModelMagic);
  w.u32(kModelVersion);
  const auto& c = s.config;
  for (auto v : {c.stem_channels, c.feature_channels, c.attention_hidden, c.kernel_h, c.kernel_w, c.input_freq,
                 c.input_frames, c.input_channels, c.n_classes}) {
    w.u32(v);
  }
  w.u32(static_cast<std::uint32_t>(c.seed));
  w.u32(static_cast<std::uint32_t>(c.seed >> 32));
  w.u8(c.standardize ? 1 : 0);
  for (auto& [name, buf] : state_buffers(ms)) {
    w.u32(static_cast<std::uint32_t>(buf.size()));
    for (T v : buf) w.f32(static_cast<float>(v));
  }
  for (auto& [name, buf] : trainable_buffers(ms)) {
    w.u32(static_cast<std::uint32_t>(buf.size()));
    for (T v : buf) w.f32(static_cast<float>(v));
  }
  const auto crc = static_cast<std::uint32_t>(crc32(0L, w.bytes().data(), static_cast<uInt>(w.bytes().size())));
  w.u32(crc);
  return std::move(w.bytes());
}

template <typename T>
ModelState<T> deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::string_view(reinterpret_cast<const char*>(bytes.data()), 4) != kModelMagic) {
    throw InputError("not a model file (bad magic)");
  }
  if (bytes.size() < 12) throw ArtifactMismatch("model file checksum failure (truncated)");
  const auto body = bytes.first(bytes.size() - 4);
  binio::Reader tail(bytes.last(4));
  const std::uint32_t stored = tail.u32();
  const auto actual = static_cast<std::uint32_t>(crc32(0L, body.data(), static_cast<uInt>(body.size())));
  if (stored != actual) throw ArtifactMismatch("model file checksum failure");

  binio::Reader r(body);
  r.magic(kModelMagic);
  const std::uint32_t version = r.u32();
  if (version != kModelVersion) {
    throw ArtifactMismatch("model file version " + std::to_string(version) + " (expected " +
                           std::to_string(kModelVersion) + ")");
  }
  ModelConfig c;
  c.stem_channels = r.u32();
  c.feature_channels = r.u32();
  c.attention_hidden = r.u32();
  c.kernel_h = r.u32();
  c.kernel_w = r.u32();
  c.input_freq = r.u32();
  c.input_frames = r.u32();
  c.input_channels = r.u32();
  c.n_classes = r.u32();
  const std::uint64_t lo = r.u32();
  const std::uint64_t hi = r.u32();
  c.seed = lo | (hi << 32);
  c.standardize = r.u8() != 0;
  try {
    c.validate();
  } catch (const InputError& e) {
    throw ArtifactMismatch(std::string("model file has invalid config: ") + e.what());
  }
  auto s = init<T>(c, c.seed);
  auto read_into = [&](const std::string& name, std::span<T> buf) {
    const std::uint32_t n = r.u32();
    if (n != buf.size()) {
      throw ArtifactMismatch("model file buffer " + name + " has " + std::to_string(n) + " values, config implies " +
                             std::to_string(buf.size()));
    }
    for (auto& v : buf) v = static_cast<T>(r.f32());
  };
  for (auto& [name, buf] : state_buffers(s)) read_into(name, buf);
  for (auto& [name, buf] : trainable_buffers(s)) read_into(name, buf);
  if (r.remaining() != 0) throw ArtifactMismatch("model file has trailing data");
  return s;
}

template <typename T>
void save(const ModelState<T>& s, const std::filesystem::path& path) {
  binio::write_file_atomic(path, serialize(s));
}

template <typename T>
ModelState<T> load(const std::filesystem::path& path) {
  return deserialize<T>(binio::read_file(path));
}

template <typename T>
ModelState<T> load(const std::filesystem::path& path, const ModelConfig& expected) {
  auto s = load<T>(path);
  if (!s.config.same_architecture(expected)) {
    throw ArtifactMismatch("model file " + path.string() + " was built with a different configuration");
  }
  return s;
}

#define SEMG_INSTANTIATE_MODEL(T)                                                                                   \
  template std::vector<std::pair<std::string, std::span<T>>> trainable_buffers(ModelState<T>&);                      \
  template std::vector<std::pair<std::string, std::span<T>>> state_buffers(ModelState<T>&);                          \
  template std::size_t trainable_param_count(const ModelState<T>&);                                                   \
  template ModelState<T> init<T>(const ModelConfig&, std::uint64_t);                                                 \
  template void fit_standardization(ModelState<T>&, std::span<const dsp::FeatureTensor>);                            \
  template Tensor<T> stack_features<T>(std::span<const dsp::FeatureTensor>, std::span<const std::size_t>);           \
  template Tensor<T> stem_forward(const Tensor<T>&, StemParams<T>&, Mode, StemCache<T>*);                             \
  template Tensor<T> stem_backward(const StemCache<T>&, const StemParams<T>&, const Tensor<T>&, StemParams<T>&);      \
  template Tensor<T> feature_block_forward(const Tensor<T>&, FeatureBlockParams<T>&, Mode, FeatureBlockCache<T>*);    \
  template Tensor<T> feature_block_backward(const FeatureBlockCache<T>&, const FeatureBlockParams<T>&,                \
                                            const Tensor<T>&, FeatureBlockParams<T>&);                                \
  template AttentionOutput<T> attention_block_forward(const Tensor<T>&, const AttentionParams<T>&,                     \
                                                      AttentionCache<T>*);                                            \
  template Tensor<T> attention_block_backward(const AttentionCache<T>&, const AttentionParams<T>&, const Tensor<T>&,  \
                                              AttentionParams<T>&);                                                   \
  template ForwardResult<T> forward(ModelState<T>&, const Tensor<T>&, Mode, ForwardCache<T>*);                        \
  template ForwardResult<T> forward_infer(const ModelState<T>&, const Tensor<T>&);                                     \
  template Tensor<T> backward(const ModelState<T>&, const ForwardCache<T>&, const Tensor<T>&, ModelGrads<T>&);         \
  template std::vector<std::uint8_t> serialize(const ModelState<T>&);                                                 \
  template ModelState<T> deserialize<T>(std::span<const std::uint8_t>);                                               \
  template void save(const ModelState<T>&, const std::filesystem::path&);                                             \
  template ModelState<T> load<T>(const std::filesystem::path&);                                                       \
  template ModelState<T> load<T>(const std::filesystem::path&, const ModelConfig&);

SEMG_INSTANTIATE_MODEL(float)
SEMG_INSTANTIATE_MODEL(double)
#undef SEMG_INSTANTIATE_MODEL

template ModelState<float> cast_state<float, double>(const ModelState<double>&);
template ModelState<double> cast_state<double, float>(const ModelState<float>&);
template ModelState<float> cast_state<float, float>(const ModelState<float>&);
template ModelState<double> cast_state<double, double>(const ModelState<double>&);

}  // namespace semg::model
