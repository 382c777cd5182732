#include "tepo/qnet.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "tepo/rng.hpp"
#include "tepo/simd.hpp"

namespace tepo::nn {

NetSpec NetSpec::default_qnet(int channels, int height, int width) {
  NetSpec s;
  s.in_channels = channels;
  s.in_height = height;
  s.in_width = width;
  s.layers = {
      {LayerKind::Conv, 8, 3, 1, 1},  {LayerKind::Relu},
      {LayerKind::Conv, 16, 3, 2, 1}, {LayerKind::Relu},
      {LayerKind::Conv, 16, 3, 2, 1}, {LayerKind::Relu},
      {LayerKind::Flatten},           {LayerKind::Dense, 64},
      {LayerKind::Relu},              {LayerKind::Dense, 4},
  };
  return s;
}

std::string NetSpec::to_text() const {
  std::ostringstream os;
  os << "input " << in_channels << ' ' << in_height << ' ' << in_width << '\n';
  for (const auto& l : layers) {
    switch (l.kind) {
      case LayerKind::Conv:
        os << "conv " << l.out << ' ' << l.kernel << ' ' << l.stride << ' ' << l.pad << '\n';
        break;
      case LayerKind::Relu: os << "relu\n"; break;
      case LayerKind::Flatten: os << "flatten\n"; break;
      case LayerKind::Dense: os << "dense " << l.out << '\n'; break;
    }
  }
  return os.str();
}

NetSpec NetSpec::parse(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  NetSpec s;
  bool have_input = false;
  int lineno = 0;
  auto fail = [&](const std::string& why) {
    throw FormatError("layer spec line " + std::to_string(lineno) + ": " + why);
  };
  while (std::getline(is, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string word;
    if (!(ls >> word)) continue;
    std::string extra;
    if (word == "input") {
      if (have_input) fail("duplicate input line");
      if (!(ls >> s.in_channels >> s.in_height >> s.in_width)) fail("expected 'input C H W'");
      have_input = true;
    } else if (!have_input) {
      fail("first line must be 'input C H W'");
    } else if (word == "conv") {
      LayerSpec l{LayerKind::Conv};
      if (!(ls >> l.out >> l.kernel >> l.stride >> l.pad)) fail("expected 'conv OUT K S P'");
      s.layers.push_back(l);
    } else if (word == "relu") {
      s.layers.push_back({LayerKind::Relu});
    } else if (word == "flatten") {
      s.layers.push_back({LayerKind::Flatten});
    } else if (word == "dense") {
      LayerSpec l{LayerKind::Dense};
      if (!(ls >> l.out)) fail("expected 'dense OUT'");
      s.layers.push_back(l);
    } else {
      fail("unknown layer '" + word + "'");
    }
    if (ls >> extra) fail("trailing tokens");
  }
  if (!have_input) throw FormatError("layer spec has no input line");
  return s;
}

void Gradients::zero() {
  for (auto& l : layers) {
    std::fill(l.weight.begin(), l.weight.end(), 0.0);
    std::fill(l.bias.begin(), l.bias.end(), 0.0);
  }
}

namespace {

constexpr std::size_t kPixelBlock = 256;

std::size_t product(const std::vector<int>& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

void im2col(const double* in, int c, int h, int w, int k, int s, int p, int ho, int wo,
            double* col) {
  const std::size_t plane = static_cast<std::size_t>(ho) * wo;
  for (int ci = 0; ci < c; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        double* row = col + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * plane;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * s - p + ky;
          double* dst = row + static_cast<std::size_t>(oy) * wo;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + wo, 0.0);
            continue;
          }
          const double* src = in + (static_cast<std::size_t>(ci) * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * s - p + kx;
            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0;
          }
        }
      }
}

void col2im(const double* col, int c, int h, int w, int k, int s, int p, int ho, int wo,
            double* in) {
  const std::size_t plane = static_cast<std::size_t>(ho) * wo;
  for (int ci = 0; ci < c; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const double* row = col + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * plane;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * s - p + ky;
          if (iy < 0 || iy >= h) continue;
          double* dst = in + (static_cast<std::size_t>(ci) * h + iy) * w;
          const double* src = row + static_cast<std::size_t>(oy) * wo;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * s - p + kx;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
}

}  // namespace

Net::Net(NetSpec spec) : spec_(std::move(spec)) {
  if (spec_.in_channels < 1 || spec_.in_height < 1 || spec_.in_width < 1)
    throw FormatError("network input dimensions must be positive");
  std::vector<int> shape{spec_.in_channels, spec_.in_height, spec_.in_width};
  shapes_.push_back(shape);
  for (const auto& l : spec_.layers) {
    LayerParams p;
    switch (l.kind) {
      case LayerKind::Conv: {
        if (shape.size() != 3) throw FormatError("conv layer needs a [C,H,W] input");
        if (l.out < 1 || l.kernel < 1 || l.stride < 1 || l.pad < 0)
          throw FormatError("conv layer parameters out of range");
        const int ho = (shape[1] + 2 * l.pad - l.kernel) / l.stride + 1;
        const int wo = (shape[2] + 2 * l.pad - l.kernel) / l.stride + 1;
        if (ho < 1 || wo < 1) throw FormatError("conv layer output would be empty");
        p.weight.assign(static_cast<std::size_t>(l.out) * shape[0] * l.kernel * l.kernel, 0.0);
        p.bias.assign(static_cast<std::size_t>(l.out), 0.0);
        shape = {l.out, ho, wo};
        break;
      }
      case LayerKind::Relu: break;
      case LayerKind::Flatten: shape = {static_cast<int>(product(shape))}; break;
      case LayerKind::Dense: {
        if (shape.size() != 1) throw FormatError("dense layer needs a flat input (add flatten)");
        if (l.out < 1) throw FormatError("dense layer width must be positive");
        p.weight.assign(static_cast<std::size_t>(l.out) * shape[0], 0.0);
        p.bias.assign(static_cast<std::size_t>(l.out), 0.0);
        shape = {l.out};
        break;
      }
    }
    params_.push_back(std::move(p));
    shapes_.push_back(shape);
  }
}

std::size_t Net::output_size() const { return product(shapes_.back()); }

std::size_t Net::parameter_count() const noexcept {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.weight.size() + p.bias.size();
  return n;
}

std::vector<double> Net::flat_parameters() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (const auto& p : params_) {
    out.insert(out.end(), p.weight.begin(), p.weight.end());
    out.insert(out.end(), p.bias.begin(), p.bias.end());
  }
  return out;
}

void Net::set_flat_parameters(std::span<const double> flat) {
  if (flat.size() != parameter_count()) throw FormatError("parameter count mismatch");
  std::size_t i = 0;
  for (auto& p : params_) {
    for (auto& v : p.weight) v = flat[i++];
    for (auto& v : p.bias) v = flat[i++];
  }
}

void Net::init_uniform(std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t li = 0; li < params_.size(); ++li) {
    auto& p = params_[li];
    if (p.weight.empty()) continue;
    const std::size_t fan_in = p.weight.size() / p.bias.size();
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (auto& v : p.weight) v = rng.uniform(-bound, bound);
    std::fill(p.bias.begin(), p.bias.end(), 0.0);
  }
}

Gradients Net::make_gradients() const {
  Gradients g;
  for (const auto& p : params_)
    g.layers.push_back({std::vector<double>(p.weight.size(), 0.0),
                        std::vector<double>(p.bias.size(), 0.0)});
  return g;
}

void Net::check_input(const Tensor& x) const {
  if (x.shape() != shapes_.front())
    throw std::invalid_argument("network input shape " + x.shape_string() +
                                " does not match the layer spec");
}

Tensor Net::forward(const Tensor& x) const { return run(x, nullptr); }

Tensor Net::forward(const Tensor& x, Trace& trace) const { return run(x, &trace); }

Tensor Net::run(const Tensor& x, Trace* trace) const {
  check_input(x);
  const auto& k = simd::active();
  thread_local std::vector<double> scratch_col;
  if (trace) {
    trace->activations.resize(spec_.layers.size());
    trace->columns.resize(spec_.layers.size());
  }
  Tensor cur = x;
  for (std::size_t li = 0; li < spec_.layers.size(); ++li) {
    const LayerSpec& l = spec_.layers[li];
    const auto& in_shape = shapes_[li];
    const auto& out_shape = shapes_[li + 1];
    if (trace) trace->activations[li] = cur;
    switch (l.kind) {
      case LayerKind::Conv: {
        const int ci = in_shape[0], h = in_shape[1], w = in_shape[2];
        const int co = out_shape[0], ho = out_shape[1], wo = out_shape[2];
        const std::size_t plane = static_cast<std::size_t>(ho) * wo;
        const std::size_t kk = static_cast<std::size_t>(ci) * l.kernel * l.kernel;
        auto& col = trace ? trace->columns[li] : scratch_col;
        col.resize(kk * plane);
        im2col(cur.data(), ci, h, w, l.kernel, l.stride, l.pad, ho, wo, col.data());
        Tensor out(out_shape);
        const auto& p = params_[li];
        for (int o = 0; o < co; ++o) std::fill_n(out.data() + o * plane, plane, p.bias[o]);
        // Pixel blocks keep the column slab cache-resident across output channels.
        for (std::size_t c0 = 0; c0 < plane; c0 += kPixelBlock) {
          const std::size_t n = std::min(kPixelBlock, plane - c0);
          for (int o = 0; o < co; ++o) {
            double* row = out.data() + o * plane + c0;
            const double* wrow = p.weight.data() + o * kk;
            for (std::size_t j = 0; j < kk; ++j) k.axpy(wrow[j], col.data() + j * plane + c0, row, n);
          }
        }
        cur = std::move(out);
        break;
      }
      case LayerKind::Relu: k.relu(cur.data(), cur.size()); break;
      case LayerKind::Flatten:
        cur = Tensor(out_shape, std::vector<double>(cur.span().begin(), cur.span().end()));
        break;
      case LayerKind::Dense: {
        const std::size_t n_in = static_cast<std::size_t>(in_shape[0]);
        Tensor out(out_shape);
        const auto& p = params_[li];
        for (int o = 0; o < out_shape[0]; ++o)
          out[o] = p.bias[o] + k.dot(p.weight.data() + o * n_in, cur.data(), n_in);
        cur = std::move(out);
        break;
      }
    }
  }
  return cur;
}

void Net::backward(const Trace& trace, std::span<const double> grad_out, Gradients& grads) const {
  if (grad_out.size() != output_size()) throw std::invalid_argument("output gradient size mismatch");
  const auto& k = simd::active();
  std::vector<double> g(grad_out.begin(), grad_out.end());
  for (std::size_t li = spec_.layers.size(); li-- > 0;) {
    const LayerSpec& l = spec_.layers[li];
    const auto& in_shape = shapes_[li];
    const auto& out_shape = shapes_[li + 1];
    const Tensor& input = trace.activations[li];
    const bool need_input_grad = li > 0;
    switch (l.kind) {
      case LayerKind::Conv: {
        const int ci = in_shape[0], h = in_shape[1], w = in_shape[2];
        const int co = out_shape[0], ho = out_shape[1], wo = out_shape[2];
        const std::size_t plane = static_cast<std::size_t>(ho) * wo;
        const std::size_t kk = static_cast<std::size_t>(ci) * l.kernel * l.kernel;
        const auto& col = trace.columns[li];
        const auto& p = params_[li];
        auto& gp = grads.layers[li];
        std::vector<double> dcol;
        if (need_input_grad) dcol.assign(kk * plane, 0.0);
        for (int o = 0; o < co; ++o) {
          const double* grow = g.data() + o * plane;
          double s = 0.0;
          for (std::size_t i = 0; i < plane; ++i) s += grow[i];
          gp.bias[o] += s;
        }
        for (std::size_t c0 = 0; c0 < plane; c0 += kPixelBlock) {
          const std::size_t n = std::min(kPixelBlock, plane - c0);
          for (int o = 0; o < co; ++o) {
            const double* grow = g.data() + o * plane + c0;
            double* gw = gp.weight.data() + o * kk;
            const double* wrow = p.weight.data() + o * kk;
            for (std::size_t j = 0; j < kk; ++j) {
              gw[j] += k.dot(grow, col.data() + j * plane + c0, n);
              if (need_input_grad) k.axpy(wrow[j], grow, dcol.data() + j * plane + c0, n);
            }
          }
        }
        if (need_input_grad) {
          std::vector<double> gin(static_cast<std::size_t>(ci) * h * w, 0.0);
          col2im(dcol.data(), ci, h, w, l.kernel, l.stride, l.pad, ho, wo, gin.data());
          g = std::move(gin);
        }
        break;
      }
      case LayerKind::Relu: k.relu_backward(input.data(), g.data(), g.size()); break;
      case LayerKind::Flatten: break;
      case LayerKind::Dense: {
        const std::size_t n_in = static_cast<std::size_t>(in_shape[0]);
        const auto& p = params_[li];
        auto& gp = grads.layers[li];
        std::vector<double> gin;
        if (need_input_grad) gin.assign(n_in, 0.0);
        for (int o = 0; o < out_shape[0]; ++o) {
          gp.bias[o] += g[o];
          if (g[o] == 0.0) continue;
          k.axpy(g[o], input.data(), gp.weight.data() + o * n_in, n_in);
          if (need_input_grad) k.axpy(g[o], p.weight.data() + o * n_in, gin.data(), n_in);
        }
        if (need_input_grad) g = std::move(gin);
        break;
      }
    }
  }
}

Adam::Adam(const Net& net, AdamConfig cfg) : cfg_(cfg) {
  for (const auto& p : net.params()) {
    m_.push_back({std::vector<double>(p.weight.size(), 0.0), std::vector<double>(p.bias.size(), 0.0)});
    v_.push_back(m_.back());
  }
}

void Adam::step(Net& net, const Gradients& grads) {
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  auto update = [&](std::vector<double>& p, const std::vector<double>& g, std::vector<double>& m,
                    std::vector<double>& v) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      p[i] -= cfg_.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.epsilon);
    }
  };
  auto& params = net.params();
  for (std::size_t li = 0; li < params.size(); ++li) {
    update(params[li].weight, grads.layers[li].weight, m_[li].weight, v_[li].weight);
    update(params[li].bias, grads.layers[li].bias, m_[li].bias, v_[li].bias);
  }
}

double bellman_loss_and_gradients(const Net& net, std::span<const QSample> batch, Gradients& grads) {
  if (batch.empty()) throw std::invalid_argument("empty training batch");
  grads.zero();
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  std::vector<double> grad_out(net.output_size(), 0.0);
  Trace trace;
  double loss = 0.0;
  for (const auto& s : batch) {
    const Tensor q = net.forward(*s.features, trace);
    const double diff = q[static_cast<std::size_t>(s.action)] - s.target;
    loss += diff * diff;
    std::fill(grad_out.begin(), grad_out.end(), 0.0);
    grad_out[static_cast<std::size_t>(s.action)] = 2.0 * diff * inv_n;
    net.backward(trace, grad_out, grads);
  }
  loss *= inv_n;
  if (!std::isfinite(loss)) throw TrainingError("non-finite Bellman loss");
  return loss;
}

double backward_and_step(Net& net, Adam& opt, std::span<const QSample> batch) {
  Gradients g = net.make_gradients();
  const double loss = bellman_loss_and_gradients(net, batch, g);
  opt.step(net, g);
  return loss;
}

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  void need(std::size_t n, const char* what) const {
    if (b_.size() - pos_ < n) throw FormatError(std::string("checkpoint truncated in ") + what);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f64() {
    need(8, "parameters");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }
  std::string text(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize(const Net& net) {
  std::vector<std::uint8_t> out{'T', 'E', 'P', 'O'};
  put_u32(out, kCheckpointVersion);
  const std::string spec = net.spec().to_text();
  put_u32(out, static_cast<std::uint32_t>(spec.size()));
  out.insert(out.end(), spec.begin(), spec.end());
  for (double v : net.flat_parameters()) put_f64(out, v);
  return out;
}

Net deserialize(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (r.text(4, "magic") != "TEPO") throw FormatError("not a TEPO checkpoint (bad magic)");
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t len = r.u32("spec length");
  Net net(NetSpec::parse(r.text(len, "layer spec")));
  const std::size_t n = net.parameter_count();
  if (r.remaining() != n * 8)
    throw FormatError("checkpoint parameter block has " + std::to_string(r.remaining()) +
                      " bytes, layer spec needs " + std::to_string(n * 8));
  std::vector<double> flat(n);
  for (auto& v : flat) v = r.f64();
  net.set_flat_parameters(flat);
  return net;
}

void save(const Net& net, const std::filesystem::path& path) {
  const auto bytes = serialize(net);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write checkpoint " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("failed writing checkpoint " + path.string());
}

Net load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  try {
    return deserialize(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

Net load(const std::filesystem::path& path, const NetSpec& expected) {
  Net net = load(path);
  if (!(net.spec() == expected))
    throw FormatError(path.string() + ": checkpoint layer spec does not match the configured network");
  return net;
}

}  // namespace tepo::nn
