#pragma once

#include <array>
#include <cstdio>
#include <fstream>
#include <optional>
#include <string>

#include "json.hpp"
#include "periscope/nn_ops.hpp"

namespace periscope {

/// Fixed scalar gains for the decoder's weighted skip concatenations. Each
/// name is <destination>_<source>; sources are encoder levels 3-5, the
/// bottleneck (bn) and the previous decoder stage.
struct SkipWeights {
  double d5_e3 = 0.1;
  double d5_e4 = 0.8;
  double d5_e5 = 1.0;
  double d5_bn = 1.0;
  double d4_e3 = 0.2;
  double d4_e4 = 0.5;
  double d4_bn = 0.8;
  double d4_d5 = 1.0;
};

struct NetworkConfig {
  int base_channels = 8;
  int input_resolution = 64;
  double dropout_p = 0.5;
  SkipWeights skips;

  void validate() const {
    if (base_channels < 1) throw std::invalid_argument("base_channels must be >= 1");
    const int r = input_resolution;
    if (r < 64 || (r & (r - 1)) != 0)
      throw std::invalid_argument(
          "input_resolution must be a power of two >= 64 (the encoder halves "
          "resolution five times and the bottleneck once more)");
    if (dropout_p < 0.0 || dropout_p >= 1.0)
      throw std::invalid_argument("dropout_p must be in [0, 1)");
  }
};

/// One conv -> ReLU -> batchnorm stage.
struct ConvStage {
  TensorPtr w, b, gamma, beta;
  BatchNormState bn;
};

/// Two stacked stages; the building block of every encoder/decoder level.
struct ConvBlock {
  ConvStage s1, s2;
};

/// Optional intercept point for skip-connection inputs, keyed by connection
/// name (d5_e3, d5_e4, d5_e5, d5_bn, d4_e3, d4_e4, d4_bn, d4_d5). The hook
/// receives the resampled tensor just before its concat weight is applied;
/// whatever it returns is used instead. Lets tests perturb a single
/// connection in isolation.
using SkipTap = std::function<TensorPtr(const std::string&, const TensorPtr&)>;

/// Encoder-decoder depth regressor. Five encoder levels (channels b..16b,
/// each followed by 2x2 maxpool), a 32b bottleneck, and five decoder levels
/// with weighted multi-scale skips into the two deepest ones (D5, D4).
/// Dropout regularizes the deepest encoder level and the bottleneck; those
/// skips are tapped after dropout so train-time decoder inputs match what the
/// regularizer lets through. Output head is a 1x1 conv + sigmoid giving
/// normalized depth in (0, 1).
class DepthNet {
 public:
  NetworkConfig cfg;
  std::array<ConvBlock, 5> enc;
  ConvBlock bott;
  std::array<ConvBlock, 5> dec;  // dec[0] = D5 ... dec[4] = D1
  TensorPtr head_w, head_b;

  /// Builds with He-normal weights (std = sqrt(2/fan_in)), zero biases, unit
  /// batchnorm gains. One draw stream in declaration order: fully seeded.
  static DepthNet build(const NetworkConfig& cfg, uint64_t seed) {
    cfg.validate();
    DepthNet net;
    net.cfg = cfg;
    Rng rng(seed);
    const auto ch = channel_plan(cfg.base_channels);
    for (int i = 0; i < 5; ++i)
      net.enc[static_cast<size_t>(i)] = make_block(ch.enc_in[static_cast<size_t>(i)],
                                                   ch.enc_out[static_cast<size_t>(i)], rng);
    net.bott = make_block(ch.bott_in, ch.bott_out, rng);
    for (int i = 0; i < 5; ++i)
      net.dec[static_cast<size_t>(i)] = make_block(ch.dec_in[static_cast<size_t>(i)],
                                                   ch.dec_out[static_cast<size_t>(i)], rng);
    net.head_w = he_conv(1, cfg.base_channels, 1, rng);
    net.head_b = Tensor::create({1}, true);
    return net;
  }

  /// x: [N,1,R,R] grayscale in [0,1]. Returns [N,1,R,R] normalized depth.
  /// `rng` drives dropout masks (ignored when !training or p == 0).
  TensorPtr forward(const TensorPtr& x, bool training, Rng& rng,
                    const SkipTap* tap = nullptr) {
    if (x->shape.size() != 4 || x->shape[1] != 1 ||
        x->shape[2] != cfg.input_resolution || x->shape[3] != cfg.input_resolution)
      throw std::invalid_argument("forward: input must be [N,1,R,R] with configured R");

    auto t = [&](const char* name, const TensorPtr& v) {
      return tap ? (*tap)(name, v) : v;
    };

    auto e1 = block(enc[0], x, training);
    auto e2 = block(enc[1], maxpool2d(e1), training);
    auto e3 = block(enc[2], maxpool2d(e2), training);
    auto e4 = block(enc[3], maxpool2d(e3), training);
    auto e5 = dropout(block(enc[4], maxpool2d(e4), training), cfg.dropout_p, rng, training);
    auto bn = dropout(block(bott, maxpool2d(e5), training), cfg.dropout_p, rng, training);

    auto d5 = block(dec[0],
                    weighted_concat({{t("d5_e3", down(e3, 4)), cfg.skips.d5_e3},
                                     {t("d5_e4", down(e4, 2)), cfg.skips.d5_e4},
                                     {t("d5_e5", e5), cfg.skips.d5_e5},
                                     {t("d5_bn", bilinear_upsample(bn, 2)), cfg.skips.d5_bn}}),
                    training);
    auto d4 = block(dec[1],
                    weighted_concat({{t("d4_e3", down(e3, 2)), cfg.skips.d4_e3},
                                     {t("d4_e4", e4), cfg.skips.d4_e4},
                                     {t("d4_bn", bilinear_upsample(bn, 4)), cfg.skips.d4_bn},
                                     {t("d4_d5", bilinear_upsample(d5, 2)), cfg.skips.d4_d5}}),
                    training);
    auto d3 = block(dec[2], bilinear_upsample(d4, 2), training);
    auto d2 = block(dec[3], bilinear_upsample(d3, 2), training);
    auto d1 = block(dec[4], bilinear_upsample(d2, 2), training);
    return sigmoid(conv2d(d1, head_w, head_b, 1, 0));
  }

  /// Trainable tensors in fixed declaration order (checkpoint blob order).
  std::vector<TensorPtr> parameters() {
    std::vector<TensorPtr> ps;
    auto push = [&](ConvBlock& b) {
      for (ConvStage* s : {&b.s1, &b.s2}) {
        ps.push_back(s->w);
        ps.push_back(s->b);
        ps.push_back(s->gamma);
        ps.push_back(s->beta);
      }
    };
    for (auto& b : enc) push(b);
    push(bott);
    for (auto& b : dec) push(b);
    ps.push_back(head_w);
    ps.push_back(head_b);
    return ps;
  }

  /// Batchnorm running statistics in fixed order; saved alongside parameters.
  std::vector<std::vector<double>*> buffers() {
    std::vector<std::vector<double>*> bs;
    auto push = [&](ConvBlock& b) {
      for (ConvStage* s : {&b.s1, &b.s2}) {
        bs.push_back(&s->bn.running_mean);
        bs.push_back(&s->bn.running_var);
      }
    };
    for (auto& b : enc) push(b);
    push(bott);
    for (auto& b : dec) push(b);
    return bs;
  }

  /// Closed-form trainable parameter count; used for capacity search without
  /// allocating the network.
  static int64_t parameter_count(const NetworkConfig& cfg) {
    const auto ch = channel_plan(cfg.base_channels);
    auto stage = [](int64_t cin, int64_t cout) {
      return cout * cin * 9 + cout + 2 * cout;  // conv w + b, bn gamma + beta
    };
    auto blockp = [&](int64_t cin, int64_t cout) {
      return stage(cin, cout) + stage(cout, cout);
    };
    int64_t total = 0;
    for (int i = 0; i < 5; ++i)
      total += blockp(ch.enc_in[static_cast<size_t>(i)], ch.enc_out[static_cast<size_t>(i)]);
    total += blockp(ch.bott_in, ch.bott_out);
    for (int i = 0; i < 5; ++i)
      total += blockp(ch.dec_in[static_cast<size_t>(i)], ch.dec_out[static_cast<size_t>(i)]);
    total += static_cast<int64_t>(cfg.base_channels) + 1;  // 1x1 head
    return total;
  }

  /// Smallest base width whose parameter count reaches `target`, or the
  /// closest width if an exact threshold crossing overshoots; scans widths
  /// 1..max_width and returns the count-minimizing |count - target|.
  static int closest_base_channels(int64_t target, int max_width = 256) {
    int best = 1;
    int64_t best_gap = std::numeric_limits<int64_t>::max();
    for (int b = 1; b <= max_width; ++b) {
      NetworkConfig c;
      c.base_channels = b;
      const int64_t gap = std::llabs(parameter_count(c) - target);
      if (gap < best_gap) {
        best_gap = gap;
        best = b;
      }
    }
    return best;
  }

 private:
  struct ChannelPlan {
    std::array<int, 5> enc_in, enc_out;
    int bott_in, bott_out;
    std::array<int, 5> dec_in, dec_out;
  };

  static ChannelPlan channel_plan(int b) {
    ChannelPlan p;
    p.enc_in = {1, b, 2 * b, 4 * b, 8 * b};
    p.enc_out = {b, 2 * b, 4 * b, 8 * b, 16 * b};
    p.bott_in = 16 * b;
    p.bott_out = 32 * b;
    // D5 sees E3+E4+E5+bottleneck = (4+8+16+32)b; D4 sees E3+E4+bottleneck+D5
    // = (4+8+32+16)b; both 60b. D3..D1 just refine the upsampled previous stage.
    p.dec_in = {60 * b, 60 * b, 8 * b, 4 * b, 2 * b};
    p.dec_out = {16 * b, 8 * b, 4 * b, 2 * b, b};
    return p;
  }

  static TensorPtr he_conv(int cout, int cin, int k, Rng& rng) {
    auto w = Tensor::create({cout, cin, k, k}, true);
    const double std = std::sqrt(2.0 / (static_cast<double>(cin) * k * k));
    for (auto& v : w->data) v = rng.gaussian(0.0, std);
    return w;
  }

  static ConvStage make_stage(int cin, int cout, Rng& rng) {
    ConvStage s;
    s.w = he_conv(cout, cin, 3, rng);
    s.b = Tensor::create({cout}, true);
    s.gamma = Tensor::from_data({cout}, std::vector<double>(static_cast<size_t>(cout), 1.0), true);
    s.beta = Tensor::create({cout}, true);
    s.bn = BatchNormState(cout);
    return s;
  }

  static ConvBlock make_block(int cin, int cout, Rng& rng) {
    return {make_stage(cin, cout, rng), make_stage(cout, cout, rng)};
  }

  static TensorPtr block(ConvBlock& blk, const TensorPtr& x, bool training) {
    auto h = batchnorm2d(relu(conv2d(x, blk.s1.w, blk.s1.b)), blk.s1.gamma, blk.s1.beta,
                         blk.s1.bn, training);
    return batchnorm2d(relu(conv2d(h, blk.s2.w, blk.s2.b)), blk.s2.gamma, blk.s2.beta,
                       blk.s2.bn, training);
  }

  /// Downscales an encoder activation by factor 2 or 4 with repeated 2x2
  /// maxpool (the network's native downsampling operator).
  static TensorPtr down(TensorPtr x, int factor) {
    for (; factor > 1; factor /= 2) x = maxpool2d(x);
    return x;
  }
};

// ---------------------------------------------------------------------------
// Checkpoint serialization: "PDEM" magic, u32 version, u32 header length,
// JSON header, then all parameters and batchnorm buffers as little-endian
// float32 in declaration order.
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[4] = {'P', 'D', 'E', 'M'};
inline constexpr uint32_t kCheckpointVersion = 1;

inline nlohmann::json network_config_to_json(const NetworkConfig& c) {
  return {{"base_channels", c.base_channels},
          {"input_resolution", c.input_resolution},
          {"dropout_p", c.dropout_p},
          {"skip_weights",
           {{"d5_e3", c.skips.d5_e3},
            {"d5_e4", c.skips.d5_e4},
            {"d5_e5", c.skips.d5_e5},
            {"d5_bn", c.skips.d5_bn},
            {"d4_e3", c.skips.d4_e3},
            {"d4_e4", c.skips.d4_e4},
            {"d4_bn", c.skips.d4_bn},
            {"d4_d5", c.skips.d4_d5}}}};
}

inline NetworkConfig network_config_from_json(const nlohmann::json& j) {
  NetworkConfig c;
  c.base_channels = j.at("base_channels").get<int>();
  c.input_resolution = j.at("input_resolution").get<int>();
  c.dropout_p = j.value("dropout_p", 0.5);
  if (j.contains("skip_weights")) {
    const auto& s = j.at("skip_weights");
    c.skips.d5_e3 = s.value("d5_e3", c.skips.d5_e3);
    c.skips.d5_e4 = s.value("d5_e4", c.skips.d5_e4);
    c.skips.d5_e5 = s.value("d5_e5", c.skips.d5_e5);
    c.skips.d5_bn = s.value("d5_bn", c.skips.d5_bn);
    c.skips.d4_e3 = s.value("d4_e3", c.skips.d4_e3);
    c.skips.d4_e4 = s.value("d4_e4", c.skips.d4_e4);
    c.skips.d4_bn = s.value("d4_bn", c.skips.d4_bn);
    c.skips.d4_d5 = s.value("d4_d5", c.skips.d4_d5);
  }
  return c;
}

inline void save_checkpoint(const std::string& path, DepthNet& net,
                            const nlohmann::json& meta = nlohmann::json::object()) {
  int64_t pcount = 0, bcount = 0;
  for (const auto& p : net.parameters()) pcount += p->numel();
  for (const auto* b : net.buffers()) bcount += static_cast<int64_t>(b->size());

  nlohmann::json header = {{"format_version", kCheckpointVersion},
                           {"network", network_config_to_json(net.cfg)},
                           {"parameter_values", pcount},
                           {"buffer_values", bcount},
                           {"meta", meta}};
  const std::string hs = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  out.write(kCheckpointMagic, 4);
  auto put_u32 = [&](uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
  };
  put_u32(kCheckpointVersion);
  put_u32(static_cast<uint32_t>(hs.size()));
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));

  auto put_f32 = [&](double v) {
    float f = static_cast<float>(v);
    uint32_t u;
    std::memcpy(&u, &f, 4);
    unsigned char b[4] = {static_cast<unsigned char>(u), static_cast<unsigned char>(u >> 8),
                          static_cast<unsigned char>(u >> 16),
                          static_cast<unsigned char>(u >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
  };
  for (const auto& p : net.parameters())
    for (double v : p->data) put_f32(v);
  for (const auto* b : net.buffers())
    for (double v : *b) put_f32(v);
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

/// Loads a checkpoint; returns the network and passes back the stored meta
/// block if requested.
inline DepthNet load_checkpoint(const std::string& path, nlohmann::json* meta_out = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw std::runtime_error("not a checkpoint file (bad magic): " + path);
  auto get_u32 = [&] {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
  };
  const uint32_t version = get_u32();
  if (version != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  const uint32_t hlen = get_u32();
  std::string hs(hlen, '\0');
  in.read(hs.data(), hlen);
  if (!in) throw std::runtime_error("truncated checkpoint header: " + path);
  const nlohmann::json header = nlohmann::json::parse(hs);
  if (meta_out) *meta_out = header.value("meta", nlohmann::json::object());

  DepthNet net = DepthNet::build(network_config_from_json(header.at("network")), 0);
  auto get_f32 = [&]() -> double {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    uint32_t u = static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
                 (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
    float f;
    std::memcpy(&f, &u, 4);
    return static_cast<double>(f);
  };
  for (const auto& p : net.parameters())
    for (double& v : p->data) v = get_f32();
  for (auto* b : net.buffers())
    for (double& v : *b) v = get_f32();
  if (!in) throw std::runtime_error("truncated checkpoint blob: " + path);
  // The blob must end exactly here.
  in.peek();
  if (!in.eof()) throw std::runtime_error("checkpoint has trailing bytes: " + path);
  return net;
}

}  // namespace periscope
