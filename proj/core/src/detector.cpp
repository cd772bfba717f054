#include "mutdet/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "mutdet/errors.hpp"

namespace mutdet::det {

namespace {

constexpr int kCropSize = 32;  // embed_crop resize target

/// Initial classification/angle bias so sigmoid outputs start near 0.01,
/// keeping the background term of focal/BCE losses small at step 0.
constexpr double kLowPriorBias = -4.59511985013459;

int tokens_for_size(int size) {
  return (size / 8) * (size / 8) + (size / 16) * (size / 16);
}

}  // namespace

void DetectorConfig::validate() const {
  if (C < 4 || C % 4 != 0) throw ConfigError("C must be a positive multiple of 4");
  if (C % n_heads() != 0) throw ConfigError("C must be divisible by the head count");
  if (N < 1) throw ConfigError("N must be >= 1");
  if (K_cls < 1) throw ConfigError("K_cls must be >= 1");
  if (A_bins < 1) throw ConfigError("A_bins must be >= 1");
  if (encoder_layers < 0 || decoder_layers < 1 || enhancement_layers < 0)
    throw ConfigError("layer counts out of range");
  if (image_size < 16 || image_size % 16 != 0)
    throw ConfigError("image_size must be a positive multiple of 16");
  if (N > tokens_for_size(image_size))
    throw ConfigError("N exceeds the backbone token count");
}

FrozenBackbone::FrozenBackbone(int image_size, int C, std::uint64_t seed)
    : image_size_(image_size), C_(C), patch_{8, 16} {
  std::mt19937_64 rng(seed);
  for (int ps : patch_) {
    const int d = 3 * ps * ps;
    W_.push_back(nn::uniform_init(C, d, d, rng));
  }
}

nn::Mat FrozenBackbone::tokens_for(const Image& img) const {
  for (int ps : patch_)
    if (img.h % ps != 0 || img.w % ps != 0)
      throw std::invalid_argument("image sides must be divisible by every patch size");
  int total = 0;
  for (int ps : patch_) total += (img.h / ps) * (img.w / ps);
  nn::Mat tokens(total, C_);
  int row = 0;
  for (std::size_t s = 0; s < patch_.size(); ++s) {
    const int ps = patch_[s];
    const int gh = img.h / ps, gw = img.w / ps;
    Eigen::VectorXd v(3 * ps * ps);
    for (int gy = 0; gy < gh; ++gy)
      for (int gx = 0; gx < gw; ++gx) {
        for (int c = 0; c < 3; ++c)
          for (int py = 0; py < ps; ++py)
            for (int px = 0; px < ps; ++px)
              v((c * ps + py) * ps + px) = img.chan[std::size_t(c)](gy * ps + py, gx * ps + px);
        tokens.row(row++) = (W_[s] * v).array().tanh().matrix().transpose();
      }
  }
  return tokens;
}

nn::Mat FrozenBackbone::forward(const Image& img) const {
  if (img.h != image_size_ || img.w != image_size_)
    throw std::invalid_argument("backbone expects a " + std::to_string(image_size_) + "x" +
                                std::to_string(image_size_) + " image");
  return tokens_for(img);
}

int FrozenBackbone::token_count() const { return tokens_for_size(image_size_); }

std::vector<std::pair<int, int>> FrozenBackbone::grids() const {
  std::vector<std::pair<int, int>> g;
  for (int ps : patch_) g.emplace_back(image_size_ / ps, image_size_ / ps);
  return g;
}

Eigen::VectorXd FrozenBackbone::embed_crop(const Image& img, const geom::OrientedBox& box) const {
  const auto& corners = geom::box_corners(box).vertices;
  double x0 = corners[0].x, x1 = corners[0].x, y0 = corners[0].y, y1 = corners[0].y;
  for (const auto& p : corners) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  x0 = std::max(0.0, std::min(x0, double(img.w)));
  x1 = std::max(0.0, std::min(x1, double(img.w)));
  y0 = std::max(0.0, std::min(y0, double(img.h)));
  y1 = std::max(0.0, std::min(y1, double(img.h)));
  if (x1 - x0 < 1.0) x1 = std::min(double(img.w), x0 + 1.0), x0 = x1 - 1.0;
  if (y1 - y0 < 1.0) y1 = std::min(double(img.h), y0 + 1.0), y0 = y1 - 1.0;

  Image crop;
  crop.h = kCropSize;
  crop.w = kCropSize;
  for (int c = 0; c < 3; ++c) {
    crop.chan[std::size_t(c)].resize(kCropSize, kCropSize);
    for (int ty = 0; ty < kCropSize; ++ty)
      for (int tx = 0; tx < kCropSize; ++tx) {
        const double sy = y0 + (ty + 0.5) / kCropSize * (y1 - y0) - 0.5;
        const double sx = x0 + (tx + 0.5) / kCropSize * (x1 - x0) - 0.5;
        const int iy0 = int(std::floor(sy)), ix0 = int(std::floor(sx));
        const double fy = sy - iy0, fx = sx - ix0;
        auto at = [&](int y, int x) {
          y = std::min(std::max(y, 0), img.h - 1);
          x = std::min(std::max(x, 0), img.w - 1);
          return img.chan[std::size_t(c)](y, x);
        };
        crop.chan[std::size_t(c)](ty, tx) =
            (1 - fy) * ((1 - fx) * at(iy0, ix0) + fx * at(iy0, ix0 + 1)) +
            fy * ((1 - fx) * at(iy0 + 1, ix0) + fx * at(iy0 + 1, ix0 + 1));
      }
  }

  nn::Mat tokens = tokens_for(crop);
  Eigen::VectorXd out(2 * C_);
  int row = 0;
  for (std::size_t s = 0; s < patch_.size(); ++s) {
    const int ps = patch_[s];
    const int n = (kCropSize / ps) * (kCropSize / ps);
    out.segment(Eigen::Index(s) * C_, C_) =
        tokens.middleRows(row, n).colwise().mean().transpose();
    row += n;
  }
  return out;
}

nn::Mat sinusoidal_positions(const std::vector<std::pair<int, int>>& grids, int C) {
  if (C % 4 != 0) throw ConfigError("positional encoding requires C divisible by 4");
  const int half = C / 2;
  int total = 0;
  for (auto [h, w] : grids) total += h * w;
  nn::Mat pos(total, C);
  Eigen::VectorXd dim_t(half);
  for (int i = 0; i < half; ++i)
    dim_t(i) = std::pow(10000.0, 2.0 * double(i / 2) / double(half));
  int row = 0;
  for (auto [gh, gw] : grids) {
    for (int y = 0; y < gh; ++y)
      for (int x = 0; x < gw; ++x) {
        const double ye = (y + 0.5) / double(gh) * 2.0 * geom::kPi;
        const double xe = (x + 0.5) / double(gw) * 2.0 * geom::kPi;
        for (int i = 0; i < half; ++i) {
          pos(row, i) = (i % 2 == 0) ? std::sin(ye / dim_t(i)) : std::cos(ye / dim_t(i));
          pos(row, half + i) = (i % 2 == 0) ? std::sin(xe / dim_t(i)) : std::cos(xe / dim_t(i));
        }
        ++row;
      }
  }
  return pos;
}

Discrepancy feature_discrepancy(const nn::Mat& pred_emb, const nn::Mat& obj_emb,
                                const std::vector<int>& pred_of_ann) {
  Discrepancy d;
  double sum = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < pred_of_ann.size(); ++i) {
    const int j = pred_of_ann[i];
    if (j < 0) continue;
    const auto z = pred_emb.row(j);
    const auto o = obj_emb.row(Eigen::Index(i));
    const double den = z.norm() * o.norm();
    sum += den > 0.0 ? z.dot(o) / den : 0.0;
    ++n;
  }
  if (n == 0) return d;
  d.mean = sum / n;
  d.defined = true;
  return d;
}

Detector::Detector(DetectorConfig cfg, nn::ParamStore& store)
    : cfg_(cfg), store_(&store), backbone_(cfg.image_size, cfg.C, cfg.backbone_seed),
      positions_(sinusoidal_positions(backbone_.grids(), cfg.C)) {
  cfg_.validate();
}

void Detector::init_params(nn::ParamStore& store, const DetectorConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.init_seed);
  const int C = cfg.C;
  store.create("queries", nn::uniform_init(cfg.N, C, C, rng));
  for (int i = 0; i < cfg.encoder_layers; ++i) {
    const std::string base = "enc.l" + std::to_string(i);
    nn::init_attention(store, base + ".self", C, rng);
    nn::init_layer_norm(store, base + ".ln1", C);
    nn::init_mlp(store, base + ".mlp", C, cfg.mlp_hidden(), rng);
    nn::init_layer_norm(store, base + ".ln2", C);
  }
  nn::init_linear(store, "enc_head.cls", cfg.K_cls, C, rng);
  nn::init_linear(store, "enc_head.box", 4, C, rng);
  nn::init_linear(store, "enc_head.ang", cfg.A_bins, C, rng);
  nn::init_linear(store, "enc_head.emb", C, C, rng);
  for (int i = 0; i < cfg.decoder_layers; ++i) {
    const std::string base = "dec.l" + std::to_string(i);
    nn::init_attention(store, base + ".self", C, rng);
    nn::init_layer_norm(store, base + ".ln1", C);
    nn::init_attention(store, base + ".cross", C, rng);
    nn::init_layer_norm(store, base + ".ln2", C);
    nn::init_mlp(store, base + ".mlp", C, cfg.mlp_hidden(), rng);
    nn::init_layer_norm(store, base + ".ln3", C);
  }
  nn::init_linear(store, "head.cls", cfg.K_cls, C, rng);
  nn::init_linear(store, "head.box", 4, C, rng);
  nn::init_linear(store, "head.ang", cfg.A_bins, C, rng);
  nn::init_linear(store, "head.emb", C, C, rng);
  if (cfg.enhancement_enabled && cfg.enhancement_layers > 0) {
    nn::EnhancementConfig ec{C, cfg.enhancement_layers, cfg.n_heads()};
    nn::init_enhancement_params(store, "enh.", ec, rng());
  }
  for (const char* name : {"enc_head.cls.b", "enc_head.ang.b", "head.cls.b", "head.ang.b"})
    store.mutable_value(name).setConstant(kLowPriorBias);
}

nn::Var Detector::encode(nn::Tape& t, const Image& img) const {
  nn::Mat tokens = backbone_.forward(img);
  nn::Var x = nn::constant(t, tokens + positions_);
  for (int i = 0; i < cfg_.encoder_layers; ++i) {
    const std::string base = "enc.l" + std::to_string(i);
    nn::AttentionParams self_attn = nn::load_attention(t, *store_, base + ".self");
    nn::LayerNormParams ln1 = nn::load_layer_norm(t, *store_, base + ".ln1");
    nn::MlpParams mlp_p = nn::load_mlp(t, *store_, base + ".mlp");
    nn::LayerNormParams ln2 = nn::load_layer_norm(t, *store_, base + ".ln2");
    x = nn::layer_norm(nn::add(nn::multi_head_attention(x, x, self_attn, cfg_.n_heads()), x),
                       ln1.g, ln1.b);
    x = nn::layer_norm(nn::add(nn::mlp(x, mlp_p), x), ln2.g, ln2.b);
  }
  return x;
}

loss::BranchVars Detector::apply_heads(nn::Tape& t, nn::Var x, const std::string& prefix) const {
  loss::BranchVars b;
  b.cls_logits = nn::linear(x, nn::load_linear(t, *store_, prefix + ".cls"));
  b.boxes = nn::sigmoid(nn::linear(x, nn::load_linear(t, *store_, prefix + ".box")));
  b.ang_logits = nn::linear(x, nn::load_linear(t, *store_, prefix + ".ang"));
  b.embeddings = nn::linear(x, nn::load_linear(t, *store_, prefix + ".emb"));
  return b;
}

loss::BranchVars Detector::encoder_proposals(nn::Tape& t, nn::Var f) const {
  const int k = int(f.rows());
  if (cfg_.N > k)
    throw ConfigError("encoder_proposals: N (" + std::to_string(cfg_.N) +
                      ") exceeds token count (" + std::to_string(k) + ")");
  loss::BranchVars all = apply_heads(t, f, "enc_head");
  const nn::Mat& logits = all.cls_logits.val();
  std::vector<int> order(static_cast<std::size_t>(k));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return logits.row(a).maxCoeff() > logits.row(b).maxCoeff();
  });
  order.resize(std::size_t(cfg_.N));
  loss::BranchVars top;
  top.boxes = nn::gather_rows(all.boxes, order);
  top.cls_logits = nn::gather_rows(all.cls_logits, order);
  top.ang_logits = nn::gather_rows(all.ang_logits, order);
  top.embeddings = nn::gather_rows(all.embeddings, order);
  return top;
}

std::vector<loss::BranchVars> Detector::decode(
    nn::Tape& t, nn::Var memory, const std::optional<loss::BranchVars>& proposals) const {
  nn::Var q = nn::param(t, *store_, "queries");
  if (cfg_.two_stage_queries && proposals)
    q = nn::add(q, nn::detach(proposals->embeddings));
  std::vector<loss::BranchVars> out;
  for (int i = 0; i < cfg_.decoder_layers; ++i) {
    const std::string base = "dec.l" + std::to_string(i);
    nn::AttentionParams self_attn = nn::load_attention(t, *store_, base + ".self");
    nn::LayerNormParams ln1 = nn::load_layer_norm(t, *store_, base + ".ln1");
    nn::AttentionParams cross = nn::load_attention(t, *store_, base + ".cross");
    nn::LayerNormParams ln2 = nn::load_layer_norm(t, *store_, base + ".ln2");
    nn::MlpParams mlp_p = nn::load_mlp(t, *store_, base + ".mlp");
    nn::LayerNormParams ln3 = nn::load_layer_norm(t, *store_, base + ".ln3");
    q = nn::layer_norm(nn::add(nn::multi_head_attention(q, q, self_attn, cfg_.n_heads()), q),
                       ln1.g, ln1.b);
    q = nn::layer_norm(nn::add(nn::multi_head_attention(q, memory, cross, cfg_.n_heads()), q),
                       ln2.g, ln2.b);
    q = nn::layer_norm(nn::add(nn::mlp(q, mlp_p), q), ln3.g, ln3.b);
    out.push_back(apply_heads(t, q, "head"));
  }
  return out;
}

PretrainResult Detector::pretrain_graphs(nn::Tape& t, const Image& img,
                                         const loss::GtLabels& gt,
                                         const loss::LossOptions& opt) const {
  if (gt.count() > 0 && int(gt.embeddings.cols()) != cfg_.C)
    throw std::invalid_argument("pretrain_forward: label embedding width != C");
  PretrainResult r;
  nn::Var f = encode(t, img);
  nn::Var o = nn::constant(t, gt.embeddings.rows() > 0 ? gt.embeddings
                                                       : nn::Mat(0, cfg_.C));
  nn::Var f_enh = f, o_enh = o;
  if (cfg_.enhancement_enabled && cfg_.enhancement_layers > 0) {
    nn::EnhancementConfig ec{cfg_.C, cfg_.enhancement_layers, cfg_.n_heads()};
    nn::EnhancementOut eo = nn::enhancement_forward(t, *store_, "enh.", o, f, ec);
    o_enh = eo.objects;
    f_enh = eo.features;
  }
  r.features = f;
  r.enhanced_features = f_enh;
  r.o_enh = o_enh;
  r.enc_top = encoder_proposals(t, f_enh);
  r.main_layers = decode(t, f_enh, r.enc_top);
  if (opt.mode == loss::CalibrationMode::siamese ||
      opt.mode == loss::CalibrationMode::decoder_distill)
    r.aux_layers = decode(t, f, r.enc_top);
  return r;
}

loss::ImageForward PretrainResult::image_forward(const loss::GtLabels& gt) const {
  loss::ImageForward im;
  im.main_layers = &main_layers;
  im.enc_top = &enc_top;
  im.aux_layers = &aux_layers;
  im.o_enh = o_enh;
  im.features = features;
  im.enhanced_features = enhanced_features;
  im.gt = &gt;
  return im;
}

PretrainResult Detector::pretrain_forward(nn::Tape& t, const Image& img,
                                          const loss::GtLabels& gt,
                                          const loss::LossOptions& opt) const {
  PretrainResult r = pretrain_graphs(t, img, gt, opt);
  r.loss = loss::compose_losses(t, {r.image_forward(gt)}, opt);
  return r;
}

std::vector<loss::BranchVars> Detector::finetune_forward(nn::Tape& t, const Image& img) const {
  nn::Var f = encode(t, img);
  std::optional<loss::BranchVars> props;
  if (cfg_.two_stage_queries) props = encoder_proposals(t, f);
  return decode(t, f, props);
}

}  // namespace mutdet::det
