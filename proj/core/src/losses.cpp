#include "mutdet/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "mutdet/errors.hpp"
#include "mutdet/geometry.hpp"

namespace mutdet::loss {

namespace {

double sigmoid(double s) { return 1.0 / (1.0 + std::exp(-s)); }

/// max(s,0) - s*t + log1p(exp(-|s|)): BCE-with-logits, stable for any s.
double bce_logits(double s, double t) {
  return std::max(s, 0.0) - s * t + std::log1p(std::exp(-std::abs(s)));
}

void check_unit_rows(const Mat& x, const char* what) {
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double n = x.row(i).norm();
    if (std::abs(n - 1.0) > 1e-6)
      throw std::invalid_argument(std::string(what) + ": row " + std::to_string(i) +
                                  " is not unit-norm (|v| = " + std::to_string(n) + ")");
  }
}

double logsumexp(const double* v, Eigen::Index n, Eigen::Index stride) {
  double mx = v[0];
  for (Eigen::Index k = 1; k < n; ++k) mx = std::max(mx, v[k * stride]);
  double s = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) s += std::exp(v[k * stride] - mx);
  return mx + std::log(s);
}

Var column(Var x, int c) { return nn::slice_cols(x, c, 1); }

/// Axis-aligned GIoU per row of two P x 4 (cx, cy, w, h) matrices, built from
/// differentiable primitives.
Var aa_giou_column(Var pred, Var gt) {
  Var px1 = nn::sub(column(pred, 0), nn::scale(column(pred, 2), 0.5));
  Var px2 = nn::add(column(pred, 0), nn::scale(column(pred, 2), 0.5));
  Var py1 = nn::sub(column(pred, 1), nn::scale(column(pred, 3), 0.5));
  Var py2 = nn::add(column(pred, 1), nn::scale(column(pred, 3), 0.5));
  Var gx1 = nn::sub(column(gt, 0), nn::scale(column(gt, 2), 0.5));
  Var gx2 = nn::add(column(gt, 0), nn::scale(column(gt, 2), 0.5));
  Var gy1 = nn::sub(column(gt, 1), nn::scale(column(gt, 3), 0.5));
  Var gy2 = nn::add(column(gt, 1), nn::scale(column(gt, 3), 0.5));

  Var iw = nn::relu(nn::sub(nn::ew_min(px2, gx2), nn::ew_max(px1, gx1)));
  Var ih = nn::relu(nn::sub(nn::ew_min(py2, gy2), nn::ew_max(py1, gy1)));
  Var inter = nn::ew_mul(iw, ih);

  Var areas = nn::add(nn::ew_mul(column(pred, 2), column(pred, 3)),
                      nn::ew_mul(column(gt, 2), column(gt, 3)));
  Var uni = nn::sub(areas, inter);

  Var cw = nn::sub(nn::ew_max(px2, gx2), nn::ew_min(px1, gx1));
  Var ch = nn::sub(nn::ew_max(py2, gy2), nn::ew_min(py1, gy1));
  Var enclosure = nn::ew_mul(cw, ch);

  return nn::sub(nn::ew_div(inter, uni), nn::ew_div(nn::sub(enclosure, uni), enclosure));
}

Var zero_scalar(Tape& t) { return nn::constant(t, Mat::Zero(1, 1)); }

}  // namespace

double log_sigmoid(double s) {
  if (s >= 0.0) return -std::log1p(std::exp(-s));
  return s - std::log1p(std::exp(s));
}

Eigen::VectorXd csl_target(double angle, int bins, double sigma, int radius) {
  if (bins < 1) throw std::invalid_argument("csl_target: bins must be >= 1");
  const double a = geom::normalize_angle(angle);
  const double frac = (a + geom::kPi / 2.0) / geom::kPi;  // in [0, 1)
  int peak = int(std::floor(frac * bins));
  peak = std::min(std::max(peak, 0), bins - 1);
  Eigen::VectorXd t = Eigen::VectorXd::Zero(bins);
  for (int d = -radius; d <= radius; ++d) {
    const int b = ((peak + d) % bins + bins) % bins;
    const double w = std::exp(-double(d) * double(d) / (2.0 * sigma * sigma));
    t(b) = std::max(t(b), w);
  }
  return t;
}

MaybeLoss contrastive_alignment_loss(Var Z, Var O, double tau) {
  if (Z.tape != O.tape)
    throw std::invalid_argument("contrastive_alignment_loss: tapes differ");
  Tape& t = *Z.tape;
  const Mat& zv = Z.val();
  const Mat& ov = O.val();
  if (zv.rows() != ov.rows() || zv.cols() != ov.cols())
    throw std::invalid_argument("contrastive_alignment_loss: shape mismatch");
  const Eigen::Index m = zv.rows(), c = zv.cols();
  if (m == 0) return {zero_scalar(t), false};
  check_unit_rows(zv, "contrastive_alignment_loss: Z");
  check_unit_rows(ov, "contrastive_alignment_loss: O");

  // Entrywise dot products so that swapping (Z, O) produces the exact
  // transpose bit-for-bit; the loss is then exactly symmetric.
  Mat S(m, m);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < m; ++j) {
      double s = 0.0;
      for (Eigen::Index k = 0; k < c; ++k) s += zv(i, k) * ov(j, k);
      S(i, j) = s / tau;
    }

  double T = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const double lse_row = logsumexp(&S(i, 0), m, 1);
    const double lse_col = logsumexp(&S(0, i), m, m);  // row-major: column stride = m
    T += (S(i, i) - lse_row) + (S(i, i) - lse_col);
  }
  Mat lv(1, 1);
  lv(0, 0) = -(2.0 * tau / double(m)) * T;

  Mat P(m, m), Q(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    Eigen::ArrayXd row = S.row(i).array();
    row -= row.maxCoeff();
    row = row.exp();
    P.row(i) = (row / row.sum()).matrix();
    Eigen::ArrayXd col = S.col(i).array();
    col -= col.maxCoeff();
    col = col.exp();
    Q.row(i) = (col / col.sum()).matrix().transpose();
  }

  const bool ng = t.needs_grad(Z.id) || t.needs_grad(O.id);
  const int zi = Z.id, oi = O.id;
  const double scale = -(2.0 * tau / double(m)) / tau;
  int id = t.add(std::move(lv), ng,
                 !ng ? std::function<void(Tape&, int)>(nullptr)
                     : [zi, oi, P, Q, m, scale](Tape& tp, int self) {
                         const double g = tp.grad(self)(0, 0);
                         Mat dS = -P - Q.transpose();
                         for (Eigen::Index i = 0; i < m; ++i) dS(i, i) += 2.0;
                         dS *= g * scale;
                         tp.grad(zi).noalias() += dS * tp.value(oi);
                         tp.grad(oi).noalias() += dS.transpose() * tp.value(zi);
                       });
  return {{&t, id}, true};
}

Var focal_loss(Var cls_logits, const std::vector<int>& target_class, double alpha,
               double gamma) {
  const Mat& s = cls_logits.val();
  const Eigen::Index n = s.rows(), k = s.cols();
  if (Eigen::Index(target_class.size()) != n)
    throw std::invalid_argument("focal_loss: target length does not match rows");
  int matched = 0;
  for (int c : target_class) {
    if (c >= int(k)) throw std::invalid_argument("focal_loss: class id out of range");
    if (c >= 0) ++matched;
  }
  const double norm = std::max(1, matched);

  double total = 0.0;
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index c = 0; c < k; ++c) {
      const double sj = s(j, c);
      const double p = sigmoid(sj);
      if (target_class[std::size_t(j)] == int(c))
        total += -alpha * std::pow(1.0 - p, gamma) * log_sigmoid(sj);
      else
        total += -(1.0 - alpha) * std::pow(p, gamma) * log_sigmoid(-sj);
    }
  Mat lv(1, 1);
  lv(0, 0) = total / norm;

  Tape& t = *cls_logits.tape;
  if (!t.needs_grad(cls_logits.id)) return nn::constant(t, lv);
  const int xi = cls_logits.id;
  int id = t.add(lv, true, [xi, target_class, alpha, gamma, norm](Tape& tp, int self) {
    const double g = tp.grad(self)(0, 0) / norm;
    const Mat& s = tp.value(xi);
    Mat& gx = tp.grad(xi);
    for (Eigen::Index j = 0; j < s.rows(); ++j)
      for (Eigen::Index c = 0; c < s.cols(); ++c) {
        const double sj = s(j, c);
        const double p = sigmoid(sj);
        double d;
        if (target_class[std::size_t(j)] == int(c))
          d = alpha * std::pow(1.0 - p, gamma) * (gamma * p * log_sigmoid(sj) - (1.0 - p));
        else
          d = -(1.0 - alpha) * std::pow(p, gamma) *
              (gamma * (1.0 - p) * log_sigmoid(-sj) - p);
        gx(j, c) += g * d;
      }
  });
  return {&t, id};
}

MaybeLoss reg_loss(Var pred_boxes, const Mat& gt_boxes, const std::vector<int>& pred_of_ann,
                   double w_l1, double w_giou) {
  Tape& t = *pred_boxes.tape;
  std::vector<int> idx;
  std::vector<Eigen::Index> ann;
  for (std::size_t i = 0; i < pred_of_ann.size(); ++i)
    if (pred_of_ann[i] >= 0) {
      idx.push_back(pred_of_ann[i]);
      ann.push_back(Eigen::Index(i));
    }
  if (idx.empty()) return {zero_scalar(t), false};
  const int p = int(idx.size());
  Mat gsel(p, 4);
  for (int r = 0; r < p; ++r) gsel.row(r) = gt_boxes.row(ann[std::size_t(r)]);

  Var pp = nn::gather_rows(pred_boxes, idx);
  Var gg = nn::constant(t, gsel);
  Var l1 = nn::sum_all(nn::ew_abs(nn::sub(pp, gg)));
  Var ones = nn::constant(t, Mat::Ones(p, 1));
  Var giou_pen = nn::sum_all(nn::sub(ones, aa_giou_column(pp, gg)));
  Var total = nn::add(nn::scale(l1, w_l1 / p), nn::scale(giou_pen, w_giou / p));
  return {total, true};
}

MaybeLoss angle_csl_loss(Var angle_logits, const std::vector<double>& gt_angles,
                         const std::vector<int>& pred_of_ann, double sigma, int radius) {
  Tape& t = *angle_logits.tape;
  const int bins = int(angle_logits.cols());
  std::vector<int> idx;
  std::vector<Eigen::Index> ann;
  for (std::size_t i = 0; i < pred_of_ann.size(); ++i)
    if (pred_of_ann[i] >= 0) {
      idx.push_back(pred_of_ann[i]);
      ann.push_back(Eigen::Index(i));
    }
  if (idx.empty()) return {zero_scalar(t), false};
  const int p = int(idx.size());
  Mat targets(p, bins);
  for (int r = 0; r < p; ++r)
    targets.row(r) =
        csl_target(gt_angles[std::size_t(ann[std::size_t(r)])], bins, sigma, radius)
            .transpose();

  // Mean over both matched objects and bins; a bin sum would let wide
  // heads (180 bins) drown the other loss terms.
  const Mat& s = angle_logits.val();
  double total = 0.0;
  for (int r = 0; r < p; ++r)
    for (int b = 0; b < bins; ++b) total += bce_logits(s(idx[std::size_t(r)], b), targets(r, b));
  Mat lv(1, 1);
  lv(0, 0) = total / (double(p) * double(bins));

  if (!t.needs_grad(angle_logits.id)) return {nn::constant(t, lv), true};
  const int xi = angle_logits.id;
  int id = t.add(lv, true, [xi, idx, targets, p, bins](Tape& tp, int self) {
    const double g = tp.grad(self)(0, 0) / (double(p) * double(bins));
    const Mat& s = tp.value(xi);
    Mat& gx = tp.grad(xi);
    for (int r = 0; r < p; ++r)
      for (Eigen::Index b = 0; b < targets.cols(); ++b)
        gx(idx[std::size_t(r)], b) += g * (sigmoid(s(idx[std::size_t(r)], b)) - targets(r, b));
  });
  return {{&t, id}, true};
}

MaybeLoss detector_alignment_loss(Var enc_pos, Var dec_pos, Var o_enh, double tau) {
  Tape& t = *o_enh.tape;
  if (o_enh.rows() == 0) return {zero_scalar(t), false};
  Var on = nn::l2normalize_rows(o_enh);
  MaybeLoss a = contrastive_alignment_loss(nn::l2normalize_rows(enc_pos), on, tau);
  MaybeLoss b = contrastive_alignment_loss(nn::l2normalize_rows(dec_pos), on, tau);
  return {nn::add(a.value, b.value), a.active || b.active};
}

Var encoder_feature_distill(Var features, Var enhanced_features) {
  if (features.rows() != enhanced_features.rows() ||
      features.cols() != enhanced_features.cols())
    throw std::invalid_argument("encoder_feature_distill: shape mismatch");
  Var d = nn::sub(features, nn::detach(enhanced_features));
  const double n = double(features.rows() * features.cols());
  return nn::scale(nn::sum_all(nn::ew_mul(d, d)), 1.0 / n);
}

Var qfl_soft(Var student_logits, const Mat& teacher_probs, double gamma) {
  const Mat& s = student_logits.val();
  if (s.rows() != teacher_probs.rows() || s.cols() != teacher_probs.cols())
    throw std::invalid_argument("qfl_soft: shape mismatch");
  const double norm = double(std::max<Eigen::Index>(1, s.rows()));

  double total = 0.0;
  for (Eigen::Index j = 0; j < s.rows(); ++j)
    for (Eigen::Index c = 0; c < s.cols(); ++c) {
      const double p = sigmoid(s(j, c));
      const double tt = teacher_probs(j, c);
      total += std::pow(std::abs(tt - p), gamma) * bce_logits(s(j, c), tt);
    }
  Mat lv(1, 1);
  lv(0, 0) = total / norm;

  Tape& t = *student_logits.tape;
  if (!t.needs_grad(student_logits.id)) return nn::constant(t, lv);
  const int xi = student_logits.id;
  int id = t.add(lv, true, [xi, teacher_probs, gamma, norm](Tape& tp, int self) {
    const double g = tp.grad(self)(0, 0) / norm;
    const Mat& s = tp.value(xi);
    Mat& gx = tp.grad(xi);
    for (Eigen::Index j = 0; j < s.rows(); ++j)
      for (Eigen::Index c = 0; c < s.cols(); ++c) {
        const double p = sigmoid(s(j, c));
        const double tt = teacher_probs(j, c);
        const double gap = std::abs(tt - p);
        const double sign = (p > tt) ? 1.0 : (p < tt ? -1.0 : 0.0);
        const double d = gamma * std::pow(gap, gamma - 1.0) * sign * p * (1.0 - p) *
                             bce_logits(s(j, c), tt) +
                         std::pow(gap, gamma) * (p - tt);
        gx(j, c) += g * d;
      }
  });
  return {&t, id};
}

Var mse_to_const(Var x, const Mat& target) {
  if (x.rows() != target.rows() || x.cols() != target.cols())
    throw std::invalid_argument("mse_to_const: shape mismatch");
  Tape& t = *x.tape;
  Var d = nn::sub(x, nn::constant(t, target));
  const double n = double(target.rows() * target.cols());
  return nn::scale(nn::sum_all(nn::ew_mul(d, d)), 1.0 / n);
}

CalibrationMode parse_calibration_mode(const std::string& s) {
  if (s == "none") return CalibrationMode::none;
  if (s == "encoder-distill") return CalibrationMode::encoder_distill;
  if (s == "decoder-distill") return CalibrationMode::decoder_distill;
  if (s == "siamese") return CalibrationMode::siamese;
  throw ConfigError("unknown calibration mode: " + s);
}

std::string to_string(CalibrationMode m) {
  switch (m) {
    case CalibrationMode::none: return "none";
    case CalibrationMode::encoder_distill: return "encoder-distill";
    case CalibrationMode::decoder_distill: return "decoder-distill";
    case CalibrationMode::siamese: return "siamese";
  }
  return "?";
}

namespace {

/// Detection losses over a stack of decoder layers, each with its own
/// matching. Returns the final layer's annotation -> prediction map.
std::vector<int> add_detection_losses(const std::vector<BranchVars>& layers,
                                      const GtLabels& gt, const LossOptions& opt, Var& cls,
                                      Var& reg, Var& ang) {
  std::vector<int> final_pf;
  const std::size_t first = opt.deep_supervision ? 0 : layers.size() - 1;
  for (std::size_t l = first; l < layers.size(); ++l) {
    const BranchVars& b = layers[l];
    const int n = int(b.cls_logits.rows());
    std::vector<int> pf;
    if (gt.count() > 0) {
      Eigen::MatrixXd cost = match_cost(b.boxes.val(), b.cls_logits.val(), b.ang_logits.val(),
                                        gt.boxes, gt.cls, gt.angles, opt.matching);
      pf = match::hungarian(cost).prediction_for();
    }
    std::vector<int> tc(std::size_t(n), -1);
    for (std::size_t i = 0; i < pf.size(); ++i) tc[std::size_t(pf[i])] = gt.cls[i];
    cls = nn::add(cls, focal_loss(b.cls_logits, tc, opt.focal_alpha, opt.focal_gamma));
    reg = nn::add(reg, reg_loss(b.boxes, gt.boxes, pf, opt.w_l1, opt.w_giou).value);
    ang = nn::add(ang, angle_csl_loss(b.ang_logits, gt.angles, pf, opt.matching.csl_sigma,
                                      opt.matching.csl_radius)
                           .value);
    if (l + 1 == layers.size()) final_pf = pf;
  }
  return final_pf;
}

}  // namespace

ComposedLoss compose_losses(Tape& t, const std::vector<ImageForward>& batch,
                            const LossOptions& opt) {
  if (batch.empty()) throw std::invalid_argument("compose_losses: empty batch");
  const double inv_b = 1.0 / double(batch.size());

  Var ca_det = zero_scalar(t), cls = zero_scalar(t), reg = zero_scalar(t),
      ang = zero_scalar(t);
  Var ca_aux = zero_scalar(t), cls_aux = zero_scalar(t), reg_aux = zero_scalar(t),
      ang_aux = zero_scalar(t);

  std::vector<Var> dec_rows, enc_rows, aux_rows, obj_rows;

  for (const ImageForward& im : batch) {
    if (!im.main_layers || im.main_layers->empty())
      throw std::invalid_argument("compose_losses: need at least one decoder layer");
    if (!im.gt) throw std::invalid_argument("compose_losses: missing labels");
    const GtLabels& gt = *im.gt;
    const int m = gt.count();
    if (m != int(im.o_enh.rows()))
      throw std::invalid_argument("compose_losses: o_enh row count does not match labels");

    // An image without annotations still supervises classification: every
    // query is background. The alignment terms need matched pairs, so such
    // images contribute none.
    Var icls = zero_scalar(t), ireg = zero_scalar(t), iang = zero_scalar(t);
    std::vector<int> final_pf =
        add_detection_losses(*im.main_layers, gt, opt, icls, ireg, iang);
    cls = nn::add(cls, nn::scale(icls, inv_b));
    reg = nn::add(reg, nn::scale(ireg, inv_b));
    ang = nn::add(ang, nn::scale(iang, inv_b));

    if (m > 0) {
      dec_rows.push_back(nn::gather_rows(im.main_layers->back().embeddings, final_pf));
      obj_rows.push_back(im.o_enh);
      if (im.enc_top && im.enc_top->has_value()) {
        const BranchVars& e = im.enc_top->value();
        Eigen::MatrixXd cost_enc = match_cost(e.boxes.val(), e.cls_logits.val(),
                                              e.ang_logits.val(), gt.boxes, gt.cls,
                                              gt.angles, opt.matching);
        std::vector<int> pf_enc = match::hungarian(cost_enc).prediction_for();
        enc_rows.push_back(nn::gather_rows(e.embeddings, pf_enc));
      }
    }

    switch (opt.mode) {
      case CalibrationMode::none:
        break;
      case CalibrationMode::siamese:
        if (im.aux_layers && !im.aux_layers->empty()) {
          Var acls = zero_scalar(t), areg = zero_scalar(t), aang = zero_scalar(t);
          std::vector<int> pf_aux =
              add_detection_losses(*im.aux_layers, gt, opt, acls, areg, aang);
          cls_aux = nn::add(cls_aux, nn::scale(acls, inv_b));
          reg_aux = nn::add(reg_aux, nn::scale(areg, inv_b));
          ang_aux = nn::add(ang_aux, nn::scale(aang, inv_b));
          if (m > 0)
            aux_rows.push_back(nn::gather_rows(im.aux_layers->back().embeddings, pf_aux));
        }
        break;
      case CalibrationMode::encoder_distill:
        ca_aux = nn::add(
            ca_aux,
            nn::scale(encoder_feature_distill(im.features, im.enhanced_features), inv_b));
        break;
      case CalibrationMode::decoder_distill:
        if (im.aux_layers && !im.aux_layers->empty()) {
          const Mat& teacher_logits = im.main_layers->back().cls_logits.val();
          Mat teacher_probs =
              (1.0 / (1.0 + (-teacher_logits.array()).exp())).matrix();
          cls_aux = nn::add(cls_aux, nn::scale(qfl_soft(im.aux_layers->back().cls_logits,
                                                        teacher_probs, opt.qfl_gamma),
                                               inv_b));
          ca_aux = nn::add(ca_aux,
                           nn::scale(mse_to_const(im.aux_layers->back().embeddings,
                                                  im.main_layers->back().embeddings.val()),
                                     inv_b));
        }
        break;
    }
  }

  if (!obj_rows.empty()) {
    if (!enc_rows.empty() && enc_rows.size() != obj_rows.size())
      throw std::invalid_argument(
          "compose_losses: encoder branch must be present for every image or none");
    Var o_all = nn::concat_rows(obj_rows);
    Var dec_all = nn::concat_rows(dec_rows);
    if (!enc_rows.empty()) {
      Var enc_all = nn::concat_rows(enc_rows);
      ca_det = detector_alignment_loss(enc_all, dec_all, o_all, opt.tau).value;
    } else {
      ca_det = contrastive_alignment_loss(nn::l2normalize_rows(dec_all),
                                          nn::l2normalize_rows(o_all), opt.tau)
                   .value;
    }
    if (opt.mode == CalibrationMode::siamese && !aux_rows.empty()) {
      Var aux_all = nn::concat_rows(aux_rows);
      ca_aux = contrastive_alignment_loss(nn::l2normalize_rows(aux_all),
                                          nn::l2normalize_rows(o_all), opt.tau)
                   .value;
    }
  }

  Var total = nn::add(
      nn::add(nn::add(ca_det, cls), nn::add(reg, ang)),
      nn::add(nn::add(ca_aux, cls_aux), nn::add(reg_aux, ang_aux)));

  ComposedLoss out;
  out.total = total;
  out.parts.ca_det = ca_det.val()(0, 0);
  out.parts.cls = cls.val()(0, 0);
  out.parts.reg = reg.val()(0, 0);
  out.parts.ang = ang.val()(0, 0);
  out.parts.ca_aux = ca_aux.val()(0, 0);
  out.parts.cls_aux = cls_aux.val()(0, 0);
  out.parts.reg_aux = reg_aux.val()(0, 0);
  out.parts.ang_aux = ang_aux.val()(0, 0);
  out.parts.total = out.parts.ca_det + out.parts.cls + out.parts.reg + out.parts.ang +
                    out.parts.ca_aux + out.parts.cls_aux + out.parts.reg_aux +
                    out.parts.ang_aux;
  return out;
}

ComposedLoss compose_losses(Tape& t, const std::vector<BranchVars>& main_layers,
                            const std::optional<BranchVars>& enc_top,
                            const std::vector<BranchVars>& aux_layers, Var o_enh,
                            Var features, Var enhanced_features, const GtLabels& gt,
                            const LossOptions& opt) {
  ImageForward im;
  im.main_layers = &main_layers;
  im.enc_top = &enc_top;
  im.aux_layers = &aux_layers;
  im.o_enh = o_enh;
  im.features = features;
  im.enhanced_features = enhanced_features;
  im.gt = &gt;
  return compose_losses(t, std::vector<ImageForward>{im}, opt);
}

}  // namespace mutdet::loss
