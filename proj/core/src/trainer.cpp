#include "mutdet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"
#include "mutdet/checkpoint.hpp"
#include "mutdet/errors.hpp"
#include "mutdet/matching.hpp"
#include "mutdet/pseudo_labels.hpp"

namespace mutdet::train {

AdamW::AdamW(double beta1, double beta2, double weight_decay, double eps)
    : beta1_(beta1), beta2_(beta2), weight_decay_(weight_decay), eps_(eps) {}

void AdamW::step(nn::ParamStore& store, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, t_);
  const double bc2 = 1.0 - std::pow(beta2_, t_);
  for (const std::string& name : store.names()) {
    const nn::Mat& g = store.grad(name);
    nn::Mat& p = store.mutable_value(name);
    auto mi = m_.find(name);
    if (mi == m_.end()) {
      mi = m_.emplace(name, nn::Mat::Zero(p.rows(), p.cols())).first;
      v_.emplace(name, nn::Mat::Zero(p.rows(), p.cols()));
    }
    nn::Mat& m = mi->second;
    nn::Mat& v = v_[name];
    m = beta1_ * m + (1.0 - beta1_) * g;
    v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
    const nn::Mat m_hat = m / bc1;
    const nn::Mat v_hat = v / bc2;
    p -= lr * (m_hat.array() / (v_hat.array().sqrt() + eps_)).matrix();
    p -= lr * weight_decay_ * p;
  }
}

std::vector<TrainExample> load_dataset(const std::string& data_dir,
                                       const std::string& labels_path, int max_objects,
                                       int expected_emb_dim, int max_class) {
  const auto sets = labels::read_label_store(labels_path);
  std::map<std::string, const labels::PseudoLabelSet*> by_id;
  for (const auto& s : sets) by_id[s.image_id] = &s;

  const auto items = synth::list_dataset(data_dir);
  if (items.empty()) throw DataError("no .ppm images under " + data_dir);

  std::vector<TrainExample> out;
  out.reserve(items.size());
  for (const auto& item : items) {
    auto it = by_id.find(item.id);
    if (it == by_id.end()) throw DataError("no label entry for image " + item.id);
    TrainExample ex;
    ex.id = item.id;
    ex.image = read_ppm(item.image_path);

    const auto& entries = it->second->entries;
    const int m = std::min<int>(int(entries.size()), max_objects);
    ex.gt.boxes = nn::Mat(m, 4);
    ex.gt.embeddings = nn::Mat(m, expected_emb_dim);
    ex.gt.cls.resize(m);
    ex.gt.angles.resize(m);
    for (int i = 0; i < m; ++i) {
      const auto& e = entries[i];
      ex.gt.boxes(i, 0) = e.box.cx / ex.image.w;
      ex.gt.boxes(i, 1) = e.box.cy / ex.image.h;
      ex.gt.boxes(i, 2) = e.box.w / ex.image.w;
      ex.gt.boxes(i, 3) = e.box.h / ex.image.h;
      ex.gt.cls[i] = e.cls;
      ex.gt.angles[i] = e.angle;
      if (e.cls < 0 || e.cls >= max_class)
        throw DataError("class id " + std::to_string(e.cls) + " out of range in " + item.id);
      if (e.embedding.size() != expected_emb_dim)
        throw DataError("embedding width " + std::to_string(e.embedding.size()) + " != " +
                        std::to_string(expected_emb_dim) + " in " + item.id);
      ex.gt.embeddings.row(i) = e.embedding.transpose();
    }
    out.push_back(std::move(ex));
  }
  return out;
}

void generate_dataset(const std::string& out_dir, std::uint64_t seed, int count,
                      int max_objects, int size) {
  if (count < 0) throw std::invalid_argument("generate_dataset: count < 0");
  std::mt19937_64 master(seed);
  for (int i = 0; i < count; ++i) {
    const int n = max_objects <= 0 ? 0 : 1 + int(master() % std::uint64_t(max_objects));
    const synth::Scene scene = synth::generate_scene(seed + 1 + std::uint64_t(i), n, size);
    synth::write_scene(out_dir, synth::image_id(i), scene);
  }
}

PrepareStats prepare_label_store(const std::string& data_dir, int clusters, int dim,
                                 const std::string& out_path, std::uint64_t backbone_seed,
                                 int backbone_C) {
  if (clusters < 1) throw ConfigError("clusters must be >= 1");
  if (dim < 1) throw ConfigError("dim must be >= 1");
  const auto items = synth::list_dataset(data_dir);
  if (items.empty()) throw DataError("no .ppm images under " + data_dir);

  const det::FrozenBackbone extractor(32, backbone_C, backbone_seed);

  struct Loaded {
    std::string id;
    Image image;
    std::vector<std::vector<geom::Vec2>> masks;
  };
  std::vector<Loaded> data;
  data.reserve(items.size());
  std::vector<Eigen::VectorXd> raw;
  PrepareStats stats;
  for (const auto& item : items) {
    Loaded l;
    l.id = item.id;
    l.image = read_ppm(item.image_path);
    l.masks = labels::read_mask_file(item.mask_path);
    for (const auto& mask : l.masks) {
      try {
        const geom::OrientedBox box = geom::min_area_rect(mask);
        raw.push_back(extractor.embed_crop(l.image, box));
      } catch (const std::invalid_argument&) {
        // Degenerate instance; the per-image pass drops it the same way.
      }
    }
    data.push_back(std::move(l));
  }
  if (raw.empty()) throw DataError("dataset has no usable instances");
  if (clusters > int(raw.size()))
    throw DataError("clusters (" + std::to_string(clusters) + ") exceeds instance count (" +
                    std::to_string(raw.size()) + ")");

  Eigen::MatrixXd X(raw.size(), raw[0].size());
  for (std::size_t i = 0; i < raw.size(); ++i) X.row(Eigen::Index(i)) = raw[i].transpose();
  const labels::PcaModel pca = labels::pca_fit(X, dim);

  std::vector<Eigen::VectorXd> kept;
  kept.reserve(raw.size());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    try {
      kept.push_back(labels::l2_normalize(labels::pca_project(pca, X.row(i))));
    } catch (const std::invalid_argument&) {
      // Collapsed projection; the per-image pass drops such instances too.
    }
  }
  if (clusters > int(kept.size()))
    throw DataError("clusters (" + std::to_string(clusters) + ") exceeds usable instance count (" +
                    std::to_string(kept.size()) + ")");
  Eigen::MatrixXd projected(kept.size(), dim);
  for (std::size_t i = 0; i < kept.size(); ++i)
    projected.row(Eigen::Index(i)) = kept[i].transpose();
  const labels::KMeansModel km = labels::kmeans_fit(projected, clusters, 100, backbone_seed);

  std::vector<labels::PseudoLabelSet> sets;
  sets.reserve(data.size());
  for (const auto& l : data) {
    stats.images += 1;
    if (l.masks.empty()) {
      sets.push_back({l.id, {}});
      continue;
    }
    auto result = labels::masks_to_pseudolabels(
        l.id, l.masks, [&](const geom::OrientedBox& b) { return extractor.embed_crop(l.image, b); },
        pca, km);
    stats.instances += int(result.labels.entries.size());
    stats.dropped += result.dropped;
    sets.push_back(std::move(result.labels));
  }
  labels::write_label_store(out_path, sets);
  return stats;
}

namespace {

std::string metrics_line(const MetricsRow& r) {
  using labels::format_double;
  std::string s = "{\"iteration\":" + std::to_string(r.iteration);
  s += ",\"epoch\":" + std::to_string(r.epoch);
  s += ",\"lr\":" + format_double(r.lr);
  s += ",\"ca_det\":" + format_double(r.parts.ca_det);
  s += ",\"cls\":" + format_double(r.parts.cls);
  s += ",\"reg\":" + format_double(r.parts.reg);
  s += ",\"ang\":" + format_double(r.parts.ang);
  s += ",\"ca_aux\":" + format_double(r.parts.ca_aux);
  s += ",\"cls_aux\":" + format_double(r.parts.cls_aux);
  s += ",\"reg_aux\":" + format_double(r.parts.reg_aux);
  s += ",\"ang_aux\":" + format_double(r.parts.ang_aux);
  s += ",\"total\":" + format_double(r.parts.total);
  s += "}";
  return s;
}

}  // namespace

TrainResult pretrain(const cfg::RunConfig& rc, const std::string& data_dir,
                     const std::string& labels_path, const std::string& ckpt_out,
                     const std::string& metrics_path) {
  rc.validate();
  const det::DetectorConfig dcfg = rc.detector();
  const loss::LossOptions lopt = rc.loss_options();

  const auto dataset = load_dataset(data_dir, labels_path, dcfg.N, dcfg.C, dcfg.K_cls);

  TrainResult result;
  det::Detector::init_params(result.store, dcfg);
  det::Detector detector(dcfg, result.store);
  AdamW opt(rc.beta1, rc.beta2, rc.weight_decay);

  std::ofstream metrics;
  if (!metrics_path.empty()) {
    metrics.open(metrics_path, std::ios::trunc);
    if (!metrics) throw DataError("cannot open metrics file: " + metrics_path);
  }

  std::vector<int> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[int(i)] = int(i);

  int iteration = 0;
  for (int epoch = 0; epoch < rc.epochs; ++epoch) {
    std::mt19937_64 shuffle_rng(rc.seed + 1000003ULL * std::uint64_t(epoch + 1));
    for (int i = int(order.size()) - 1; i > 0; --i)
      std::swap(order[i], order[int(shuffle_rng() % std::uint64_t(i + 1))]);

    for (std::size_t start = 0; start < order.size(); start += std::size_t(rc.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + std::size_t(rc.batch_size));
      const int b = int(stop - start);
      result.store.zero_grads();

      MetricsRow row;
      row.iteration = iteration;
      row.epoch = epoch;
      std::string batch_ids;
      // One tape for the whole batch: the alignment terms contrast every
      // matched pair against all of the batch's objects.
      nn::Tape t;
      std::vector<const TrainExample*> examples;
      std::vector<det::PretrainResult> graphs;
      examples.reserve(std::size_t(b));
      graphs.reserve(std::size_t(b));
      for (std::size_t k = start; k < stop; ++k) {
        const TrainExample& ex = dataset[std::size_t(order[int(k)])];
        batch_ids += (batch_ids.empty() ? "" : ",") + ex.id;
        examples.push_back(&ex);
        graphs.push_back(detector.pretrain_graphs(t, ex.image, ex.gt, lopt));
      }
      std::vector<loss::ImageForward> fwd;
      fwd.reserve(std::size_t(b));
      for (int k = 0; k < b; ++k)
        fwd.push_back(graphs[std::size_t(k)].image_forward(examples[std::size_t(k)]->gt));
      const loss::ComposedLoss composed = loss::compose_losses(t, fwd, lopt);
      if (!std::isfinite(composed.parts.total))
        throw NumericalError("non-finite loss at iteration " + std::to_string(iteration) +
                             " (batch images: " + batch_ids + ")");
      row.parts = composed.parts;
      t.backward(composed.total.id);

      double lr = rc.learning_rate;
      if (iteration < rc.warmup_iters) lr *= double(iteration + 1) / double(rc.warmup_iters);
      if (epoch >= rc.lr_decay_epoch) lr *= rc.lr_decay_factor;
      row.lr = lr;
      opt.step(result.store, lr);

      if (metrics.is_open() && iteration % rc.log_every == 0)
        metrics << metrics_line(row) << "\n";
      result.rows.push_back(row);
      ++iteration;
    }

    if (!ckpt_out.empty() && rc.checkpoint_every > 0 && (epoch + 1) % rc.checkpoint_every == 0 &&
        epoch + 1 < rc.epochs)
      ckpt::save(ckpt_out + ".ep" + std::to_string(epoch + 1), rc, result.store);
  }

  result.iterations = iteration;
  if (!ckpt_out.empty()) ckpt::save(ckpt_out, rc, result.store);
  if (metrics.is_open()) {
    metrics.flush();
    if (!metrics) throw DataError("short write on metrics file: " + metrics_path);
  }
  return result;
}

AlignmentReport eval_alignment(const cfg::RunConfig& rc, nn::ParamStore& store,
                               const std::string& data_dir, const std::string& labels_path) {
  const det::DetectorConfig dcfg = rc.detector();
  const loss::LossOptions lopt = rc.loss_options();
  const auto dataset = load_dataset(data_dir, labels_path, dcfg.N, dcfg.C, dcfg.K_cls);
  det::Detector detector(dcfg, store);

  AlignmentReport report;
  double sum = 0.0;
  for (const TrainExample& ex : dataset) {
    if (ex.gt.count() == 0) continue;
    nn::Tape t;
    const auto layers = detector.finetune_forward(t, ex.image);
    const loss::BranchVars& fin = layers.back();
    const Eigen::MatrixXd cost =
        match::match_cost(fin.boxes.val(), fin.cls_logits.val(), fin.ang_logits.val(),
                          ex.gt.boxes, ex.gt.cls, ex.gt.angles, lopt.matching);
    const auto assignment = match::hungarian(cost);
    const det::Discrepancy d = det::feature_discrepancy(fin.embeddings.val(), ex.gt.embeddings,
                                                        assignment.prediction_for());
    if (!d.defined) continue;
    report.per_image.emplace_back(ex.id, d.mean);
    sum += d.mean;
    report.matched_images += 1;
  }
  if (report.matched_images == 0) throw DataError("no matched instances in " + data_dir);
  report.mean = sum / report.matched_images;
  return report;
}

void emit_loss_curves(const std::string& metrics_path, const std::string& csv_path) {
  std::ifstream in(metrics_path);
  if (!in) throw DataError("cannot open metrics file: " + metrics_path);
  std::ofstream out(csv_path, std::ios::trunc);
  if (!out) throw DataError("cannot open output file: " + csv_path);

  static const char* kColumns[] = {"ca_det", "cls",     "reg",     "ang",  "ca_aux",
                                   "cls_aux", "reg_aux", "ang_aux", "total"};
  out << "iteration,ca_det,cls,reg,ang,ca_aux,cls_aux,reg_aux,ang_aux,total\n";

  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("metrics line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("iteration"))
      throw DataError("metrics line " + std::to_string(line_no) + ": not a metrics object");
    out << j["iteration"].get<long long>();
    for (const char* col : kColumns) {
      if (!j.contains(col))
        throw DataError("metrics line " + std::to_string(line_no) + ": missing field " + col);
      out << "," << labels::format_double(j[col].get<double>());
    }
    out << "\n";
  }
  out.flush();
  if (!out) throw DataError("short write on " + csv_path);
}

}  // namespace mutdet::train
