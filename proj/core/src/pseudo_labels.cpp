#include "mutdet/pseudo_labels.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "mutdet/errors.hpp"

namespace mutdet::labels {

Eigen::VectorXd l2_normalize(const Eigen::VectorXd& v) {
  const double n = v.norm();
  if (!(n > 1e-300)) {
    throw std::invalid_argument("l2_normalize: zero vector");
  }
  return v / n;
}

PcaModel pca_fit(const Eigen::MatrixXd& X, int target_dim) {
  const Eigen::Index n = X.rows();
  const Eigen::Index d = X.cols();
  if (n < 2) {
    throw DataError("pca_fit: need at least 2 samples");
  }
  if (target_dim < 1) {
    throw std::invalid_argument("pca_fit: target_dim must be >= 1");
  }
  PcaModel m;
  m.out_dim = target_dim;
  m.mean = X.colwise().mean();
  Eigen::MatrixXd centered = X.rowwise() - m.mean.transpose();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  const double tol = sv.size() > 0 ? sv(0) * 1e-10 : 0.0;
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv(i) > tol) ++rank;
  }
  const int r = int(std::min<Eigen::Index>({Eigen::Index(target_dim), rank, n - 1, d}));
  m.components.resize(r, d);
  m.explained_variance.resize(r);
  for (int i = 0; i < r; ++i) {
    Eigen::VectorXd row = svd.matrixV().col(i);
    // canonical sign: largest-magnitude coefficient positive
    Eigen::Index imax;
    row.cwiseAbs().maxCoeff(&imax);
    if (row(imax) < 0.0) row = -row;
    m.components.row(i) = row.transpose();
    m.explained_variance(i) = sv(i) * sv(i) / double(n - 1);
  }
  return m;
}

Eigen::VectorXd pca_project(const PcaModel& m, const Eigen::VectorXd& v) {
  if (v.size() != m.mean.size()) {
    throw std::invalid_argument("pca_project: dimension mismatch");
  }
  Eigen::VectorXd out = Eigen::VectorXd::Zero(m.out_dim);
  out.head(m.components.rows()) = m.components * (v - m.mean);
  return out;
}

namespace {

// argmin over centroids; ties resolved to the lowest index by strict <
int nearest_centroid(const Eigen::MatrixXd& centroids, const Eigen::VectorXd& v,
                     double* dist2_out = nullptr) {
  int best = 0;
  double best_d = (centroids.row(0).transpose() - v).squaredNorm();
  for (Eigen::Index j = 1; j < centroids.rows(); ++j) {
    const double dj = (centroids.row(j).transpose() - v).squaredNorm();
    if (dj < best_d) {
      best_d = dj;
      best = int(j);
    }
  }
  if (dist2_out) *dist2_out = best_d;
  return best;
}

}  // namespace

KMeansModel kmeans_fit(const Eigen::MatrixXd& X, int k, int max_iters, std::uint64_t seed) {
  const Eigen::Index n = X.rows();
  if (k < 1) throw std::invalid_argument("kmeans_fit: k must be >= 1");
  if (n < k) throw DataError("kmeans_fit: fewer samples than clusters");

  std::mt19937_64 rng(seed);
  KMeansModel m;
  m.centroids.resize(k, X.cols());

  // k-means++ seeding
  std::vector<char> chosen(n, 0);
  {
    std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
    const Eigen::Index first = pick(rng);
    m.centroids.row(0) = X.row(first);
    chosen[first] = 1;
    Eigen::VectorXd d2(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      d2(i) = (X.row(i) - m.centroids.row(0)).squaredNorm();
    }
    for (int c = 1; c < k; ++c) {
      const double total = d2.sum();
      Eigen::Index next = -1;
      if (total > 0.0) {
        std::uniform_real_distribution<double> u(0.0, total);
        double target = u(rng);
        for (Eigen::Index i = 0; i < n; ++i) {
          target -= d2(i);
          if (target <= 0.0) {
            next = i;
            break;
          }
        }
        if (next < 0) next = n - 1;
      }
      if (next < 0 || chosen[next]) {
        for (Eigen::Index i = 0; i < n; ++i) {
          if (!chosen[i]) {
            next = i;
            break;
          }
        }
      }
      m.centroids.row(c) = X.row(next);
      chosen[next] = 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        d2(i) = std::min(d2(i), (X.row(i) - m.centroids.row(c)).squaredNorm());
      }
    }
  }

  std::vector<int> assign(n, -1);
  std::vector<double> dist2(n, 0.0);
  for (int iter = 0; iter < max_iters; ++iter) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      const int a = nearest_centroid(m.centroids, X.row(i).transpose(), &dist2[i]);
      if (a != assign[i]) {
        assign[i] = a;
        changed = true;
      }
    }
    // recover empty clusters from the farthest outlier
    std::vector<Eigen::Index> counts(k, 0);
    for (Eigen::Index i = 0; i < n; ++i) counts[assign[i]]++;
    for (int j = 0; j < k; ++j) {
      if (counts[j] > 0) continue;
      Eigen::Index far_i = 0;
      double far_d = -1.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (counts[assign[i]] > 1 && dist2[i] > far_d) {
          far_d = dist2[i];
          far_i = i;
        }
      }
      counts[assign[far_i]]--;
      assign[far_i] = j;
      counts[j] = 1;
      m.centroids.row(j) = X.row(far_i);
      dist2[far_i] = 0.0;
      changed = true;
    }
    if (!changed && iter > 0) break;
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, X.cols());
    for (Eigen::Index i = 0; i < n; ++i) sums.row(assign[i]) += X.row(i);
    for (int j = 0; j < k; ++j) {
      if (counts[j] > 0) m.centroids.row(j) = sums.row(j) / double(counts[j]);
    }
  }
  m.inertia = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double d = 0.0;
    nearest_centroid(m.centroids, X.row(i).transpose(), &d);
    m.inertia += d;
  }
  return m;
}

int assign_cluster(const KMeansModel& m, const Eigen::VectorXd& v) {
  if (v.size() != m.centroids.cols()) {
    throw std::invalid_argument("assign_cluster: dimension mismatch");
  }
  return nearest_centroid(m.centroids, v);
}

PipelineResult masks_to_pseudolabels(const std::string& image_id,
                                     const std::vector<std::vector<geom::Vec2>>& masks,
                                     const EmbedFn& embed_fn, const PcaModel& pca,
                                     const KMeansModel& km,
                                     bool normalize_before_projection) {
  PipelineResult res;
  res.labels.image_id = image_id;
  for (const auto& points : masks) {
    try {
      const geom::OrientedBox box = geom::min_area_rect(points);
      const Eigen::VectorXd raw = embed_fn(box);
      Eigen::VectorXd emb;
      if (normalize_before_projection) {
        emb = pca_project(pca, l2_normalize(raw));
      } else {
        emb = pca_project(pca, raw);
        if (emb.norm() <= 1e-12) throw std::invalid_argument("projection collapsed to zero");
        emb = l2_normalize(emb);
      }
      const int cls = assign_cluster(km, emb);
      res.labels.entries.push_back(PseudoLabel{box, cls, box.angle, emb});
    } catch (const std::invalid_argument&) {
      res.dropped++;
    }
  }
  if (res.labels.entries.empty() && !masks.empty()) {
    throw DataError("masks_to_pseudolabels: every instance was degenerate for image " + image_id);
  }
  return res;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace {

void append_box_array(std::string& out, const geom::OrientedBox& b) {
  out += '[';
  out += format_double(b.cx);
  out += ',';
  out += format_double(b.cy);
  out += ',';
  out += format_double(b.w);
  out += ',';
  out += format_double(b.h);
  out += ',';
  out += format_double(b.angle);
  out += ']';
}

}  // namespace

void write_label_store(const std::string& path, const std::vector<PseudoLabelSet>& sets) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("write_label_store: cannot open " + path);
  for (const PseudoLabelSet& s : sets) {
    std::string line = "{\"image_id\":";
    line += nlohmann::json(s.image_id).dump();
    line += ",\"boxes\":[";
    for (size_t i = 0; i < s.entries.size(); ++i) {
      if (i) line += ',';
      append_box_array(line, s.entries[i].box);
    }
    line += "],\"cls\":[";
    for (size_t i = 0; i < s.entries.size(); ++i) {
      if (i) line += ',';
      line += std::to_string(s.entries[i].cls);
    }
    line += "],\"embeddings\":[";
    for (size_t i = 0; i < s.entries.size(); ++i) {
      if (i) line += ',';
      line += '[';
      const Eigen::VectorXd& e = s.entries[i].embedding;
      for (Eigen::Index j = 0; j < e.size(); ++j) {
        if (j) line += ',';
        line += format_double(e(j));
      }
      line += ']';
    }
    line += "]}\n";
    f << line;
  }
}

std::vector<PseudoLabelSet> read_label_store(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("read_label_store: cannot open " + path);
  std::vector<PseudoLabelSet> sets;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("read_label_store: parse error at line " + std::to_string(lineno) + ": " +
                      e.what());
    }
    PseudoLabelSet s;
    s.image_id = j.at("image_id").get<std::string>();
    const auto& boxes = j.at("boxes");
    const auto& cls = j.at("cls");
    const auto& embs = j.at("embeddings");
    if (boxes.size() != cls.size() || boxes.size() != embs.size()) {
      throw DataError("read_label_store: field length mismatch at line " + std::to_string(lineno));
    }
    for (size_t i = 0; i < boxes.size(); ++i) {
      const auto& b = boxes[i];
      PseudoLabel pl{geom::OrientedBox(b.at(0).get<double>(), b.at(1).get<double>(),
                                       b.at(2).get<double>(), b.at(3).get<double>(),
                                       b.at(4).get<double>()),
                     cls[i].get<int>(), 0.0, Eigen::VectorXd()};
      pl.angle = pl.box.angle;
      const auto& e = embs[i];
      pl.embedding.resize(e.size());
      for (size_t k = 0; k < e.size(); ++k) pl.embedding(k) = e[k].get<double>();
      s.entries.push_back(std::move(pl));
    }
    sets.push_back(std::move(s));
  }
  return sets;
}

void write_mask_file(const std::string& path, const std::vector<std::vector<geom::Vec2>>& masks) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("write_mask_file: cannot open " + path);
  for (const auto& inst : masks) {
    std::string line = "[";
    for (size_t i = 0; i < inst.size(); ++i) {
      if (i) line += ',';
      line += '[';
      line += format_double(inst[i].x);
      line += ',';
      line += format_double(inst[i].y);
      line += ']';
    }
    line += "]\n";
    f << line;
  }
}

std::vector<std::vector<geom::Vec2>> read_mask_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("read_mask_file: cannot open " + path);
  std::vector<std::vector<geom::Vec2>> masks;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("read_mask_file: parse error at line " + std::to_string(lineno) + ": " +
                      e.what());
    }
    std::vector<geom::Vec2> inst;
    for (const auto& p : j) {
      inst.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    }
    masks.push_back(std::move(inst));
  }
  return masks;
}

}  // namespace mutdet::labels
