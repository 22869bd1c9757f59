#include "pacm/contrastive.hpp"

#include <cmath>
#include <string>

namespace pacm {

namespace {

void check_unit_rows(const Matrix& m, const char* what) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    if (std::abs(m.row(i).norm() - 1.0) > 1e-9)
      throw UsageError(std::string(what) + " row " + std::to_string(i) + " is not unit norm");
}

}  // namespace

void ContrastiveBatch::validate() const {
  if (!(temperature > 0.0)) throw UsageError("temperature must be positive");
  if (anchors.rows() == 0) throw UsageError("contrastive batch has no anchors");
  if (positives.rows() != anchors.rows() || positives.cols() != anchors.cols())
    throw UsageError("positives must align with anchors");
  if (negatives.size() != static_cast<std::size_t>(anchors.rows()))
    throw UsageError("one negative set per anchor is required");
  check_unit_rows(anchors, "anchor");
  check_unit_rows(positives, "positive");
  for (std::size_t i = 0; i < negatives.size(); ++i) {
    if (negatives[i].rows() == 0)
      throw UsageError("anchor " + std::to_string(i) + " has an empty negative set");
    if (negatives[i].cols() != anchors.cols())
      throw UsageError("negative width does not match anchor width");
    check_unit_rows(negatives[i], "negative");
  }
}

double critic_h(const Vector& a, const Vector& b, double temperature) {
  if (!(temperature > 0.0)) throw UsageError("temperature must be positive");
  if (a.size() != b.size()) throw DimensionError("critic inputs differ in length");
  const double cosine = a.dot(b) / (a.norm() * b.norm());
  return std::exp(cosine / temperature);
}

ContrastiveResult pac_loss(const ContrastiveBatch& batch) {
  batch.validate();
  const double inv_t = 1.0 / batch.temperature;
  const Eigen::Index n = batch.anchors.rows();
  ContrastiveResult r;
  r.per_anchor.resize(n);
  r.grad_anchors.resizeLike(batch.anchors);
  r.grad_positives.resizeLike(batch.positives);
  r.grad_negatives.reserve(batch.negatives.size());

  for (Eigen::Index i = 0; i < n; ++i) {
    const auto a = batch.anchors.row(i);
    const auto p = batch.positives.row(i);
    const Matrix& negs = batch.negatives[static_cast<std::size_t>(i)];
    const double pos_logit = a.dot(p) * inv_t;
    const Vector neg_logits = (negs * a.transpose()) * inv_t;
    const double top = std::max(pos_logit, neg_logits.maxCoeff());
    const Vector neg_w = (neg_logits.array() - top).exp().matrix();
    const double pos_w = std::exp(pos_logit - top);
    const double denom = pos_w + neg_w.sum();
    r.per_anchor[i] = top + std::log(denom) - pos_logit;

    const double pos_soft = pos_w / denom;
    const Vector neg_soft = neg_w / denom;
    r.grad_anchors.row(i) =
        inv_t * ((pos_soft - 1.0) * p + neg_soft.transpose() * negs);
    r.grad_positives.row(i) = inv_t * (pos_soft - 1.0) * a;
    r.grad_negatives.push_back(inv_t * neg_soft * a);
  }
  r.loss = r.per_anchor.sum();
  return r;
}

double mi_lower_bound(double loss_per_anchor, int k) {
  return std::log(static_cast<double>(k)) - loss_per_anchor;
}

InBatchResult in_batch_pac_loss(const Matrix& frontal, const Matrix& profile,
                                double temperature) {
  if (frontal.rows() != profile.rows() || frontal.cols() != profile.cols())
    throw UsageError("in-batch loss needs aligned frontal and profile rows");
  const Eigen::Index b = frontal.rows();
  if (b < 2) throw UsageError("in-batch loss needs at least two pairs");

  auto others = [b](const Matrix& m, Eigen::Index skip) {
    Matrix out(b - 1, m.cols());
    for (Eigen::Index j = 0, k = 0; j < b; ++j)
      if (j != skip) out.row(k++) = m.row(j);
    return out;
  };
  auto scatter = [b](Matrix& grad, const Matrix& g, Eigen::Index skip) {
    for (Eigen::Index j = 0, k = 0; j < b; ++j)
      if (j != skip) grad.row(j) += g.row(k++);
  };

  InBatchResult out;
  out.grad_frontal = Matrix::Zero(b, frontal.cols());
  out.grad_profile = Matrix::Zero(b, profile.cols());

  for (const bool frontal_anchor : {true, false}) {
    const Matrix& anchors = frontal_anchor ? frontal : profile;
    const Matrix& other = frontal_anchor ? profile : frontal;
    ContrastiveBatch batch{anchors, other, {}, temperature};
    for (Eigen::Index i = 0; i < b; ++i) batch.negatives.push_back(others(other, i));
    const auto r = pac_loss(batch);
    Matrix& g_anchor = frontal_anchor ? out.grad_frontal : out.grad_profile;
    Matrix& g_other = frontal_anchor ? out.grad_profile : out.grad_frontal;
    g_anchor += r.grad_anchors;
    g_other += r.grad_positives;
    for (Eigen::Index i = 0; i < b; ++i)
      scatter(g_other, r.grad_negatives[static_cast<std::size_t>(i)], i);
    (frontal_anchor ? out.frontal_anchored : out.profile_anchored) = r.loss;
  }
  out.loss = out.frontal_anchored + out.profile_anchored;
  return out;
}

}  // namespace pacm
