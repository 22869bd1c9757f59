#include "pacm/memory.hpp"

#include <cmath>
#include <iostream>
#include <string>

#include "pacm/contrastive.hpp"

namespace pacm {

namespace {

void check_unit(const Vector& z, const char* what) {
  if (!z.allFinite() || std::abs(z.norm() - 1.0) > 1e-9)
    throw UsageError(std::string(what) + ": embedding is not unit norm");
}

}  // namespace

MemoryBuffer::MemoryBuffer(Matrix frontal, Matrix profile, std::vector<int> frontal_identity,
                           std::vector<int> profile_identity, int frontal_first_instance,
                           int profile_first_instance, double momentum)
    : frontal_(std::move(frontal)),
      profile_(std::move(profile)),
      frontal_identity_(std::move(frontal_identity)),
      profile_identity_(std::move(profile_identity)),
      frontal_first_(frontal_first_instance),
      profile_first_(profile_first_instance),
      momentum_(momentum) {
  if (!(momentum_ >= 0.0 && momentum_ <= 1.0))
    throw ConfigError("memory momentum must lie in [0, 1]");
  if (frontal_.cols() != profile_.cols()) throw DimensionError("memory views differ in width");
  if (frontal_identity_.size() != static_cast<std::size_t>(frontal_.rows()) ||
      profile_identity_.size() != static_cast<std::size_t>(profile_.rows()))
    throw DimensionError("memory identity map does not match row count");
  for (const Matrix* m : {&frontal_, &profile_})
    for (Eigen::Index r = 0; r < m->rows(); ++r)
      if (!m->row(r).allFinite() || std::abs(m->row(r).norm() - 1.0) > 1e-9)
        throw ValidationError("memory row " + std::to_string(r) + " is not unit norm");
}

std::size_t MemoryBuffer::row_of(View v, int instance_id) const {
  const long offset = static_cast<long>(instance_id) - first_instance(v);
  if (offset < 0 || offset >= static_cast<long>(rows(v)))
    throw UsageError("instance " + std::to_string(instance_id) + " has no " + to_string(v) +
                     " memory entry");
  return static_cast<std::size_t>(offset);
}

bool MemoryBuffer::update_entry(View v, int instance_id, const Vector& z) {
  const std::size_t row = row_of(v, instance_id);
  check_unit(z, "update_entry");
  if (z.size() != dim()) throw DimensionError("update_entry: embedding width mismatch");
  auto target = mutable_entries(v).row(static_cast<Eigen::Index>(row));
  const Eigen::RowVectorXd blend = momentum_ * target + (1.0 - momentum_) * z.transpose();
  const double norm = blend.norm();
  if (!(norm > 1e-12)) {
    ++degenerate_updates_;
    std::clog << "warning: degenerate memory update for " << to_string(v) << " instance "
              << instance_id << "; keeping previous entry\n";
    return false;
  }
  target = blend / norm;
  return true;
}

void MemoryBuffer::overwrite_entry(View v, int instance_id, const Vector& z) {
  const std::size_t row = row_of(v, instance_id);
  check_unit(z, "overwrite_entry");
  if (z.size() != dim()) throw DimensionError("overwrite_entry: embedding width mismatch");
  mutable_entries(v).row(static_cast<Eigen::Index>(row)) = z.transpose();
}

MemoryBuffer init_buffer(const MultiviewDataset& dataset, int dim, double momentum,
                         std::uint64_t seed) {
  if (dim < 2) throw UsageError("memory embedding width must be at least 2");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix rows[2];
  std::vector<int> ids[2];
  int first[2] = {0, 0};
  for (View v : {View::frontal, View::profile}) {
    const auto& samples = dataset.samples(v);
    const int k = v == View::frontal ? 0 : 1;
    first[k] = samples.empty() ? 0 : samples.front().instance_id;
    rows[k].resize(static_cast<Eigen::Index>(samples.size()), dim);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (samples[i].instance_id != first[k] + static_cast<int>(i))
        throw DataError("memory needs contiguous instance ids per view");
      ids[k].push_back(samples[i].identity);
      Eigen::RowVectorXd r(dim);
      do {
        for (int c = 0; c < dim; ++c) r[c] = normal(rng);
      } while (!(r.norm() > 1e-12));
      rows[k].row(static_cast<Eigen::Index>(i)) = r / r.norm();
    }
  }
  return MemoryBuffer(std::move(rows[0]), std::move(rows[1]), std::move(ids[0]),
                      std::move(ids[1]), first[0], first[1], momentum);
}

MemoryDraw sample_memory_negatives(const MemoryBuffer& buffer, View view, int anchor_identity,
                                   int positive_instance, std::size_t k, std::mt19937_64& rng) {
  MemoryDraw draw;
  draw.positive = buffer.row_of(view, positive_instance);
  const auto& ids = buffer.identities(view);
  std::vector<std::size_t> pool;
  pool.reserve(ids.size());
  for (std::size_t r = 0; r < ids.size(); ++r)
    if (ids[r] != anchor_identity) pool.push_back(r);
  if (k > pool.size())
    throw CapacityError("requested " + std::to_string(k) + " memory negatives but only " +
                        std::to_string(pool.size()) + " are eligible (short by " +
                        std::to_string(k - pool.size()) + ")");
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> d(i, pool.size() - 1);
    std::swap(pool[i], pool[d(rng)]);
  }
  pool.resize(k);
  draw.negatives = std::move(pool);
  return draw;
}

PacmResult pacm_loss(const Matrix& frontal, const Matrix& profile, const MemoryBuffer& buffer,
                     const std::vector<PairRef>& pairs, std::size_t k, double temperature,
                     std::mt19937_64& rng) {
  const auto b = frontal.rows();
  if (profile.rows() != b || static_cast<std::size_t>(b) != pairs.size())
    throw UsageError("pacm_loss: live batch and pair list disagree in size");
  if (frontal.cols() != buffer.dim() || profile.cols() != buffer.dim())
    throw DimensionError("pacm_loss: embedding width differs from memory width");
  if (k == 0) throw UsageError("pacm_loss: at least one negative is required");

  PacmResult out;
  for (const View anchor_view : {View::frontal, View::profile}) {
    const View memory_view = opposite(anchor_view);
    const Matrix& memory = buffer.entries(memory_view);
    ContrastiveBatch batch;
    batch.temperature = temperature;
    batch.anchors = anchor_view == View::frontal ? frontal : profile;
    batch.positives.resize(b, buffer.dim());
    for (Eigen::Index i = 0; i < b; ++i) {
      const auto& pair = pairs[static_cast<std::size_t>(i)];
      const int positive =
          memory_view == View::frontal ? pair.frontal_instance : pair.profile_instance;
      const auto draw = sample_memory_negatives(buffer, memory_view, pair.identity, positive, k, rng);
      batch.positives.row(i) = memory.row(static_cast<Eigen::Index>(draw.positive));
      Matrix negs(static_cast<Eigen::Index>(k), buffer.dim());
      for (std::size_t j = 0; j < k; ++j)
        negs.row(static_cast<Eigen::Index>(j)) = memory.row(static_cast<Eigen::Index>(draw.negatives[j]));
      batch.negatives.push_back(std::move(negs));
    }
    auto r = pac_loss(batch);
    if (anchor_view == View::frontal) {
      out.frontal_anchored = r.loss;
      out.grad_frontal = std::move(r.grad_anchors);
    } else {
      out.profile_anchored = r.loss;
      out.grad_profile = std::move(r.grad_anchors);
    }
  }
  out.loss = out.frontal_anchored + out.profile_anchored;
  return out;
}

}  // namespace pacm
