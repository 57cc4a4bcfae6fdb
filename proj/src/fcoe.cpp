#include "s3mot/fcoe.hpp"

#include <algorithm>
#include <cmath>

#include "s3mot/errors.hpp"
#include "s3mot/ops.hpp"

namespace s3mot {

namespace {

std::vector<double> random_unit(std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> v(dim);
  double nrm = 0.0;
  for (auto& x : v) {
    x = dist(rng);
    nrm += x * x;
  }
  nrm = std::sqrt(nrm);
  if (nrm < 1e-12) {
    v[0] = 1.0;
    return v;
  }
  for (auto& x : v) x /= nrm;
  return v;
}

}  // namespace

std::pair<DenseEmbeddingMap, DenseEmbeddingMap> synth_embedding_maps(
    const EmbeddingMapSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  std::vector<std::vector<double>> anchors;
  for (std::size_t k = 0; k < spec.objects; ++k)
    anchors.push_back(random_unit(spec.embed_dim, rng));

  // Blob centers for the key frame; the reference frame shifts each by one
  // cell in a random direction.
  std::uniform_int_distribution<int> rx(1, static_cast<int>(spec.width) - 2);
  std::uniform_int_distribution<int> ry(1, static_cast<int>(spec.height) - 2);
  std::uniform_int_distribution<int> shift(-1, 1);
  std::vector<std::pair<int, int>> centers_key, centers_ref;
  for (std::size_t k = 0; k < spec.objects; ++k) {
    const int cx = rx(rng), cy = ry(rng);
    centers_key.emplace_back(cy, cx);
    centers_ref.emplace_back(
        std::clamp(cy + shift(rng), 1, static_cast<int>(spec.height) - 2),
        std::clamp(cx + shift(rng), 1, static_cast<int>(spec.width) - 2));
  }

  auto build = [&](const std::vector<std::pair<int, int>>& centers) {
    DenseEmbeddingMap m;
    m.height = spec.height;
    m.width = spec.width;
    m.embed_dim = spec.embed_dim;
    m.embeddings = Tensor({m.cells(), spec.embed_dim});
    m.centerness.assign(m.cells(), 0.0);
    m.labels.assign(m.cells(), -1);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::uniform_real_distribution<double> bg_cent(0.0, 0.2);

    for (std::size_t k = 0; k < centers.size(); ++k) {
      const auto [cy, cx] = centers[k];
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int y = cy + dy, x = cx + dx;
          if (y < 0 || x < 0 || y >= static_cast<int>(spec.height) ||
              x >= static_cast<int>(spec.width))
            continue;
          const std::size_t cell =
              static_cast<std::size_t>(y) * spec.width + static_cast<std::size_t>(x);
          if (m.labels[cell] >= 0) continue;  // first blob wins overlaps
          m.labels[cell] = static_cast<int>(k);
          m.centerness[cell] = (dy == 0 && dx == 0) ? 1.0 : 0.6;
        }
    }
    for (std::size_t cell = 0; cell < m.cells(); ++cell) {
      std::vector<double> e(spec.embed_dim);
      if (m.labels[cell] >= 0) {
        const auto& anchor = anchors[static_cast<std::size_t>(m.labels[cell])];
        for (std::size_t i = 0; i < spec.embed_dim; ++i)
          e[i] = spec.separation * anchor[i] +
                 (1.0 - spec.separation) * noise(rng);
      } else {
        e = random_unit(spec.embed_dim, rng);
        m.centerness[cell] = bg_cent(rng);
      }
      double nrm = 0.0;
      for (double x : e) nrm += x * x;
      nrm = std::max(std::sqrt(nrm), 1e-12);
      for (std::size_t i = 0; i < spec.embed_dim; ++i)
        m.embeddings.at(cell * spec.embed_dim + i) = e[i] / nrm;
    }
    return m;
  };

  return {build(centers_key), build(centers_ref)};
}

SampledPairs sample_pairs(const DenseEmbeddingMap& key,
                          const DenseEmbeddingMap& ref,
                          std::size_t negatives_per_anchor,
                          std::mt19937_64& rng) {
  SampledPairs out;
  std::vector<std::size_t> ref_other_or_bg;
  for (std::size_t cell = 0; cell < key.cells(); ++cell) {
    if (key.labels[cell] < 0) continue;
    PairSample sample;
    sample.anchor = cell;
    sample.centerness = key.centerness[cell];
    ref_other_or_bg.clear();
    for (std::size_t r = 0; r < ref.cells(); ++r) {
      if (ref.labels[r] == key.labels[cell])
        sample.positives.push_back(r);
      else
        ref_other_or_bg.push_back(r);
    }
    if (sample.positives.empty()) {
      ++out.skipped_no_positive;
      continue;
    }
    if (!ref_other_or_bg.empty()) {
      std::uniform_int_distribution<std::size_t> pick(0, ref_other_or_bg.size() - 1);
      for (std::size_t k = 0; k < negatives_per_anchor; ++k)
        sample.negatives.push_back(ref_other_or_bg[pick(rng)]);
    }
    out.anchors.push_back(std::move(sample));
  }
  return out;
}

Tensor embed_loss(const Tensor& anchor, const Tensor& positives,
                  const Tensor& negatives, double centerness) {
  if (positives.size() == 0 || negatives.size() == 0 ||
      positives.rank() != 2 || negatives.rank() != 2)
    throw MissingPairs("embed_loss: needs >=1 positive and >=1 negative");
  if (anchor.rank() != 2 || anchor.dim(0) != 1 ||
      anchor.dim(1) != positives.dim(1) || negatives.dim(1) != anchor.dim(1))
    throw ShapeMismatch("embed_loss: embedding dims disagree");
  const std::size_t np = positives.dim(0), nn = negatives.dim(0);
  const Tensor at = permute(anchor, {1, 0});            // [e,1]
  const Tensor dp = matmul(positives, at);              // [np,1]
  const Tensor dn = matmul(negatives, at);              // [nn,1]
  const Tensor diff = sub(broadcast_to(reshape(dn, {1, nn}), {np, nn}),
                          broadcast_to(dp, {np, nn}));
  return log1p(mul_scalar(sum(exp(diff)), centerness));
}

Tensor cosine_loss(const Tensor& f_i, const Tensor& f_j, bool same) {
  if (f_i.shape() != f_j.shape())
    throw ShapeMismatch("cosine_loss: shape mismatch");
  double ni = 0.0, nj = 0.0;
  for (std::size_t k = 0; k < f_i.size(); ++k) {
    ni += f_i.at(k) * f_i.at(k);
    nj += f_j.at(k) * f_j.at(k);
  }
  if (ni == 0.0 || nj == 0.0) throw ZeroVector("cosine_loss: zero vector");
  const Tensor cosv =
      div(sum(mul(f_i, f_j)),
          mul(sqrt(sum(mul(f_i, f_i))), sqrt(sum(mul(f_j, f_j)))));
  const Tensor delta = add_scalar(cosv, same ? -1.0 : 0.0);
  return mul(delta, delta);
}

Tensor fcoe_loss(const Tensor& key_embeddings, const Tensor& ref_embeddings,
                 const SampledPairs& pairs) {
  if (pairs.anchors.empty())
    throw MissingPairs("fcoe_loss: no usable anchors");
  auto normalize_rows = [](const Tensor& x) {
    const Tensor nrm = sqrt(sum_axis(mul(x, x), 1, /*keepdim=*/true));
    return div(x, broadcast_to(nrm, x.shape()));
  };
  const Tensor key = normalize_rows(key_embeddings);
  const Tensor ref = normalize_rows(ref_embeddings);

  Tensor embed_total = Tensor::scalar(0.0);
  Tensor cos_total = Tensor::scalar(0.0);
  std::size_t cos_count = 0;
  for (const auto& s : pairs.anchors) {
    const Tensor anchor = gather_rows(key, {s.anchor});
    const Tensor pos = gather_rows(ref, s.positives);
    const Tensor negs = gather_rows(ref, s.negatives);
    embed_total = add(embed_total, embed_loss(anchor, pos, negs, s.centerness));
    const Tensor af = reshape(anchor, {anchor.dim(1)});
    for (std::size_t r = 0; r < s.positives.size(); ++r) {
      const Tensor pf = reshape(gather_rows(ref, {s.positives[r]}), {af.dim(0)});
      cos_total = add(cos_total, cosine_loss(af, pf, true));
      ++cos_count;
    }
    for (std::size_t r = 0; r < s.negatives.size(); ++r) {
      const Tensor nf = reshape(gather_rows(ref, {s.negatives[r]}), {af.dim(0)});
      cos_total = add(cos_total, cosine_loss(af, nf, false));
      ++cos_count;
    }
  }
  const double inv_anchors = 1.0 / static_cast<double>(pairs.anchors.size());
  const double inv_pairs = 1.0 / static_cast<double>(std::max<std::size_t>(1, cos_count));
  return add(mul_scalar(embed_total, inv_anchors), mul_scalar(cos_total, inv_pairs));
}

double fcoe_loss_value(const DenseEmbeddingMap& key, const DenseEmbeddingMap& ref,
                       std::size_t negatives_per_anchor, std::mt19937_64& rng) {
  NoTapeScope quiet;
  const SampledPairs pairs = sample_pairs(key, ref, negatives_per_anchor, rng);
  return fcoe_loss(key.embeddings, ref.embeddings, pairs).value();
}

}  // namespace s3mot
