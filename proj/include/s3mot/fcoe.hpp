#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "s3mot/tensor.hpp"

namespace s3mot {

// Dense per-cell embedding grid with center-ness weights and instance labels
// (-1 marks background cells).
struct DenseEmbeddingMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t embed_dim = 0;
  Tensor embeddings;               // [height*width, embed_dim]
  std::vector<double> centerness;  // in [0,1]
  std::vector<int> labels;

  std::size_t cells() const { return height * width; }
};

// Synthetic stand-in for the detector's dense feature map: rectangular
// object blobs with shared per-object anchor directions on the unit sphere.
struct EmbeddingMapSpec {
  std::size_t height = 8;
  std::size_t width = 8;
  std::size_t embed_dim = 16;
  std::size_t objects = 2;
  double separation = 0.9;  // 1 = noiseless anchors
  std::uint64_t seed = 1;
};

// Key/reference pair sharing anchors; blobs shift slightly between frames.
std::pair<DenseEmbeddingMap, DenseEmbeddingMap> synth_embedding_maps(
    const EmbeddingMapSpec& spec);

struct PairSample {
  std::size_t anchor = 0;  // key cell
  std::vector<std::size_t> positives;  // ref cells, same instance
  std::vector<std::size_t> negatives;  // ref cells, other instance/background
  double centerness = 0.0;
};

struct SampledPairs {
  std::vector<PairSample> anchors;
  std::size_t skipped_no_positive = 0;
};

// One sample per labeled key cell; anchors whose id is absent from the
// reference map are skipped and counted.
SampledPairs sample_pairs(const DenseEmbeddingMap& key,
                          const DenseEmbeddingMap& ref,
                          std::size_t negatives_per_anchor,
                          std::mt19937_64& rng);

// log(1 + c * sum_{p,n} exp(f.n - f.p)) over the full positive x negative
// product set. Inputs are single-anchor rows: anchor [1,e], positives [np,e],
// negatives [nn,e]; MissingPairs unless both sets are non-empty.
Tensor embed_loss(const Tensor& anchor, const Tensor& positives,
                  const Tensor& negatives, double centerness);

// (cos(f_i, f_j) - [same])^2 with the denominator read as the product of the
// two norms; ZeroVector on a zero input.
Tensor cosine_loss(const Tensor& f_i, const Tensor& f_j, bool same);

// Mean embed_loss over anchors plus mean cosine_loss over the sampled
// (anchor, positive) and (anchor, negative) pairs. Embeddings are row-wise
// L2-normalized in-graph before any dot product.
Tensor fcoe_loss(const Tensor& key_embeddings, const Tensor& ref_embeddings,
                 const SampledPairs& pairs);

// Convenience wrapper: samples pairs and evaluates fcoe_loss tape-free.
double fcoe_loss_value(const DenseEmbeddingMap& key, const DenseEmbeddingMap& ref,
                       std::size_t negatives_per_anchor, std::mt19937_64& rng);

struct ZeroVector : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace s3mot
