#pragma once

#include <algorithm>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gist/model.hpp"
#include "gist/random.hpp"
#include "gist/tensor.hpp"

namespace gist {

class PartitionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Per-dimension disjoint feature blocks {D^(i)_l}. Dimension 0 is the input,
// dimension L the output. Unpartitioned dimensions hold one full block that
// every sub-GCN shares.
struct FeaturePartition {
  std::size_t m = 1;
  std::vector<std::size_t> dims;
  std::vector<std::vector<IndexSet>> blocks;  // blocks[dim][i], sorted ascending
  std::vector<bool> partitioned;

  const IndexSet& block(std::size_t dim, std::size_t i) const {
    if (i >= m) throw PartitionError("sub-GCN id " + std::to_string(i) + " out of range (m=" + std::to_string(m) + ")");
    return partitioned[dim] ? blocks[dim][i] : blocks[dim].front();
  }

  std::vector<std::size_t> sub_dims(std::size_t i) const {
    std::vector<std::size_t> out;
    for (std::size_t d = 0; d < dims.size(); ++d) out.push_back(block(d, i).size());
    return out;
  }
};

inline IndexSet iota_set(std::size_t n) {
  IndexSet s(n);
  std::iota(s.begin(), s.end(), std::size_t{0});
  return s;
}

// Size of block i when d features are split into m balanced blocks.
constexpr std::size_t balanced_block_size(std::size_t d, std::size_t m, std::size_t i) {
  return d / m + (i < d % m ? 1 : 0);
}

// Hidden dimensions are always split; the input only when requested; the
// output never. Each split is a shuffled permutation chopped into m
// contiguous balanced chunks.
inline FeaturePartition sample_partition(std::span<const std::size_t> dims, std::size_t m, bool partition_input,
                                         Rng& rng) {
  check_dims(dims);
  if (m == 0) throw PartitionError("m must be at least 1");
  FeaturePartition p;
  p.m = m;
  p.dims.assign(dims.begin(), dims.end());
  const std::size_t last = dims.size() - 1;
  for (std::size_t d = 0; d < dims.size(); ++d) {
    const bool split = d != last && (d != 0 || partition_input);
    p.partitioned.push_back(split);
    if (!split) {
      p.blocks.push_back({iota_set(dims[d])});
      continue;
    }
    if (m > dims[d])
      throw PartitionError("cannot split dimension " + std::to_string(d) + " of size " + std::to_string(dims[d]) +
                           " into " + std::to_string(m) + " blocks");
    auto perm = iota_set(dims[d]);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<IndexSet> parts;
    std::size_t offset = 0;
    for (std::size_t i = 0; i < m; ++i) {
      const auto sz = balanced_block_size(dims[d], m, i);
      IndexSet blk(perm.begin() + static_cast<std::ptrdiff_t>(offset),
                   perm.begin() + static_cast<std::ptrdiff_t>(offset + sz));
      std::sort(blk.begin(), blk.end());
      parts.push_back(std::move(blk));
      offset += sz;
    }
    p.blocks.push_back(std::move(parts));
  }
  for (std::size_t l = 0; m > 1 && l + 1 < dims.size(); ++l)
    if (!p.partitioned[l] && !p.partitioned[l + 1])
      throw PartitionError("layer " + std::to_string(l) + " has no partitioned side; sub-GCNs would collide");
  return p;
}

// Weight rows owned by sub-GCN i in layer l. For sage the concatenated input
// selects the block in both the self half and the neighbour half.
inline IndexSet weight_row_indices(const FeaturePartition& p, Arch arch, std::size_t layer, std::size_t i) {
  const auto& blk = p.block(layer, i);
  if (arch == Arch::gcn) return blk;
  IndexSet rows = blk;
  for (auto r : blk) rows.push_back(r + p.dims[layer]);
  return rows;
}

inline void check_partition_matches(const FeaturePartition& p, const std::vector<std::size_t>& dims) {
  if (p.dims != dims) throw PartitionError("partition dims do not match model dims");
}

// Θ^(i)_l = [Θ_l]_{D^(i)_l × D^(i)_{l+1}}.
template <typename T>
GcnModel<T> extract_sub_model(const GcnModel<T>& model, const FeaturePartition& p, std::size_t i) {
  check_partition_matches(p, model.dims);
  GcnModel<T> sub{model.arch, p.sub_dims(i), {}};
  for (std::size_t l = 0; l < model.num_layers(); ++l)
    sub.weights.push_back(slice(model.weights[l], weight_row_indices(p, model.arch, l, i), p.block(l + 1, i)));
  return sub;
}

// Per-entry write counters, used to check that aggregation is collision-free.
using WriteCounts = std::vector<DenseMatrix<std::uint32_t>>;

// Writes every sub-model back into its diagonal blocks; everything outside
// those blocks keeps its previous value.
template <typename T>
void aggregate(GcnModel<T>& model, const std::vector<GcnModel<T>>& subs, const FeaturePartition& p,
               WriteCounts* counts = nullptr) {
  check_partition_matches(p, model.dims);
  if (subs.size() != p.m)
    throw PartitionError("aggregate: expected " + std::to_string(p.m) + " sub-models, got " + std::to_string(subs.size()));
  if (counts) {
    counts->clear();
    for (const auto& w : model.weights) counts->emplace_back(w.rows(), w.cols());
  }
  for (std::size_t i = 0; i < subs.size(); ++i) {
    if (subs[i].dims != p.sub_dims(i) || subs[i].arch != model.arch)
      throw PartitionError("aggregate: sub-model " + std::to_string(i) + " does not match its partition");
    for (std::size_t l = 0; l < model.num_layers(); ++l) {
      const auto rows = weight_row_indices(p, model.arch, l, i);
      const auto& cols = p.block(l + 1, i);
      scatter(model.weights[l], rows, cols, subs[i].weights[l]);
      if (counts)
        for (auto r : rows)
          for (auto c : cols) ++(*counts)[l](r, c);
    }
  }
}

// mask[l](r, c) = 1 iff (r, c) lies in some diagonal block of layer l.
inline std::vector<DenseMatrix<std::uint8_t>> coverage_mask(const FeaturePartition& p, std::span<const std::size_t> dims,
                                                            Arch arch = Arch::gcn) {
  if (!std::equal(dims.begin(), dims.end(), p.dims.begin(), p.dims.end()))
    throw PartitionError("coverage_mask: dims do not match partition");
  std::vector<DenseMatrix<std::uint8_t>> masks;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    DenseMatrix<std::uint8_t> mask(weight_rows(arch, dims[l]), dims[l + 1]);
    for (std::size_t i = 0; i < p.m; ++i)
      for (auto r : weight_row_indices(p, arch, l, i))
        for (auto c : p.block(l + 1, i)) mask(r, c) = 1;
    masks.push_back(std::move(mask));
  }
  return masks;
}

inline double covered_fraction(const DenseMatrix<std::uint8_t>& mask) {
  if (mask.empty()) return 0.0;
  const auto v = mask.values();
  return static_cast<double>(std::count(v.begin(), v.end(), std::uint8_t{1})) / static_cast<double>(v.size());
}

}  // namespace gist
