// Copyright 2026 The datareg Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "datareg/exec.hpp"
#include "datareg/rng.hpp"
#include "datareg/tensor.hpp"

namespace datareg {

enum class Activation { identity, tanh, relu };
enum class LossKind { squared, softmax_xent };
enum class LayerKind { dense, lora, embedding };

std::string to_string(Activation a);
std::string to_string(LossKind l);
std::string to_string(LayerKind k);
Activation parse_activation(const std::string& s);
LossKind parse_loss(const std::string& s);
LayerKind parse_layer_kind(const std::string& s);

// For embedding layers w_in is the vocabulary size and w_out the embedding
// width; the weight table is stored as w_in x w_out (one row per token).
struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  std::size_t w_in = 0;
  std::size_t w_out = 0;
  std::size_t rank = 0;
};

struct ModelSpec {
  std::vector<LayerSpec> layers;
  Activation activation = Activation::tanh;
  LossKind loss = LossKind::squared;
  std::size_t tokens = 1;

  // Throws ConfigError describing the first violated constraint.
  void validate() const;
  std::size_t num_layers() const noexcept { return layers.size(); }
  bool token_input() const noexcept;
  std::size_t input_width() const;
  std::size_t output_width() const;
  // Trainable scalars in layer l (W for dense/embedding, A and B for LoRA).
  std::size_t trainable_size(std::size_t l) const;
  std::size_t param_count() const;
};

// Parameter tensors of one layer. LoRA keeps W frozen and trains A (r x w_in)
// and B (w_out x r).
struct LayerParams {
  Tensor w;
  Tensor a;
  Tensor b;
};

// A flat update in layer-local coordinates: trainable blocks concatenated in
// order (W; or A then B), each row-major.
struct Update {
  std::vector<std::vector<double>> layers;

  static Update zeros(const ModelSpec& spec);
  double squared_norm() const;
};

struct ModelInit {
  double scale = 1.0;
  // LoRA B starts at zero in the usual recipe; tests use a nonzero value so
  // both adapter factors receive gradient.
  double lora_b_scale = 0.0;
};

class Model {
 public:
  Model(ModelSpec spec, Rng& rng, ModelInit init = {});
  Model(ModelSpec spec, std::vector<LayerParams> params);

  const ModelSpec& spec() const noexcept { return spec_; }
  std::size_t num_layers() const noexcept { return spec_.layers.size(); }
  LayerParams& params(std::size_t l) { return params_.at(l); }
  const LayerParams& params(std::size_t l) const { return params_.at(l); }

  // Trainable blocks of layer l in coordinate order.
  std::vector<Tensor*> blocks(std::size_t l);
  std::vector<const Tensor*> blocks(std::size_t l) const;

  double get(std::size_t l, std::size_t q) const;
  void set(std::size_t l, std::size_t q, double v);
  std::vector<double> flat(std::size_t l) const;

  // theta <- theta - lr * u, rounded to the given precision.
  void apply_update(const Update& u, double lr, Precision precision = Precision::f64);

 private:
  double& coord(std::size_t l, std::size_t q);
  ModelSpec spec_;
  std::vector<LayerParams> params_;
};

bool bit_equal(const Model& a, const Model& b);

// Samples stored column-wise: sample i occupies columns [i*T, (i+1)*T).
struct SampleSet {
  std::size_t count = 0;
  Tensor inputs;   // w_in x count*T, or 1 x count*T token ids for embedding models
  Tensor targets;  // w_out x count*T regression targets, or 1 x count*T class labels

  SampleSet subset(std::span<const std::size_t> samples, std::size_t tokens) const;
  static SampleSet concat(const SampleSet& a, const SampleSet& b);
};

struct Batch {
  std::size_t tokens = 1;
  SampleSet train;
  SampleSet target;

  std::size_t n() const noexcept { return train.count; }
  std::size_t m() const noexcept { return target.count; }
  void validate(const ModelSpec& spec) const;
};

enum class CachePhase { forward, swapped, released };

// Retained tensors of one layer for one sub-batch (training or target).
struct Segment {
  std::size_t count = 0;
  Tensor a;         // input activations, or token ids for an embedding layer
  Tensor e;         // pre-activations; holds dloss/de after the swap
  Tensor lora_mid;  // A a, LoRA layers only
  bool live = false;
};

struct LayerCache {
  std::size_t layer = 0;
  CachePhase phase = CachePhase::forward;
  Segment train;
  Segment target;
};

struct ForwardResult {
  double loss = 0.0;
  std::vector<double> train_losses;
  std::vector<double> target_losses;
  std::vector<LayerCache> caches;
};

// Forward pass on the merged batch. Both sub-batches flow through the same
// layer computations; their caches are stored as separate segments so that
// target-side tensors can be released independently. Allocations are logged
// under phase "forward".
ForwardResult forward(const Model& model, const Batch& batch, ExecContext& ctx);

// Loss only, no caching or ledger traffic.
double evaluate_loss(const Model& model, const SampleSet& samples, std::size_t tokens);

// Manual backward sweep from the top layer down.
class Backward {
 public:
  Backward(const Model& model, const Batch& batch, ForwardResult& fwd, ExecContext& ctx);

  // Next layer expected by step(), or num_layers when finished.
  std::size_t next() const noexcept { return next_; }
  bool done() const noexcept { return next_ == kDone; }

  // Swaps e -> dloss/de for layer l and leaves dloss/da for layer l-1 in
  // the carry buffer. Entry-neutral on the ledger. Throws PhaseError when
  // called out of order or on a cache that is not in the forward phase.
  void step(std::size_t l);

 private:
  static constexpr std::size_t kDone = static_cast<std::size_t>(-1);
  void step_segment(std::size_t l, Segment& seg, Tensor& carry, const Tensor& targets);

  const Model& model_;
  const Batch& batch_;
  ForwardResult& fwd_;
  ExecContext& ctx_;
  std::size_t next_;
  Tensor carry_train_;
  Tensor carry_target_;
};

// Releases every live tensor of a segment and marks it dead.
void release_segment(Segment& seg, ExecContext& ctx);

// Outer-product factors of one trainable block, restricted to a segment.
// For a block of shape rows x cols the gradient over token columns C is
// sum_{c in C} out_c in_c^T, or scatter rows ids_c of in_c when one_hot.
struct FactorBlock {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t offset = 0;  // start of the block in layer-local coordinates
  const Tensor* out = nullptr;
  const Tensor* in = nullptr;
  bool one_hot = false;
};

// Holds the factor blocks of a swapped layer segment. LoRA needs B^T dloss/de,
// which is materialized here and tracked on the ledger until release().
class LayerFactors {
 public:
  LayerFactors(const Model& model, std::size_t layer, const Segment& seg, ExecContext* ctx,
               const std::string& consumer);
  LayerFactors(const LayerFactors&) = delete;
  LayerFactors& operator=(const LayerFactors&) = delete;
  ~LayerFactors();

  const std::vector<FactorBlock>& blocks() const noexcept { return blocks_; }
  std::size_t tokens_total() const noexcept { return tokens_total_; }
  void release();

 private:
  std::vector<FactorBlock> blocks_;
  Tensor lora_back_;
  ExecContext* ctx_ = nullptr;
  bool tracked_ = false;
  std::size_t tokens_total_ = 0;
};

// acc[q] += gradient entry q summed over `columns` for q in [q_begin, q_end)
// of the layer-local coordinate space. The per-entry summation order is the
// column order, so any restriction reproduces the unrestricted values.
void accumulate_layer_grad(std::vector<double>& acc, const LayerFactors& factors,
                           std::span<const std::size_t> columns, std::size_t q_begin,
                           std::size_t q_end, CostMeter* meter = nullptr);

// Per-sample gradient of layer l (flat, layer-local coordinates) for sample i
// of the segment. Requires the swapped phase.
std::vector<double> per_sample_grad(const Model& model, const LayerCache& cache,
                                    const Segment& seg, std::size_t i);

// (1/k) * sum_{i in S} g_i via one fused pass over the selected columns.
// Throws SelectionError when S is empty.
std::vector<double> batch_grad(const Model& model, const LayerCache& cache, const Segment& seg,
                               std::span<const std::size_t> samples, double divisor);

// Reshape a flat layer gradient into its blocks.
std::vector<Tensor> unflatten(const ModelSpec& spec, std::size_t l, std::span<const double> flat);

}  // namespace datareg
