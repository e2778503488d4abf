#pragma once

#include <string>
#include <vector>

#include "htgnn/checkpoint.hpp"
#include "htgnn/params.hpp"
#include "htgnn/tensor.hpp"
#include "htgnn/user_record.hpp"

namespace htgnn {

// Scott's rule bin width 3.5*sd/n^(1/3) with the sample standard deviation
// (n-1 divisor). Returns 0 for a zero-variance vector, meaning one bucket.
double scott_bin_width(const std::vector<double>& values);

// Bucket edges spanning [min, max] in steps of the Scott width, capped at 256
// buckets (excess widened uniformly). Edges are strictly increasing; a
// zero-variance input yields a single bucket.
std::vector<double> fit_bins(const std::vector<double>& values);

// Index of v among the fitted edges; out-of-range values clamp into the first
// or last bucket.
int bucket_of(const std::vector<double>& edges, double v);

struct CategoricalFeature {
  std::string name;
  std::vector<long> known_values;  // sorted; embedding index = position + 1, 0 = UNK
  int cardinality() const { return static_cast<int>(known_values.size()) + 1; }
  int index_of(long raw) const;
};

struct StatisticalFeature {
  std::string name;
  std::vector<double> edges;
  int bucket_count() const { return static_cast<int>(edges.size()) - 1; }
};

struct SequenceFeature {
  std::string name;
  std::vector<double> edges;
  int bucket_count() const { return static_cast<int>(edges.size()) - 1; }
};

struct FeatureSchema {
  std::vector<CategoricalFeature> cats;
  std::vector<StatisticalFeature> stats;
  std::vector<SequenceFeature> seqs;
  int embed_dim = 8;

  int static_dim() const {
    return embed_dim * static_cast<int>(cats.size() + stats.size());
  }
};

// Fit categorical vocabularies and statistical/sequence bucket edges from the
// training split only.
FeatureSchema fit_schema(const std::vector<UserRecord>& train, int embed_dim);

struct StaticRepresentation {
  Tensor u_c;
  Tensor u_s;
  Tensor u_sc;
};

// Create the per-feature embedding tables (names feat.cat.* / feat.stat.*).
void create_feature_tables(const FeatureSchema& schema, ParamStore& params, Rng& rng);

// Batched static encoding: one row per record, features concatenated in
// schema order (categorical block then statistical block).
Tensor encode_static_batch(const std::vector<const UserRecord*>& records,
                           const FeatureSchema& schema, ParamStore& params);

StaticRepresentation encode_user(const UserRecord& record, const FeatureSchema& schema,
                                 ParamStore& params);

// Schema persistence inside the checkpoint container.
void schema_to_entries(const FeatureSchema& schema, std::vector<CheckpointEntry>& out);
FeatureSchema schema_from_checkpoint(const Checkpoint& ckpt);

}  // namespace htgnn
