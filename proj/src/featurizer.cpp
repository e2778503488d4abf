#include "htgnn/featurizer.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "htgnn/errors.hpp"
#include "htgnn/ops.hpp"

namespace htgnn {

double scott_bin_width(const std::vector<double>& values) {
  const size_t n = values.size();
  if (n < 2) throw ContractError("scott_bin_width needs at least 2 values");
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  if (*lo == *hi) return 0.0;  // exact zero variance regardless of fp accumulation
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (sd == 0.0) return 0.0;
  return 3.5 * sd / std::cbrt(static_cast<double>(n));
}

std::vector<double> fit_bins(const std::vector<double>& values) {
  constexpr int kMaxBuckets = 256;
  const double d = scott_bin_width(values);
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it, hi = *hi_it;
  if (d == 0.0 || hi <= lo) return {lo, lo + 1.0};
  int buckets = static_cast<int>(std::ceil((hi - lo) / d));
  buckets = std::max(buckets, 1);
  double width = d;
  if (buckets > kMaxBuckets) {
    buckets = kMaxBuckets;
    width = (hi - lo) / kMaxBuckets;
  }
  std::vector<double> edges;
  edges.reserve(buckets + 1);
  for (int i = 0; i < buckets; ++i) edges.push_back(lo + width * i);
  edges.push_back(hi);
  // rounding can leave the second-to-last edge at or past max
  if (edges.size() >= 2 && edges[edges.size() - 2] >= hi) edges.erase(edges.end() - 2);
  return edges;
}

int bucket_of(const std::vector<double>& edges, double v) {
  const int buckets = static_cast<int>(edges.size()) - 1;
  if (v < edges.front()) return 0;
  if (v >= edges.back()) return buckets - 1;
  const auto it = std::upper_bound(edges.begin(), edges.end(), v);
  const int idx = static_cast<int>(it - edges.begin()) - 1;
  return std::clamp(idx, 0, buckets - 1);
}

int CategoricalFeature::index_of(long raw) const {
  const auto it = std::lower_bound(known_values.begin(), known_values.end(), raw);
  if (it == known_values.end() || *it != raw) return 0;  // UNK
  return static_cast<int>(it - known_values.begin()) + 1;
}

FeatureSchema fit_schema(const std::vector<UserRecord>& train, int embed_dim) {
  if (train.empty()) throw DataError("fit_schema on an empty training split");
  FeatureSchema schema;
  schema.embed_dim = embed_dim;
  const UserRecord& first = train.front();

  for (const auto& [name, code0] : first.cat) {
    (void)code0;
    std::set<long> values;
    for (const UserRecord& r : train) {
      auto it = r.cat.find(name);
      if (it == r.cat.end()) throw DataError("missing categorical feature: " + name);
      values.insert(it->second);
    }
    CategoricalFeature f;
    f.name = name;
    f.known_values.assign(values.begin(), values.end());
    schema.cats.push_back(std::move(f));
  }

  for (const auto& [name, v0] : first.stat) {
    (void)v0;
    std::vector<double> values;
    values.reserve(train.size());
    for (const UserRecord& r : train) {
      auto it = r.stat.find(name);
      if (it == r.stat.end()) throw DataError("missing statistical feature: " + name);
      values.push_back(it->second);
    }
    StatisticalFeature f;
    f.name = name;
    f.edges = fit_bins(values);
    schema.stats.push_back(std::move(f));
  }

  for (const auto& [name, s0] : first.seq) {
    (void)s0;
    std::vector<double> values;
    for (const UserRecord& r : train) {
      auto it = r.seq.find(name);
      if (it == r.seq.end()) throw DataError("missing sequence type: " + name);
      for (double v : it->second.values) values.push_back(v);
    }
    SequenceFeature f;
    f.name = name;
    if (values.size() < 2) values = {0.0, 1.0};
    f.edges = fit_bins(values);
    schema.seqs.push_back(std::move(f));
  }
  return schema;
}

void create_feature_tables(const FeatureSchema& schema, ParamStore& params, Rng& rng) {
  for (const CategoricalFeature& f : schema.cats)
    params.create("feat.cat." + f.name + ".table", {f.cardinality(), schema.embed_dim},
                  rng, schema.embed_dim);
  for (const StatisticalFeature& f : schema.stats)
    params.create("feat.stat." + f.name + ".table", {f.bucket_count(), schema.embed_dim},
                  rng, schema.embed_dim);
}

Tensor encode_static_batch(const std::vector<const UserRecord*>& records,
                           const FeatureSchema& schema, ParamStore& params) {
  const int b = static_cast<int>(records.size());
  std::vector<Tensor> parts;
  parts.reserve(schema.cats.size() + schema.stats.size());
  std::vector<int> ids(b);
  for (const CategoricalFeature& f : schema.cats) {
    for (int i = 0; i < b; ++i) {
      auto it = records[i]->cat.find(f.name);
      if (it == records[i]->cat.end())
        throw DataError("record " + std::to_string(records[i]->user_id) +
                        " missing categorical feature: " + f.name);
      ids[i] = f.index_of(it->second);
    }
    parts.push_back(embedding_lookup(params.get("feat.cat." + f.name + ".table"), ids));
  }
  for (const StatisticalFeature& f : schema.stats) {
    for (int i = 0; i < b; ++i) {
      auto it = records[i]->stat.find(f.name);
      if (it == records[i]->stat.end())
        throw DataError("record " + std::to_string(records[i]->user_id) +
                        " missing statistical feature: " + f.name);
      ids[i] = bucket_of(f.edges, it->second);
    }
    parts.push_back(embedding_lookup(params.get("feat.stat." + f.name + ".table"), ids));
  }
  return concat_cols(parts);
}

StaticRepresentation encode_user(const UserRecord& record, const FeatureSchema& schema,
                                 ParamStore& params) {
  std::vector<const UserRecord*> one = {&record};
  Tensor u_sc = encode_static_batch(one, schema, params);
  const int dc = schema.embed_dim * static_cast<int>(schema.cats.size());
  StaticRepresentation rep;
  rep.u_sc = u_sc;
  rep.u_c = slice_cols(u_sc, 0, dc);
  rep.u_s = slice_cols(u_sc, dc, u_sc.cols());
  return rep;
}

namespace {

std::string two_digit(size_t i) {
  std::string s = std::to_string(i);
  return s.size() < 2 ? "0" + s : s;
}

}  // namespace

void schema_to_entries(const FeatureSchema& schema, std::vector<CheckpointEntry>& out) {
  out.push_back({"schema.meta",
                 {4},
                 {static_cast<double>(schema.cats.size()),
                  static_cast<double>(schema.stats.size()),
                  static_cast<double>(schema.seqs.size()),
                  static_cast<double>(schema.embed_dim)}});
  for (size_t i = 0; i < schema.cats.size(); ++i) {
    const auto& f = schema.cats[i];
    if (f.known_values.empty())
      throw ContractError("categorical feature " + f.name + " has no known values");
    std::vector<double> vals(f.known_values.begin(), f.known_values.end());
    out.push_back({"schema.cat" + two_digit(i) + "." + f.name,
                   {static_cast<int>(vals.size())},
                   std::move(vals)});
  }
  for (size_t i = 0; i < schema.stats.size(); ++i) {
    const auto& f = schema.stats[i];
    out.push_back({"schema.stat" + two_digit(i) + "." + f.name,
                   {static_cast<int>(f.edges.size())},
                   f.edges});
  }
  for (size_t i = 0; i < schema.seqs.size(); ++i) {
    const auto& f = schema.seqs[i];
    out.push_back({"schema.seq" + two_digit(i) + "." + f.name,
                   {static_cast<int>(f.edges.size())},
                   f.edges});
  }
}

FeatureSchema schema_from_checkpoint(const Checkpoint& ckpt) {
  const CheckpointEntry* meta = ckpt.find("schema.meta");
  if (!meta || meta->values.size() != 4)
    throw DataError("checkpoint has no usable schema.meta entry");
  FeatureSchema schema;
  const auto n_cat = static_cast<size_t>(meta->values[0]);
  const auto n_stat = static_cast<size_t>(meta->values[1]);
  const auto n_seq = static_cast<size_t>(meta->values[2]);
  schema.embed_dim = static_cast<int>(meta->values[3]);

  auto find_prefixed = [&](const std::string& prefix) -> const CheckpointEntry& {
    for (const CheckpointEntry& e : ckpt.entries)
      if (e.name.rfind(prefix, 0) == 0) return e;
    throw DataError("checkpoint schema entry missing: " + prefix + "*");
  };

  for (size_t i = 0; i < n_cat; ++i) {
    const std::string prefix = "schema.cat" + two_digit(i) + ".";
    const CheckpointEntry& e = find_prefixed(prefix);
    CategoricalFeature f;
    f.name = e.name.substr(prefix.size());
    for (double v : e.values) f.known_values.push_back(static_cast<long>(v));
    std::sort(f.known_values.begin(), f.known_values.end());
    schema.cats.push_back(std::move(f));
  }
  for (size_t i = 0; i < n_stat; ++i) {
    const std::string prefix = "schema.stat" + two_digit(i) + ".";
    const CheckpointEntry& e = find_prefixed(prefix);
    schema.stats.push_back({e.name.substr(prefix.size()), e.values});
  }
  for (size_t i = 0; i < n_seq; ++i) {
    const std::string prefix = "schema.seq" + two_digit(i) + ".";
    const CheckpointEntry& e = find_prefixed(prefix);
    schema.seqs.push_back({e.name.substr(prefix.size()), e.values});
  }
  return schema;
}

}  // namespace htgnn
