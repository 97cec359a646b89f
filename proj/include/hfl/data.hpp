#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "hfl/common.hpp"

// Tabular ingestion and preprocessing: CSV loading with per-column type
// inference, sparse-column dropping, ordinal categorical encoding with
// train-only statistics, 90/10 splitting, stratified equal-size client
// partitioning, and a seeded synthetic generator for desk-scale runs.
namespace hfl::data {

// ---------------------------------------------------------------------------
// raw tables
// ---------------------------------------------------------------------------

struct Column {
    std::string name;
    bool numeric = true;
    std::vector<double> nums;           // valid where !missing (numeric columns)
    std::vector<std::uint32_t> codes;   // index into dict (categorical columns)
    std::vector<std::string> dict;      // interned categories, first-seen order
    std::vector<std::uint8_t> missing;  // 1 = empty cell

    std::size_t size() const { return missing.size(); }
    std::size_t missing_count() const {
        std::size_t m = 0;
        for (const auto b : missing) m += b;
        return m;
    }
    const std::string& category(std::size_t row) const { return dict[codes[row]]; }
};

struct RawTable {
    std::vector<Column> features;
    std::vector<std::uint8_t> labels;  // binary, validated at ingestion
    std::string label_name;

    std::size_t n_rows() const { return labels.size(); }

    const Column* find(const std::string& name) const {
        for (const auto& c : features)
            if (c.name == name) return &c;
        return nullptr;
    }
};

struct Dataset {
    Matrix features;                         // n x d, float32
    std::vector<std::uint8_t> labels;        // n, values 0/1
    std::vector<std::string> feature_names;  // d

    std::size_t n() const { return labels.size(); }
    std::size_t dim() const { return features.cols; }

    double pos_ratio() const {
        if (labels.empty()) return 0.0;
        std::size_t pos = 0;
        for (const auto y : labels) pos += y;
        return static_cast<double>(pos) / static_cast<double>(labels.size());
    }
};

struct ClientShard {
    std::uint32_t client_id = 0;
    Dataset data;
    double pos_ratio = 0.0;
};

// Largest tolerated gap between a shard's positive ratio and its parent's.
inline constexpr double kStratTolerance = 0.005;

// ---------------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(field));
            field.clear();
        } else if (c != '\r') {
            field += c;
        }
    }
    out.push_back(std::move(field));
    return out;
}

inline std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

inline std::optional<double> parse_real(const std::string& cell) {
    const std::string t = trim(cell);
    if (t.empty()) return std::nullopt;
    const char* begin = t.c_str();
    char* end = nullptr;
    const double v = std::strtod(begin, &end);
    if (end != begin + t.size()) return std::nullopt;
    if (!std::isfinite(v)) return std::nullopt;
    return v;
}

}  // namespace detail

// Loads a header-ed, comma-separated, UTF-8 CSV. A column is numeric when
// every non-empty cell parses as a finite real; otherwise categorical.
// Empty cells are recorded as missing. Two passes so category dictionaries
// and numeric buffers are sized without holding raw cells.
inline RawTable load_csv(const std::string& path, const std::string& label_column) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open CSV file: " + path);

    std::string line;
    if (!std::getline(in, line)) throw DataError(path + ": empty file (missing header row)");
    const std::vector<std::string> header = detail::split_csv_line(line);

    std::size_t label_idx = header.size();
    for (std::size_t i = 0; i < header.size(); ++i) {
        const std::string name = detail::trim(header[i]);
        if (name == label_column) label_idx = i;
        for (std::size_t j = 0; j < i; ++j)
            if (detail::trim(header[j]) == name)
                throw DataError(path + ": duplicate column name '" + name + "'");
    }
    if (label_idx == header.size())
        throw DataError(path + ": label column '" + label_column + "' not found in header");

    // pass 1: raggedness, type inference, label validation
    std::vector<bool> numeric(header.size(), true);
    std::size_t n_rows = 0;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size())
            throw DataError(path + ": ragged row at line " + std::to_string(line_no) + " (" +
                            std::to_string(cells.size()) + " cells, expected " +
                            std::to_string(header.size()) + ")");
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i == label_idx) continue;
            if (numeric[i] && !detail::trim(cells[i]).empty() && !detail::parse_real(cells[i]))
                numeric[i] = false;
        }
        const auto y = detail::parse_real(cells[label_idx]);
        if (!y || (*y != 0.0 && *y != 1.0))
            throw DataError(path + ": label not binary at line " + std::to_string(line_no) +
                            " ('" + detail::trim(cells[label_idx]) + "')");
        ++n_rows;
    }
    if (n_rows == 0) throw DataError(path + ": no data rows");

    RawTable table;
    table.label_name = label_column;
    table.labels.reserve(n_rows);
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (i == label_idx) continue;
        Column col;
        col.name = detail::trim(header[i]);
        col.numeric = numeric[i];
        if (col.numeric)
            col.nums.reserve(n_rows);
        else
            col.codes.reserve(n_rows);
        col.missing.reserve(n_rows);
        table.features.push_back(std::move(col));
    }

    // pass 2: fill columns
    std::vector<std::unordered_map<std::string, std::uint32_t>> interner(table.features.size());
    in.clear();
    in.seekg(0);
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto cells = detail::split_csv_line(line);
        std::size_t f = 0;
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i == label_idx) continue;
            Column& col = table.features[f];
            const std::string cell = detail::trim(cells[i]);
            const bool is_missing = cell.empty();
            col.missing.push_back(is_missing ? 1 : 0);
            if (col.numeric) {
                col.nums.push_back(is_missing ? 0.0 : *detail::parse_real(cell));
            } else if (is_missing) {
                col.codes.push_back(0);
            } else {
                auto [it, inserted] =
                    interner[f].try_emplace(cell, static_cast<std::uint32_t>(col.dict.size()));
                if (inserted) col.dict.push_back(cell);
                col.codes.push_back(it->second);
            }
            ++f;
        }
        table.labels.push_back(static_cast<std::uint8_t>(*detail::parse_real(cells[label_idx])));
    }
    return table;
}

namespace detail {

// Rebuilds a column as categorical, rendering numeric cells through the same
// formatting everywhere so mixed-type merges stay consistent.
inline Column demote_to_categorical(const Column& col) {
    Column out;
    out.name = col.name;
    out.numeric = false;
    std::unordered_map<std::string, std::uint32_t> interner;
    for (std::size_t r = 0; r < col.size(); ++r) {
        out.missing.push_back(col.missing[r]);
        if (col.missing[r]) {
            out.codes.push_back(0);
            continue;
        }
        std::string cell;
        if (col.numeric) {
            std::ostringstream os;
            os << col.nums[r];
            cell = os.str();
        } else {
            cell = col.category(r);
        }
        auto [it, inserted] = interner.try_emplace(cell, static_cast<std::uint32_t>(out.dict.size()));
        if (inserted) out.dict.push_back(cell);
        out.codes.push_back(it->second);
    }
    return out;
}

inline void append_column(Column& dst, const Column& src) {
    if (dst.numeric) {
        dst.missing.insert(dst.missing.end(), src.missing.begin(), src.missing.end());
        dst.nums.insert(dst.nums.end(), src.nums.begin(), src.nums.end());
        return;
    }
    std::unordered_map<std::string, std::uint32_t> interner;
    for (std::uint32_t i = 0; i < dst.dict.size(); ++i) interner.emplace(dst.dict[i], i);
    for (std::size_t r = 0; r < src.size(); ++r) {
        dst.missing.push_back(src.missing[r]);
        if (src.missing[r]) {
            dst.codes.push_back(0);
            continue;
        }
        const std::string& cell = src.category(r);
        auto [it, inserted] = interner.try_emplace(cell, static_cast<std::uint32_t>(dst.dict.size()));
        if (inserted) dst.dict.push_back(cell);
        dst.codes.push_back(it->second);
    }
}

}  // namespace detail

// Concatenates several CSVs with identical header schemas (the UNSW-NB15
// distribution ships as four files). A column numeric in one file but
// categorical in another demotes to categorical.
inline RawTable load_csv_many(const std::vector<std::string>& paths,
                              const std::string& label_column) {
    if (paths.empty()) throw ConfigError("no CSV paths given");
    RawTable merged = load_csv(paths[0], label_column);
    for (std::size_t p = 1; p < paths.size(); ++p) {
        RawTable next = load_csv(paths[p], label_column);
        if (next.features.size() != merged.features.size())
            throw DataError(paths[p] + ": column count differs from " + paths[0]);
        for (std::size_t c = 0; c < merged.features.size(); ++c) {
            Column& dst = merged.features[c];
            Column src = std::move(next.features[c]);
            if (dst.name != src.name)
                throw DataError(paths[p] + ": column '" + src.name + "' does not match '" +
                                dst.name + "' in " + paths[0]);
            if (dst.numeric && !src.numeric) dst = detail::demote_to_categorical(dst);
            if (!dst.numeric && src.numeric) src = detail::demote_to_categorical(src);
            detail::append_column(dst, src);
        }
        merged.labels.insert(merged.labels.end(), next.labels.begin(), next.labels.end());
    }
    return merged;
}

// ---------------------------------------------------------------------------
// preprocessing
// ---------------------------------------------------------------------------

// Removes every feature column whose missing fraction strictly exceeds the
// threshold. The boundary is deliberately strict: exactly-at-threshold stays.
inline RawTable drop_sparse_columns(const RawTable& table, double threshold = 0.5,
                                    std::vector<std::string>* dropped = nullptr) {
    if (!(threshold > 0.0 && threshold <= 1.0))
        throw ConfigError("drop_sparse_columns: threshold must be in (0, 1]");
    RawTable out;
    out.label_name = table.label_name;
    out.labels = table.labels;
    const double n = static_cast<double>(table.n_rows());
    for (const auto& col : table.features) {
        const double frac = static_cast<double>(col.missing_count()) / n;
        if (frac > threshold) {
            if (dropped) dropped->push_back(col.name);
        } else {
            out.features.push_back(col);
        }
    }
    if (out.features.empty()) throw DataError("drop_sparse_columns: no features remain");
    return out;
}

struct NumericStats {
    double mean = 0.0;
    double stddev = 0.0;
    double median = 0.0;
    bool constant = false;
};

struct ColumnEncoding {
    std::string name;
    bool numeric = true;
    NumericStats stats;                   // numeric columns
    std::vector<std::string> categories;  // categorical columns, sorted; unseen
                                          // and missing map to categories.size()
};

struct Encoder {
    std::vector<ColumnEncoding> columns;

    std::size_t dim() const { return columns.size(); }
};

// Fits the encoder on training rows only. Categorical maps use lexicographic
// category order; numeric statistics are mean, population stddev and median
// of the non-missing training cells.
inline Encoder fit_encoder(const RawTable& train) {
    Encoder enc;
    for (const auto& col : train.features) {
        ColumnEncoding ce;
        ce.name = col.name;
        ce.numeric = col.numeric;
        if (col.numeric) {
            std::vector<double> vals;
            vals.reserve(col.size());
            for (std::size_t r = 0; r < col.size(); ++r)
                if (!col.missing[r]) vals.push_back(col.nums[r]);
            if (vals.empty()) {
                ce.stats.constant = true;
            } else {
                double sum = 0.0;
                for (const double v : vals) sum += v;
                const double mean = sum / static_cast<double>(vals.size());
                double ss = 0.0;
                for (const double v : vals) ss += (v - mean) * (v - mean);
                ce.stats.mean = mean;
                ce.stats.stddev = std::sqrt(ss / static_cast<double>(vals.size()));
                ce.stats.constant = ce.stats.stddev == 0.0;
                std::sort(vals.begin(), vals.end());
                const std::size_t m = vals.size();
                ce.stats.median =
                    (m % 2 == 1) ? vals[m / 2] : 0.5 * (vals[m / 2 - 1] + vals[m / 2]);
            }
        } else {
            // the dict holds exactly the categories observed in non-missing cells
            ce.categories = col.dict;
            std::sort(ce.categories.begin(), ce.categories.end());
            ce.categories.erase(std::unique(ce.categories.begin(), ce.categories.end()),
                                ce.categories.end());
        }
        enc.columns.push_back(std::move(ce));
    }
    return enc;
}

// Categoricals become their ordinal index (unseen or missing -> reserved
// index = category count); numerics are median-imputed then z-scored with
// the training statistics, constant columns mapping to 0.
inline Dataset apply_encoder(const RawTable& table, const Encoder& enc) {
    if (table.features.size() != enc.columns.size())
        throw DataError("apply_encoder: table has " + std::to_string(table.features.size()) +
                        " feature columns, encoder expects " + std::to_string(enc.columns.size()));
    for (std::size_t c = 0; c < enc.columns.size(); ++c) {
        if (table.features[c].name != enc.columns[c].name)
            throw DataError("apply_encoder: column '" + table.features[c].name +
                            "' does not match encoder column '" + enc.columns[c].name + "'");
        if (table.features[c].numeric != enc.columns[c].numeric)
            throw DataError("apply_encoder: column '" + table.features[c].name +
                            "' type differs from encoder");
    }

    const std::size_t n = table.n_rows();
    const std::size_t d = enc.columns.size();
    Dataset ds;
    ds.features = Matrix(n, d);
    ds.labels = table.labels;
    for (std::size_t c = 0; c < d; ++c) {
        const Column& col = table.features[c];
        const ColumnEncoding& ce = enc.columns[c];
        ds.feature_names.push_back(ce.name);
        if (ce.numeric) {
            for (std::size_t r = 0; r < n; ++r) {
                const double x = col.missing[r] ? ce.stats.median : col.nums[r];
                const double z = ce.stats.constant ? 0.0 : (x - ce.stats.mean) / ce.stats.stddev;
                ds.features.at(r, c) = static_cast<float>(z);
            }
        } else {
            const auto unseen = static_cast<float>(ce.categories.size());
            // translate this table's dict codes once, then map rows
            std::vector<float> code_val(col.dict.size(), unseen);
            for (std::size_t k = 0; k < col.dict.size(); ++k) {
                const auto it =
                    std::lower_bound(ce.categories.begin(), ce.categories.end(), col.dict[k]);
                if (it != ce.categories.end() && *it == col.dict[k])
                    code_val[k] = static_cast<float>(it - ce.categories.begin());
            }
            for (std::size_t r = 0; r < n; ++r)
                ds.features.at(r, c) = col.missing[r] ? unseen : code_val[col.codes[r]];
        }
    }
    if (!ds.features.all_finite()) throw DataError("apply_encoder: non-finite encoded value");
    return ds;
}

// ---------------------------------------------------------------------------
// splitting and partitioning
// ---------------------------------------------------------------------------

namespace detail {

inline RawTable subset_rows(const RawTable& table, const std::vector<std::size_t>& rows) {
    RawTable out;
    out.label_name = table.label_name;
    out.labels.reserve(rows.size());
    for (const auto r : rows) out.labels.push_back(table.labels[r]);
    for (const auto& col : table.features) {
        Column c;
        c.name = col.name;
        c.numeric = col.numeric;
        c.dict = col.dict;
        c.missing.reserve(rows.size());
        for (const auto r : rows) {
            c.missing.push_back(col.missing[r]);
            if (col.numeric)
                c.nums.push_back(col.nums[r]);
            else
                c.codes.push_back(col.codes[r]);
        }
        out.features.push_back(std::move(c));
    }
    return out;
}

inline Dataset subset_rows(const Dataset& ds, const std::vector<std::size_t>& rows) {
    Dataset out;
    out.feature_names = ds.feature_names;
    out.features = Matrix(rows.size(), ds.dim());
    out.labels.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::memcpy(out.features.row(i), ds.features.row(rows[i]), ds.dim() * sizeof(float));
        out.labels.push_back(ds.labels[rows[i]]);
    }
    return out;
}

}  // namespace detail

// Seeded uniform shuffle; the train side takes the first floor(n * fraction)
// shuffled rows. Membership is random, row order within each side keeps the
// original ordering.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(
    std::size_t n, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0))
        throw ConfigError("train_test_split: fraction must be in (0, 1)");
    if (n < 2) throw DataError("train_test_split: need at least 2 rows");
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    Rng rng(seed);
    rng.shuffle(idx);
    const auto train_size =
        static_cast<std::size_t>(std::floor(static_cast<double>(n) * fraction));
    std::vector<std::size_t> train(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(train_size));
    std::vector<std::size_t> test(idx.begin() + static_cast<std::ptrdiff_t>(train_size), idx.end());
    std::sort(train.begin(), train.end());
    std::sort(test.begin(), test.end());
    return {std::move(train), std::move(test)};
}

inline std::pair<RawTable, RawTable> train_test_split(const RawTable& table,
                                                      double fraction, std::uint64_t seed) {
    const auto [tr, te] = split_indices(table.n_rows(), fraction, seed);
    return {detail::subset_rows(table, tr), detail::subset_rows(table, te)};
}

inline std::pair<Dataset, Dataset> train_test_split(const Dataset& ds, double fraction,
                                                    std::uint64_t seed) {
    const auto [tr, te] = split_indices(ds.n(), fraction, seed);
    return {detail::subset_rows(ds, tr), detail::subset_rows(ds, te)};
}

// Stratified equal-size shards: per class, seeded shuffle then deal
// floor(count / n_clients) rows to every shard. Remainder rows are dropped so
// all shards end up exactly equal.
inline std::vector<ClientShard> partition_clients(const Dataset& train,
                                                  std::uint32_t n_clients,
                                                  std::uint64_t seed) {
    if (n_clients < 1) throw ConfigError("partition_clients: n_clients must be >= 1");
    std::vector<std::size_t> by_class[2];
    for (std::size_t r = 0; r < train.n(); ++r) by_class[train.labels[r] ? 1 : 0].push_back(r);
    for (int c = 0; c < 2; ++c)
        if (by_class[c].size() < n_clients)
            throw DataError("partition_clients: class " + std::to_string(c) + " has only " +
                            std::to_string(by_class[c].size()) + " rows, need >= " +
                            std::to_string(n_clients));

    const double parent_ratio = train.pos_ratio();
    std::vector<std::vector<std::size_t>> shard_rows(n_clients);
    for (int c = 0; c < 2; ++c) {
        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(c)));
        rng.shuffle(by_class[c]);
        const std::size_t per = by_class[c].size() / n_clients;
        for (std::uint32_t s = 0; s < n_clients; ++s)
            for (std::size_t k = 0; k < per; ++k)
                shard_rows[s].push_back(by_class[c][static_cast<std::size_t>(s) * per + k]);
    }

    std::vector<ClientShard> shards;
    shards.reserve(n_clients);
    for (std::uint32_t s = 0; s < n_clients; ++s) {
        std::sort(shard_rows[s].begin(), shard_rows[s].end());
        ClientShard shard;
        shard.client_id = s;
        shard.data = detail::subset_rows(train, shard_rows[s]);
        shard.pos_ratio = shard.data.pos_ratio();
        if (std::abs(shard.pos_ratio - parent_ratio) > kStratTolerance)
            throw DataError("partition_clients: shard " + std::to_string(s) +
                            " positive ratio deviates more than 0.5pp from parent");
        shards.push_back(std::move(shard));
    }
    return shards;
}

// ---------------------------------------------------------------------------
// synthetic data
// ---------------------------------------------------------------------------

struct SynthSpec {
    std::size_t n = 20000;
    std::size_t d = 16;
    std::size_t n_clusters = 8;          // normal-traffic clusters
    std::size_t n_anomaly_clusters = 0;  // 0 -> max(1, n_clusters / 2)
    double anomaly_fraction = 0.125;
    double label_noise = 0.0;
    std::uint32_t n_clients = 0;  // > 1 enables per-client cluster affinity
    double cluster_skew = 0.0;    // probability mass pinned to a cluster's home client
    std::uint64_t seed = 0;
};

// Gaussian clusters at seeded random centers; anomaly rows come from their
// own clusters. With n_clients > 1 and cluster_skew > 0 each cluster gets a
// home client and client_affinity records a skewed assignment per row, which
// is what makes the non-IID experiments non-IID.
inline Dataset synth_dataset(const SynthSpec& spec,
                             std::vector<std::uint32_t>* client_affinity = nullptr) {
    if (spec.d < 2) throw ConfigError("synth_dataset: d must be >= 2");
    if (!(spec.anomaly_fraction > 0.0 && spec.anomaly_fraction < 1.0))
        throw ConfigError("synth_dataset: anomaly_fraction must be in (0, 1)");
    if (spec.n_clusters < 1) throw ConfigError("synth_dataset: n_clusters must be >= 1");
    if (spec.label_noise < 0.0 || spec.label_noise >= 1.0)
        throw ConfigError("synth_dataset: label_noise must be in [0, 1)");
    if (spec.n < 4) throw ConfigError("synth_dataset: n must be >= 4");
    if (spec.cluster_skew < 0.0 || spec.cluster_skew > 1.0)
        throw ConfigError("synth_dataset: cluster_skew must be in [0, 1]");

    const std::size_t n_anom_clusters =
        spec.n_anomaly_clusters ? spec.n_anomaly_clusters : std::max<std::size_t>(1, spec.n_clusters / 2);
    const std::size_t total_clusters = spec.n_clusters + n_anom_clusters;
    const bool skewed = spec.n_clients > 1 && spec.cluster_skew > 0.0;

    Rng rng(spec.seed);

    constexpr double kCenterSpread = 2.0;
    constexpr double kClusterStd = 0.8;
    std::vector<std::vector<double>> centers(total_clusters);
    for (auto& c : centers) {
        c.resize(spec.d);
        for (auto& v : c) v = kCenterSpread * rng.normal();
    }

    const auto n_anom = static_cast<std::size_t>(
        std::llround(static_cast<double>(spec.n) * spec.anomaly_fraction));
    const std::size_t n_norm = spec.n - n_anom;

    std::vector<std::size_t> cluster_of;  // per row
    cluster_of.reserve(spec.n);
    for (std::size_t i = 0; i < n_norm; ++i) cluster_of.push_back(i % spec.n_clusters);
    for (std::size_t i = 0; i < n_anom; ++i)
        cluster_of.push_back(spec.n_clusters + (i % n_anom_clusters));

    Dataset ds;
    ds.features = Matrix(spec.n, spec.d);
    ds.labels.resize(spec.n);
    for (std::size_t j = 0; j < spec.d; ++j) ds.feature_names.push_back("f" + std::to_string(j));
    std::vector<std::uint32_t> affinity(skewed ? spec.n : 0);

    for (std::size_t r = 0; r < spec.n; ++r) {
        const std::size_t cl = cluster_of[r];
        for (std::size_t j = 0; j < spec.d; ++j)
            ds.features.at(r, j) = static_cast<float>(centers[cl][j] + kClusterStd * rng.normal());
        bool anomalous = cl >= spec.n_clusters;
        if (spec.label_noise > 0.0 && rng.uniform() < spec.label_noise) anomalous = !anomalous;
        ds.labels[r] = anomalous ? 1 : 0;
        if (skewed) {
            const auto home = static_cast<std::uint32_t>(cl % spec.n_clients);
            affinity[r] = rng.uniform() < spec.cluster_skew
                              ? home
                              : static_cast<std::uint32_t>(rng.below(spec.n_clients));
        }
    }

    // seeded row shuffle so splits see a class mix
    std::vector<std::size_t> order(spec.n);
    for (std::size_t i = 0; i < spec.n; ++i) order[i] = i;
    rng.shuffle(order);
    Dataset shuffled;
    shuffled.feature_names = ds.feature_names;
    shuffled.features = Matrix(spec.n, spec.d);
    shuffled.labels.resize(spec.n);
    if (client_affinity) client_affinity->assign(skewed ? spec.n : 0, 0);
    for (std::size_t i = 0; i < spec.n; ++i) {
        std::memcpy(shuffled.features.row(i), ds.features.row(order[i]), spec.d * sizeof(float));
        shuffled.labels[i] = ds.labels[order[i]];
        if (client_affinity && skewed) (*client_affinity)[i] = affinity[order[i]];
    }
    return shuffled;
}

// Deals rows to the client named by their affinity. Used instead of
// partition_clients when the generator produced a skewed assignment.
inline std::vector<ClientShard> shard_by_affinity(const Dataset& train,
                                                  std::span<const std::uint32_t> affinity,
                                                  std::uint32_t n_clients) {
    if (affinity.size() != train.n())
        throw ShapeError("shard_by_affinity: affinity length does not match dataset");
    std::vector<std::vector<std::size_t>> rows(n_clients);
    for (std::size_t r = 0; r < train.n(); ++r) {
        if (affinity[r] >= n_clients) throw DataError("shard_by_affinity: affinity out of range");
        rows[affinity[r]].push_back(r);
    }
    std::vector<ClientShard> shards;
    for (std::uint32_t s = 0; s < n_clients; ++s) {
        if (rows[s].empty())
            throw DataError("shard_by_affinity: client " + std::to_string(s) + " got no rows");
        ClientShard shard;
        shard.client_id = s;
        shard.data = detail::subset_rows(train, rows[s]);
        shard.pos_ratio = shard.data.pos_ratio();
        shards.push_back(std::move(shard));
    }
    return shards;
}

// ---------------------------------------------------------------------------
// dataset persistence: "HFLD" header, row-major float32 LE, then label bytes
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u64_le(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xffU);
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t get_u64_le(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

inline void put_f32_le(std::ostream& os, float f) {
    std::uint32_t v;
    std::memcpy(&v, &f, 4);
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xffU);
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline float get_f32_le(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    float f;
    std::memcpy(&f, &v, 4);
    return f;
}

}  // namespace detail

inline constexpr char kDatasetMagic[4] = {'H', 'F', 'L', 'D'};
inline constexpr std::uint8_t kDatasetVersion = 1;

inline void save_dataset(const std::string& path, const Dataset& ds) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write dataset file: " + path);
    os.write(kDatasetMagic, 4);
    os.put(static_cast<char>(kDatasetVersion));
    detail::put_u64_le(os, ds.n());
    detail::put_u64_le(os, ds.dim());
    os.put(1);  // labels present
    for (const float v : ds.features.data) detail::put_f32_le(os, v);
    os.write(reinterpret_cast<const char*>(ds.labels.data()),
             static_cast<std::streamsize>(ds.labels.size()));
    if (!os) throw IoError("short write on dataset file: " + path);
}

inline Dataset load_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open dataset file: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kDatasetMagic, 4) != 0)
        throw DataError(path + ": not a dataset file (bad magic)");
    const int version = is.get();
    if (version != kDatasetVersion)
        throw DataError(path + ": unsupported dataset version " + std::to_string(version));
    const std::uint64_t n = detail::get_u64_le(is);
    const std::uint64_t d = detail::get_u64_le(is);
    const int labeled = is.get();
    Dataset ds;
    ds.features = Matrix(n, d);
    for (auto& v : ds.features.data) v = detail::get_f32_le(is);
    if (labeled) {
        ds.labels.resize(n);
        is.read(reinterpret_cast<char*>(ds.labels.data()), static_cast<std::streamsize>(n));
    }
    for (std::uint64_t j = 0; j < d; ++j) ds.feature_names.push_back("f" + std::to_string(j));
    if (!is) throw DataError(path + ": truncated dataset file");
    return ds;
}

}  // namespace hfl::data
