#pragma once

#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "protoclr/core.hpp"
#include "protoclr/encoder.hpp" // detail::read_file_bytes / write_file_bytes / ByteReader
#include "protoclr/prototypes.hpp"

namespace protoclr {

// Multi-domain clustered data: x = T_dom * (mu_class + noise) + offset_dom.
// Class means live on a sphere of radius class_separation; each domain gets
// its own offset and (optionally) its own random orthogonal map, so domain
// marginals differ while class structure is preserved within every domain.
struct SyntheticSpec {
    int num_classes = 2;
    int num_domains = 1;
    int dim = 8;
    int samples_per_class_domain = 16;
    double class_separation = 3.0;
    double domain_offset_scale = 0.0;
    bool domain_transform = false;
    double noise_sigma = 0.5;
    std::uint64_t seed = 0;

    void validate() const {
        require(num_classes >= 2, Errc::invalid_argument, "SyntheticSpec: num_classes must be >= 2");
        require(num_domains >= 1, Errc::invalid_argument, "SyntheticSpec: num_domains must be >= 1");
        require(dim >= 1, Errc::invalid_argument, "SyntheticSpec: dim must be >= 1");
        require(samples_per_class_domain >= 1, Errc::invalid_argument,
                "SyntheticSpec: samples per (class, domain) must be >= 1");
        require(class_separation >= 0.0 && domain_offset_scale >= 0.0 && noise_sigma >= 0.0,
                Errc::invalid_argument, "SyntheticSpec: scales must be >= 0");
    }
};

struct EmbeddingSet {
    Mat features;
    std::vector<int> labels;
    std::vector<int> domains; // empty when absent
    std::vector<std::string> class_names; // optional

    int rows() const noexcept { return features.rows(); }
    int dim() const noexcept { return features.cols(); }
    bool has_domains() const noexcept { return !domains.empty(); }

    void validate() const {
        require(static_cast<int>(labels.size()) == features.rows(), Errc::shape_mismatch,
                "EmbeddingSet: labels length != rows");
        if (!domains.empty())
            require(static_cast<int>(domains.size()) == features.rows(), Errc::shape_mismatch,
                    "EmbeddingSet: domains length != rows");
        if (!class_names.empty())
            for (int y : labels)
                require(y >= 0 && y < static_cast<int>(class_names.size()), Errc::label_out_of_range,
                        "EmbeddingSet: label without a class name");
    }

    LabeledBatch to_batch() const {
        LabeledBatch b;
        b.embeddings = features;
        b.labels = labels;
        if (!domains.empty()) b.domains = domains;
        return b;
    }
};

namespace detail {

// Random orthogonal map: Gram-Schmidt on a square Gaussian matrix.
inline Mat random_orthogonal(int dim, RngStream& rng) {
    Mat q(dim, dim);
    for (int r = 0; r < dim; ++r) {
        Vec v(static_cast<std::size_t>(dim));
        for (double& x : v) x = rng.next_normal();
        for (int prev = 0; prev < r; ++prev) {
            const auto p = q.row(prev);
            double proj = 0.0;
            for (int c = 0; c < dim; ++c) proj += v[static_cast<std::size_t>(c)] * p[c];
            for (int c = 0; c < dim; ++c) v[static_cast<std::size_t>(c)] -= proj * p[c];
        }
        const Vec u = l2_normalize(v);
        for (int c = 0; c < dim; ++c) q(r, c) = u[static_cast<std::size_t>(c)];
    }
    return q;
}

} // namespace detail

inline EmbeddingSet generate(const SyntheticSpec& spec) {
    spec.validate();
    RngStream root(spec.seed);
    RngStream mean_rng = root.substream(0);
    RngStream offset_rng = root.substream(1);
    RngStream rotation_rng = root.substream(2);
    RngStream noise_rng = root.substream(3);

    const int d = spec.dim;

    Mat class_means(spec.num_classes, d);
    for (int y = 0; y < spec.num_classes; ++y) {
        Vec v(static_cast<std::size_t>(d));
        for (double& x : v) x = mean_rng.next_normal();
        const Vec u = l2_normalize(v);
        for (int c = 0; c < d; ++c) class_means(y, c) = spec.class_separation * u[static_cast<std::size_t>(c)];
    }

    Mat domain_offsets(spec.num_domains, d);
    for (int dom = 0; dom < spec.num_domains; ++dom)
        for (int c = 0; c < d; ++c)
            domain_offsets(dom, c) = spec.domain_offset_scale * offset_rng.next_normal();

    std::vector<Mat> rotations;
    if (spec.domain_transform) {
        rotations.reserve(static_cast<std::size_t>(spec.num_domains));
        for (int dom = 0; dom < spec.num_domains; ++dom)
            rotations.push_back(detail::random_orthogonal(d, rotation_rng));
    }

    const int n = spec.num_classes * spec.num_domains * spec.samples_per_class_domain;
    EmbeddingSet set;
    set.features = Mat(n, d);
    set.labels.resize(static_cast<std::size_t>(n));
    set.domains.resize(static_cast<std::size_t>(n));

    int row = 0;
    Vec point(static_cast<std::size_t>(d));
    for (int dom = 0; dom < spec.num_domains; ++dom) {
        for (int y = 0; y < spec.num_classes; ++y) {
            for (int s = 0; s < spec.samples_per_class_domain; ++s, ++row) {
                for (int c = 0; c < d; ++c)
                    point[static_cast<std::size_t>(c)] =
                        class_means(y, c) + spec.noise_sigma * noise_rng.next_normal();
                auto out = set.features.row(row);
                if (spec.domain_transform) {
                    const Mat& rot = rotations[static_cast<std::size_t>(dom)];
                    for (int c = 0; c < d; ++c) {
                        double acc = 0.0;
                        const auto rot_row = rot.row(c);
                        for (int k = 0; k < d; ++k) acc += rot_row[k] * point[static_cast<std::size_t>(k)];
                        out[c] = acc + domain_offsets(dom, c);
                    }
                } else {
                    for (int c = 0; c < d; ++c) out[c] = point[static_cast<std::size_t>(c)] + domain_offsets(dom, c);
                }
                set.labels[static_cast<std::size_t>(row)] = y;
                set.domains[static_cast<std::size_t>(row)] = dom;
            }
        }
    }
    return set;
}

// --- EMB1 binary format ------------------------------------------------------
// "EMB1" | u32 version=1 | u32 n | u32 d | u8 flags (bit0 domains, bit1 class
// names) | n*d float32 row-major | n u32 labels | [n u32 domains] |
// [u32 name count, then u32-length-prefixed UTF-8 names]; all little-endian.

inline std::string encode_emb1(const EmbeddingSet& set) {
    set.validate();
    std::string out = "EMB1";
    detail::put_u32(out, 1);
    detail::put_u32(out, static_cast<std::uint32_t>(set.rows()));
    detail::put_u32(out, static_cast<std::uint32_t>(set.dim()));
    std::uint8_t flags = 0;
    if (set.has_domains()) flags |= 1;
    if (!set.class_names.empty()) flags |= 2;
    out.push_back(static_cast<char>(flags));
    for (std::size_t i = 0; i < set.features.size(); ++i) detail::put_f32(out, set.features.data()[i]);
    for (int y : set.labels) detail::put_u32(out, static_cast<std::uint32_t>(y));
    if (set.has_domains())
        for (int dom : set.domains) detail::put_u32(out, static_cast<std::uint32_t>(dom));
    if (!set.class_names.empty()) {
        detail::put_u32(out, static_cast<std::uint32_t>(set.class_names.size()));
        for (const auto& name : set.class_names) {
            detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
            out += name;
        }
    }
    return out;
}

inline EmbeddingSet decode_emb1(const std::string& bytes) {
    require(bytes.size() >= 4 && bytes.compare(0, 4, "EMB1") == 0, Errc::malformed_header,
            "not an EMB1 file");
    detail::ByteReader r{bytes, 4};
    const std::uint32_t version = r.u32();
    require(version == 1, Errc::malformed_header, "unsupported EMB1 version " + std::to_string(version));
    const std::uint32_t n = r.u32();
    const std::uint32_t d = r.u32();
    require(d >= 1, Errc::malformed_header, "EMB1: dim must be >= 1");
    const std::uint8_t flags = r.u8();
    require((flags & ~0x3u) == 0, Errc::malformed_header, "EMB1: unknown flag bits");
    const std::uint64_t payload = static_cast<std::uint64_t>(n) * d * 4;
    require(r.has(payload), Errc::truncated_payload, "EMB1: feature payload shorter than header claims");

    EmbeddingSet set;
    set.features = Mat(static_cast<int>(n), static_cast<int>(d));
    for (std::size_t i = 0; i < set.features.size(); ++i) set.features.data()[i] = r.f32();
    set.labels.resize(n);
    for (auto& y : set.labels) y = static_cast<int>(r.u32());
    if (flags & 1) {
        set.domains.resize(n);
        for (auto& dom : set.domains) dom = static_cast<int>(r.u32());
    }
    if (flags & 2) {
        const std::uint32_t count = r.u32();
        set.class_names.resize(count);
        for (auto& name : set.class_names) {
            const std::uint32_t len = r.u32();
            require(r.has(len), Errc::truncated_payload, "EMB1: truncated class name");
            name.assign(bytes, r.pos, len);
            r.pos += len;
        }
    }
    require(r.pos == bytes.size(), Errc::truncated_payload, "EMB1: trailing bytes");
    set.validate();
    return set;
}

inline void save_emb1(const std::string& path, const EmbeddingSet& set) {
    detail::write_file_bytes(path, encode_emb1(set));
}

inline EmbeddingSet load_emb1(const std::string& path) {
    return decode_emb1(detail::read_file_bytes(path));
}

// --- CSV format ---------------------------------------------------------------
// Header: label,domain,f0,...,f{d-1}; one row per example; domain -1 when the
// set has no domain ids.

inline std::string encode_csv(const EmbeddingSet& set) {
    set.validate();
    std::string out = "label,domain";
    for (int c = 0; c < set.dim(); ++c) out += ",f" + std::to_string(c);
    out += "\n";
    char buf[64];
    for (int i = 0; i < set.rows(); ++i) {
        const int dom = set.has_domains() ? set.domains[static_cast<std::size_t>(i)] : -1;
        out += std::to_string(set.labels[static_cast<std::size_t>(i)]);
        out += ",";
        out += std::to_string(dom);
        for (int c = 0; c < set.dim(); ++c) {
            // %.9g round-trips float32 exactly
            std::snprintf(buf, sizeof buf, ",%.9g", static_cast<float>(set.features(i, c)));
            out += buf;
        }
        out += "\n";
    }
    return out;
}

inline EmbeddingSet decode_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), Errc::malformed_header, "CSV: missing header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    require(line.rfind("label,domain", 0) == 0, Errc::malformed_header,
            "CSV: header must start with label,domain");

    int d = 0;
    for (std::size_t pos = line.find(','); pos != std::string::npos; pos = line.find(',', pos + 1)) ++d;
    d -= 1; // first two columns are label and domain
    require(d >= 1, Errc::malformed_header, "CSV: no feature columns");

    std::vector<double> values;
    std::vector<int> labels;
    std::vector<int> domains;
    bool any_domain = false;

    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::size_t start = 0;
        while (true) {
            const std::size_t comma = line.find(',', start);
            fields.push_back(line.substr(start, comma == std::string::npos ? comma : comma - start));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        require(static_cast<int>(fields.size()) == d + 2, Errc::inconsistent_row_length,
                "CSV: line " + std::to_string(line_no) + " has " + std::to_string(fields.size()) +
                    " fields, expected " + std::to_string(d + 2));
        try {
            labels.push_back(std::stoi(fields[0]));
            const int dom = std::stoi(fields[1]);
            domains.push_back(dom);
            if (dom != -1) any_domain = true;
            for (int c = 0; c < d; ++c)
                values.push_back(static_cast<double>(static_cast<float>(std::stod(fields[static_cast<std::size_t>(c) + 2]))));
        } catch (const std::exception&) {
            fail(Errc::inconsistent_row_length, "CSV: unparsable value at line " + std::to_string(line_no));
        }
    }

    EmbeddingSet set;
    const int n = static_cast<int>(labels.size());
    set.features = Mat(n, d);
    for (std::size_t i = 0; i < values.size(); ++i) set.features.data()[i] = values[i];
    set.labels = std::move(labels);
    if (any_domain) set.domains = std::move(domains);
    set.validate();
    return set;
}

inline void save_csv(const std::string& path, const EmbeddingSet& set) {
    detail::write_file_bytes(path, encode_csv(set));
}

inline EmbeddingSet load_csv(const std::string& path) {
    return decode_csv(detail::read_file_bytes(path));
}

// Dispatch on extension: .csv is text, anything else is EMB1.
inline void save_embedding_set(const std::string& path, const EmbeddingSet& set) {
    if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".csv") == 0)
        save_csv(path, set);
    else
        save_emb1(path, set);
}

inline EmbeddingSet load_embedding_set(const std::string& path) {
    if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".csv") == 0) return load_csv(path);
    return load_emb1(path);
}

} // namespace protoclr
