#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <vector>

#include "protoclr/core.hpp"

namespace protoclr {

// A batch of row embeddings with one class label per row and optional domain
// ids. The loss functions consume embeddings as given; normalization is the
// caller's job.
struct LabeledBatch {
    Mat embeddings;
    std::vector<int> labels;
    std::optional<std::vector<int>> domains;

    int rows() const noexcept { return embeddings.rows(); }
    int dim() const noexcept { return embeddings.cols(); }

    void validate() const {
        require(static_cast<int>(labels.size()) == embeddings.rows(), Errc::shape_mismatch,
                "LabeledBatch: labels length != rows");
        for (int y : labels)
            require(y >= 0, Errc::invalid_argument, "LabeledBatch: negative class label");
        if (domains)
            require(static_cast<int>(domains->size()) == embeddings.rows(), Errc::shape_mismatch,
                    "LabeledBatch: domains length != rows");
        require(embeddings.all_finite(), Errc::invalid_argument, "LabeledBatch: non-finite embedding");
    }
};

// Per-class centroids in ascending label order. Centroids are plain means;
// counts[i] is the number of batch rows with class classes[i].
struct Prototypes {
    std::vector<int> classes;
    Mat centroids;
    std::vector<int> counts;

    int num_classes() const noexcept { return static_cast<int>(classes.size()); }

    // Index of a class id within `classes`, or -1.
    int class_index(int label) const {
        const auto it = std::lower_bound(classes.begin(), classes.end(), label);
        if (it == classes.end() || *it != label) return -1;
        return static_cast<int>(it - classes.begin());
    }
};

// Arithmetic mean per class. Centroids are plain means by default;
// normalize_prototypes rescales each to unit norm after averaging.
// When `accumulate_macs` is given, one MAC per scalar accumulated into a
// centroid sum is added (n*d total), matching the cost model's closed form.
inline Prototypes class_centroids(const LabeledBatch& batch, long long* accumulate_macs = nullptr,
                                  bool normalize_prototypes = false) {
    batch.validate();
    require(batch.rows() >= 1, Errc::empty_batch, "class_centroids: empty batch");

    const int n = batch.rows();
    const int d = batch.dim();

    std::map<int, int> counts_by_class;
    for (int y : batch.labels) ++counts_by_class[y];

    Prototypes protos;
    protos.classes.reserve(counts_by_class.size());
    protos.counts.reserve(counts_by_class.size());
    for (const auto& [label, count] : counts_by_class) {
        protos.classes.push_back(label);
        protos.counts.push_back(count);
    }
    protos.centroids = Mat(protos.num_classes(), d);

    for (int i = 0; i < n; ++i) {
        const int k = protos.class_index(batch.labels[i]);
        auto acc = protos.centroids.row(k);
        const auto src = batch.embeddings.row(i);
        for (int c = 0; c < d; ++c) acc[c] += src[c];
        if (accumulate_macs) *accumulate_macs += d;
    }
    for (int k = 0; k < protos.num_classes(); ++k) {
        auto row = protos.centroids.row(k);
        for (double& v : row) v /= protos.counts[static_cast<std::size_t>(k)];
        if (normalize_prototypes) {
            const double nr = norm(row);
            require(nr > kZeroNormTolerance, Errc::zero_norm,
                    "class_centroids: zero-norm centroid cannot be normalized");
            for (double& v : row) v /= nr;
        }
    }
    return protos;
}

struct VarianceProbeReport {
    int class_size = 0;
    int resamples = 0;
    double empirical_variance = 0.0; // mean over coordinates of Var(centroid coord)
    double predicted_variance = 0.0; // population variance (=1) / class_size
};

// Draws `resamples` groups of `class_size` i.i.d. standard-normal vectors and
// measures the per-coordinate variance of the group centroid. The prediction
// is Var(single sample) / class_size = 1 / class_size.
inline VarianceProbeReport variance_probe(int dim, int class_size, int resamples, RngStream& rng) {
    require(dim >= 1, Errc::invalid_argument, "variance_probe: dim must be >= 1");
    require(class_size >= 1, Errc::invalid_argument, "variance_probe: class_size must be >= 1");
    require(resamples >= 100, Errc::invalid_argument, "variance_probe: resamples must be >= 100");

    Mat centroids(resamples, dim);
    for (int m = 0; m < resamples; ++m) {
        auto row = centroids.row(m);
        for (int j = 0; j < class_size; ++j)
            for (int c = 0; c < dim; ++c) row[c] += rng.next_normal();
        for (double& v : row) v /= class_size;
    }

    double var_sum = 0.0;
    for (int c = 0; c < dim; ++c) {
        double mean = 0.0;
        for (int m = 0; m < resamples; ++m) mean += centroids(m, c);
        mean /= resamples;
        double ss = 0.0;
        for (int m = 0; m < resamples; ++m) {
            const double delta = centroids(m, c) - mean;
            ss += delta * delta;
        }
        var_sum += ss / (resamples - 1);
    }

    VarianceProbeReport report;
    report.class_size = class_size;
    report.resamples = resamples;
    report.empirical_variance = var_sum / dim;
    report.predicted_variance = 1.0 / class_size;
    return report;
}

} // namespace protoclr
