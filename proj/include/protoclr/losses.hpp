#pragma once

#include <cmath>
#include <vector>

#include "protoclr/core.hpp"
#include "protoclr/parallel.hpp"
#include "protoclr/prototypes.hpp"

namespace protoclr {

enum class AnchorWeight { uniform, inverse_positives };
enum class PrototypeMode { detached, full };
enum class SingletonPolicy { skip_anchor, error };

struct LossConfig {
    double temperature = 0.5;
    AnchorWeight anchor_weight = AnchorWeight::uniform;
    PrototypeMode prototype_mode = PrototypeMode::detached; // prototype-loss gradients only
    SingletonPolicy singleton_policy = SingletonPolicy::skip_anchor; // pairwise loss only

    void validate() const {
        require(temperature > 0.0, Errc::non_positive_temperature, "LossConfig: temperature must be > 0");
    }
};

struct LossResult {
    double value = 0.0;
    Mat grad;            // descent gradient of `value` w.r.t. every embedding row
    long long macs = 0;  // multiply-accumulates spent on similarity computation
};

// Per-anchor gradient decomposition. `ascent_form` is positive_term minus
// negative_term, the direction that increases the anchor's log-probability;
// the descent gradient of the anchor's loss term is its negation.
struct AnchorGradient {
    int anchor = -1;
    Vec positive_term;
    Vec negative_term;
    Vec ascent_form;
};

namespace detail {

// Logits, per-anchor log-sum-exp and softmax over all other batch rows.
// Every ordered pair (i, a != i) is computed explicitly; macs = n*(n-1)*d.
struct PairwiseTerms {
    Mat logits;              // s(i,a) = z_i . z_a / tau, diagonal unused
    Mat softmax;             // softmax over a != i per row, diagonal 0
    std::vector<double> lse; // log sum_{a != i} exp(s(i,a))
    long long macs = 0;
};

inline PairwiseTerms pairwise_terms(const Mat& z, double tau) {
    const int n = z.rows();
    const int d = z.cols();
    PairwiseTerms t;
    t.logits = Mat(n, n);
    t.softmax = Mat(n, n);
    t.lse.assign(static_cast<std::size_t>(n), 0.0);
    std::vector<long long> row_macs(static_cast<std::size_t>(n), 0);

    parallel_for(n, [&](int i) {
        const auto zi = z.row(i);
        long long macs = 0;
        double m = -HUGE_VAL;
        for (int a = 0; a < n; ++a) {
            if (a == i) continue;
            double s = 0.0;
            const auto za = z.row(a);
            for (int c = 0; c < d; ++c) s += zi[c] * za[c];
            macs += d;
            s /= tau;
            t.logits(i, a) = s;
            m = std::max(m, s);
        }
        double denom = 0.0;
        for (int a = 0; a < n; ++a) {
            if (a == i) continue;
            const double e = std::exp(t.logits(i, a) - m);
            t.softmax(i, a) = e;
            denom += e;
        }
        for (int a = 0; a < n; ++a)
            if (a != i) t.softmax(i, a) /= denom;
        t.lse[static_cast<std::size_t>(i)] = m + std::log(denom);
        row_macs[static_cast<std::size_t>(i)] = macs;
    });

    for (long long m : row_macs) t.macs += m;
    return t;
}

// grad(z_k) = sum_j (G(k,j) + G(j,k)) * z_j / tau, the exact gradient of any
// loss whose logit-space partials are collected in G.
inline Mat pairwise_gradient(const Mat& z, const Mat& coeff, double tau) {
    const int n = z.rows();
    const int d = z.cols();
    Mat grad(n, d);
    parallel_for(n, [&](int k) {
        auto out = grad.row(k);
        for (int j = 0; j < n; ++j) {
            if (j == k) continue;
            const double c = (coeff(k, j) + coeff(j, k)) / tau;
            if (c == 0.0) continue;
            const auto zj = z.row(j);
            for (int e = 0; e < d; ++e) out[e] += c * zj[e];
        }
    });
    return grad;
}

inline std::vector<std::vector<int>> positives_by_anchor(const std::vector<int>& labels) {
    const int n = static_cast<int>(labels.size());
    std::vector<std::vector<int>> pos(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        for (int a = 0; a < n; ++a)
            if (a != i && labels[a] == labels[i]) pos[static_cast<std::size_t>(i)].push_back(a);
    return pos;
}

} // namespace detail

// Pairwise supervised contrastive loss. Each anchor is scored against all
// other rows; positives are same-class rows. The gradient is the exact
// derivative of `value`, including every appearance of a row in other
// anchors' numerators and denominators.
inline LossResult supcon_forward(const LabeledBatch& batch, const LossConfig& cfg) {
    cfg.validate();
    batch.validate();
    const int n = batch.rows();
    require(n >= 2, Errc::batch_too_small, "supcon_forward: need at least 2 rows");

    const auto positives = detail::positives_by_anchor(batch.labels);
    if (cfg.singleton_policy == SingletonPolicy::error) {
        for (int i = 0; i < n; ++i)
            require(!positives[static_cast<std::size_t>(i)].empty(), Errc::singleton_anchor,
                    "supcon_forward: anchor " + std::to_string(i) + " has no positives");
    }

    const double tau = cfg.temperature;
    auto terms = detail::pairwise_terms(batch.embeddings, tau);

    double value = 0.0;
    Mat coeff(n, n); // d(value)/d(logit(i,a))
    for (int i = 0; i < n; ++i) {
        const auto& pos = positives[static_cast<std::size_t>(i)];
        const auto p_count = static_cast<double>(pos.size());
        if (pos.empty()) continue; // skip_anchor policy: contributes nothing
        const double w = cfg.anchor_weight == AnchorWeight::inverse_positives ? 1.0 / p_count : 1.0;

        double pos_logits = 0.0;
        for (int p : pos) pos_logits += terms.logits(i, p);
        value += w * (p_count * terms.lse[static_cast<std::size_t>(i)] - pos_logits);

        for (int a = 0; a < n; ++a)
            if (a != i) coeff(i, a) = w * p_count * terms.softmax(i, a);
        for (int p : pos) coeff(i, p) -= w;
    }

    LossResult result;
    result.value = value;
    result.grad = detail::pairwise_gradient(batch.embeddings, coeff, tau);
    result.macs = terms.macs;
    return result;
}

// Gradient decomposition of anchor i's own loss term, with the 1/|P(i)|
// weighting that the pairwise loss definition carries.
inline AnchorGradient supcon_anchor_gradient(const LabeledBatch& batch, const LossConfig& cfg, int i) {
    cfg.validate();
    batch.validate();
    const int n = batch.rows();
    require(i >= 0 && i < n, Errc::invalid_argument, "supcon_anchor_gradient: anchor index out of range");
    require(n >= 2, Errc::batch_too_small, "supcon_anchor_gradient: need at least 2 rows");

    std::vector<int> pos;
    for (int a = 0; a < n; ++a)
        if (a != i && batch.labels[a] == batch.labels[i]) pos.push_back(a);
    require(!pos.empty(), Errc::singleton_anchor,
            "supcon_anchor_gradient: anchor " + std::to_string(i) + " has no positives");

    const double tau = cfg.temperature;
    const int d = batch.dim();
    const auto zi = batch.embeddings.row(i);

    Vec logits(static_cast<std::size_t>(n), 0.0);
    double m = -HUGE_VAL;
    for (int a = 0; a < n; ++a) {
        if (a == i) continue;
        double s = 0.0;
        const auto za = batch.embeddings.row(a);
        for (int c = 0; c < d; ++c) s += zi[c] * za[c];
        logits[static_cast<std::size_t>(a)] = s / tau;
        m = std::max(m, s / tau);
    }

    AnchorGradient g;
    g.anchor = i;
    g.positive_term.assign(static_cast<std::size_t>(d), 0.0);
    g.negative_term.assign(static_cast<std::size_t>(d), 0.0);

    for (int p : pos) {
        const auto zp = batch.embeddings.row(p);
        for (int c = 0; c < d; ++c) g.positive_term[static_cast<std::size_t>(c)] += zp[c];
    }
    const double pos_scale = 1.0 / (static_cast<double>(pos.size()) * tau);
    for (double& v : g.positive_term) v *= pos_scale;

    double denom = 0.0;
    for (int a = 0; a < n; ++a)
        if (a != i) denom += std::exp(logits[static_cast<std::size_t>(a)] - m);
    for (int a = 0; a < n; ++a) {
        if (a == i) continue;
        const double sigma = std::exp(logits[static_cast<std::size_t>(a)] - m) / denom;
        const auto za = batch.embeddings.row(a);
        for (int c = 0; c < d; ++c) g.negative_term[static_cast<std::size_t>(c)] += sigma * za[c];
    }
    for (double& v : g.negative_term) v /= tau;

    g.ascent_form.resize(static_cast<std::size_t>(d));
    for (int c = 0; c < d; ++c)
        g.ascent_form[static_cast<std::size_t>(c)] =
            g.positive_term[static_cast<std::size_t>(c)] - g.negative_term[static_cast<std::size_t>(c)];
    return g;
}

// Prototype contrastive loss: each anchor is scored against the per-class
// centroids of the batch. `detached` treats centroids as constants; `full`
// chain-rules through the centroid means so the gradient matches finite
// differences of the value.
inline LossResult protoclr_forward(const LabeledBatch& batch, const LossConfig& cfg) {
    cfg.validate();
    batch.validate();
    const int n = batch.rows();
    require(n >= 1, Errc::empty_batch, "protoclr_forward: empty batch");

    long long macs = 0;
    const Prototypes protos = class_centroids(batch, &macs);
    const int num_classes = protos.num_classes();
    const int d = batch.dim();
    const double tau = cfg.temperature;

    // anchor -> class logits
    Mat logits(n, num_classes);
    std::vector<long long> row_macs(static_cast<std::size_t>(n), 0);
    parallel_for(n, [&](int i) {
        const auto zi = batch.embeddings.row(i);
        long long rm = 0;
        for (int y = 0; y < num_classes; ++y) {
            double s = 0.0;
            const auto cy = protos.centroids.row(y);
            for (int c = 0; c < d; ++c) s += zi[c] * cy[c];
            rm += d;
            logits(i, y) = s / tau;
        }
        row_macs[static_cast<std::size_t>(i)] = rm;
    });
    for (long long m : row_macs) macs += m;

    double value = 0.0;
    Mat coeff(n, num_classes); // d(value)/d(logit(i,y))
    std::vector<int> own_class(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int k = protos.class_index(batch.labels[i]);
        own_class[static_cast<std::size_t>(i)] = k;

        double w = 1.0;
        if (cfg.anchor_weight == AnchorWeight::inverse_positives) {
            const int p_count = protos.counts[static_cast<std::size_t>(k)] - 1;
            require(p_count >= 1, Errc::singleton_anchor,
                    "protoclr_forward: anchor " + std::to_string(i) +
                        " has no positives under inverse_positives weighting");
            w = 1.0 / p_count;
        }

        double m = logits(i, 0);
        for (int y = 1; y < num_classes; ++y) m = std::max(m, logits(i, y));
        double denom = 0.0;
        for (int y = 0; y < num_classes; ++y) denom += std::exp(logits(i, y) - m);
        const double lse = m + std::log(denom);

        value += w * (lse - logits(i, k));
        for (int y = 0; y < num_classes; ++y)
            coeff(i, y) = w * (std::exp(logits(i, y) - m) / denom - (y == k ? 1.0 : 0.0));
    }

    LossResult result;
    result.value = value;
    result.grad = Mat(n, d);
    parallel_for(n, [&](int i) {
        auto out = result.grad.row(i);
        for (int y = 0; y < num_classes; ++y) {
            const double c = coeff(i, y) / tau;
            const auto cy = protos.centroids.row(y);
            for (int e = 0; e < d; ++e) out[e] += c * cy[e];
        }
    });

    if (cfg.prototype_mode == PrototypeMode::full) {
        // back-propagate through the centroid means:
        // grad(z_k) += (1 / (tau * N_{y_k})) * sum_i coeff(i, y_k) * z_i
        Mat class_pull(num_classes, d);
        for (int i = 0; i < n; ++i) {
            const auto zi = batch.embeddings.row(i);
            for (int y = 0; y < num_classes; ++y) {
                const double c = coeff(i, y);
                if (c == 0.0) continue;
                auto row = class_pull.row(y);
                for (int e = 0; e < d; ++e) row[e] += c * zi[e];
            }
        }
        for (int k = 0; k < n; ++k) {
            const int y = own_class[static_cast<std::size_t>(k)];
            const double scale = 1.0 / (tau * protos.counts[static_cast<std::size_t>(y)]);
            auto out = result.grad.row(k);
            const auto pull = class_pull.row(y);
            for (int e = 0; e < d; ++e) out[e] += scale * pull[e];
        }
    }

    result.macs = macs;
    return result;
}

// Printed-form gradient decomposition for one anchor with detached
// centroids: a pull towards the anchor's class centroid and a push away from
// the softmax-weighted centroid average.
inline AnchorGradient protoclr_anchor_gradient(const LabeledBatch& batch, const LossConfig& cfg, int i) {
    cfg.validate();
    batch.validate();
    const int n = batch.rows();
    require(n >= 1, Errc::empty_batch, "protoclr_anchor_gradient: empty batch");
    require(i >= 0 && i < n, Errc::invalid_argument, "protoclr_anchor_gradient: anchor index out of range");

    const Prototypes protos = class_centroids(batch);
    const int num_classes = protos.num_classes();
    const int d = batch.dim();
    const double tau = cfg.temperature;
    const int k = protos.class_index(batch.labels[i]);
    const auto zi = batch.embeddings.row(i);

    Vec logits(static_cast<std::size_t>(num_classes));
    double m = -HUGE_VAL;
    for (int y = 0; y < num_classes; ++y) {
        double s = 0.0;
        const auto cy = protos.centroids.row(y);
        for (int c = 0; c < d; ++c) s += zi[c] * cy[c];
        logits[static_cast<std::size_t>(y)] = s / tau;
        m = std::max(m, s / tau);
    }
    double denom = 0.0;
    for (int y = 0; y < num_classes; ++y) denom += std::exp(logits[static_cast<std::size_t>(y)] - m);

    AnchorGradient g;
    g.anchor = i;
    g.positive_term.assign(static_cast<std::size_t>(d), 0.0);
    g.negative_term.assign(static_cast<std::size_t>(d), 0.0);
    const auto own = protos.centroids.row(k);
    for (int c = 0; c < d; ++c) g.positive_term[static_cast<std::size_t>(c)] = own[c] / tau;
    for (int y = 0; y < num_classes; ++y) {
        const double pi = std::exp(logits[static_cast<std::size_t>(y)] - m) / denom;
        const auto cy = protos.centroids.row(y);
        for (int c = 0; c < d; ++c) g.negative_term[static_cast<std::size_t>(c)] += pi * cy[c] / tau;
    }
    g.ascent_form.resize(static_cast<std::size_t>(d));
    for (int c = 0; c < d; ++c)
        g.ascent_form[static_cast<std::size_t>(c)] =
            g.positive_term[static_cast<std::size_t>(c)] - g.negative_term[static_cast<std::size_t>(c)];
    return g;
}

// NT-Xent over a batch of paired views: rows 2j and 2j+1 are two views of
// example j; each anchor's positive is its partner, all other rows are
// negatives. Labels in the batch are ignored.
inline LossResult infonce_forward(const LabeledBatch& batch, const LossConfig& cfg) {
    cfg.validate();
    batch.validate();
    const int n = batch.rows();
    require(n % 2 == 0, Errc::odd_row_count, "infonce_forward: row count must be even");
    require(n >= 4, Errc::batch_too_small, "infonce_forward: need at least 2 pairs");

    const double tau = cfg.temperature;
    auto terms = detail::pairwise_terms(batch.embeddings, tau);

    double value = 0.0;
    Mat coeff(n, n);
    for (int i = 0; i < n; ++i) {
        const int partner = i ^ 1;
        value += terms.lse[static_cast<std::size_t>(i)] - terms.logits(i, partner);
        for (int a = 0; a < n; ++a)
            if (a != i) coeff(i, a) = terms.softmax(i, a);
        coeff(i, partner) -= 1.0;
    }

    LossResult result;
    result.value = value;
    result.grad = detail::pairwise_gradient(batch.embeddings, coeff, tau);
    result.macs = terms.macs;
    return result;
}

// Mean negative log-likelihood over logit rows. No similarity computation,
// so macs stays 0.
inline LossResult softmax_ce_forward(const Mat& logits, const std::vector<int>& labels) {
    const int n = logits.rows();
    const int num_classes = logits.cols();
    require(n >= 1, Errc::empty_batch, "softmax_ce_forward: empty batch");
    require(static_cast<int>(labels.size()) == n, Errc::shape_mismatch,
            "softmax_ce_forward: labels length != rows");
    for (int y : labels)
        require(y >= 0 && y < num_classes, Errc::label_out_of_range,
                "softmax_ce_forward: label " + std::to_string(y) + " outside [0, " +
                    std::to_string(num_classes) + ")");

    LossResult result;
    result.grad = Mat(n, num_classes);
    double value = 0.0;
    for (int i = 0; i < n; ++i) {
        double m = logits(i, 0);
        for (int c = 1; c < num_classes; ++c) m = std::max(m, logits(i, c));
        double denom = 0.0;
        for (int c = 0; c < num_classes; ++c) denom += std::exp(logits(i, c) - m);
        const double lse = m + std::log(denom);
        value += lse - logits(i, labels[static_cast<std::size_t>(i)]);
        for (int c = 0; c < num_classes; ++c) {
            const double p = std::exp(logits(i, c) - m) / denom;
            result.grad(i, c) = (p - (c == labels[static_cast<std::size_t>(i)] ? 1.0 : 0.0)) / n;
        }
    }
    result.value = value / n;
    result.macs = 0;
    return result;
}

struct ConvergenceProbeReport {
    double mean_negative_term_gap = 0.0;
    int anchors = 0;
    double epsilon = 0.0;
    double tau = 0.0;
};

// Near-convergence comparison of the two losses' push directions. Class
// centers are unit vectors; each embedding sits at distance ~epsilon from
// its center. Every anchor is scored by appending it to the batch as an
// extra row, so both anchor-gradient operations see the same balanced
// batch of class members; at epsilon = 0 the two negative terms then agree
// exactly instead of differing by the anchor's own missing contribution.
inline ConvergenceProbeReport convergence_equivalence_probe(int num_classes, int per_class, int dim,
                                                            double epsilon, double tau, RngStream& rng) {
    require(num_classes >= 2, Errc::invalid_argument, "convergence probe: need >= 2 classes");
    require(per_class >= 2, Errc::invalid_argument, "convergence probe: need >= 2 points per class");
    require(dim >= 2, Errc::invalid_argument, "convergence probe: need dim >= 2");
    require(epsilon >= 0.0, Errc::invalid_argument, "convergence probe: epsilon must be >= 0");
    require(tau > 0.0, Errc::non_positive_temperature, "convergence probe: tau must be > 0");

    auto unit_vec = [dim](RngStream& r) {
        Vec v(static_cast<std::size_t>(dim));
        for (double& x : v) x = r.next_normal();
        return l2_normalize(v);
    };

    RngStream center_rng = rng.substream(0);
    RngStream noise_rng = rng.substream(1);

    Mat centers(num_classes, dim);
    for (int y = 0; y < num_classes; ++y) {
        const Vec c = unit_vec(center_rng);
        for (int e = 0; e < dim; ++e) centers(y, e) = c[static_cast<std::size_t>(e)];
    }

    const int n = num_classes * per_class;
    LabeledBatch batch;
    batch.embeddings = Mat(n, dim);
    batch.labels.resize(static_cast<std::size_t>(n));
    int row = 0;
    for (int y = 0; y < num_classes; ++y) {
        for (int j = 0; j < per_class; ++j, ++row) {
            const Vec u = unit_vec(noise_rng);
            Vec z(static_cast<std::size_t>(dim));
            for (int e = 0; e < dim; ++e) z[static_cast<std::size_t>(e)] = centers(y, e) + epsilon * u[static_cast<std::size_t>(e)];
            const Vec zn = l2_normalize(z);
            for (int e = 0; e < dim; ++e) batch.embeddings(row, e) = zn[static_cast<std::size_t>(e)];
            batch.labels[static_cast<std::size_t>(row)] = y;
        }
    }

    LossConfig cfg;
    cfg.temperature = tau;

    LabeledBatch augmented;
    augmented.embeddings = Mat(n + 1, dim);
    augmented.labels.resize(static_cast<std::size_t>(n) + 1);
    for (int i = 0; i < n; ++i) {
        for (int e = 0; e < dim; ++e) augmented.embeddings(i, e) = batch.embeddings(i, e);
        augmented.labels[static_cast<std::size_t>(i)] = batch.labels[static_cast<std::size_t>(i)];
    }

    double gap_sum = 0.0;
    for (int i = 0; i < n; ++i) {
        for (int e = 0; e < dim; ++e) augmented.embeddings(n, e) = batch.embeddings(i, e);
        augmented.labels[static_cast<std::size_t>(n)] = batch.labels[static_cast<std::size_t>(i)];

        const AnchorGradient sup = supcon_anchor_gradient(augmented, cfg, n);
        const AnchorGradient proto = protoclr_anchor_gradient(augmented, cfg, n);

        double sq = 0.0;
        for (int e = 0; e < dim; ++e) {
            const double delta =
                sup.negative_term[static_cast<std::size_t>(e)] - proto.negative_term[static_cast<std::size_t>(e)];
            sq += delta * delta;
        }
        gap_sum += std::sqrt(sq);
    }

    ConvergenceProbeReport report;
    report.mean_negative_term_gap = gap_sum / n;
    report.anchors = n;
    report.epsilon = epsilon;
    report.tau = tau;
    return report;
}

} // namespace protoclr
