#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "protoclr/core.hpp"
#include "protoclr/data.hpp"

namespace protoclr {

// Index partition of a dataset: k support examples per class, everything
// else is the query set.
struct Episode {
    int k = 0;
    std::vector<int> classes;               // ascending class ids
    std::vector<std::vector<int>> support;  // k indices per class, aligned with `classes`
    std::vector<int> query;                 // ascending indices of the remainder
};

struct EvalConfig {
    int k = 1;
    int num_runs = 10;
    std::uint64_t base_seed = 0;

    void validate() const {
        require(k >= 1, Errc::invalid_argument, "EvalConfig: k must be >= 1");
        require(num_runs >= 1, Errc::invalid_argument, "EvalConfig: num_runs must be >= 1");
    }
};

struct EvalReport {
    std::vector<double> run_accuracies; // percent
    double mean = 0.0;
    double stddev = 0.0; // sample standard deviation
    std::vector<int> classes;
    std::vector<int> support_sizes;      // per class, = k
    std::vector<std::uint64_t> run_seeds;
};

// Uniform without-replacement draw of k support examples per class. Every
// class needs at least k+1 examples so the query set is never empty for it.
inline Episode sample_episode(const EmbeddingSet& set, int k, RngStream& rng) {
    set.validate();
    require(k >= 1, Errc::invalid_argument, "sample_episode: k must be >= 1");

    std::map<int, std::vector<int>> by_class;
    for (int i = 0; i < set.rows(); ++i) by_class[set.labels[static_cast<std::size_t>(i)]].push_back(i);
    require(!by_class.empty(), Errc::empty_batch, "sample_episode: empty dataset");

    Episode ep;
    ep.k = k;
    std::vector<bool> in_support(static_cast<std::size_t>(set.rows()), false);
    for (auto& [label, members] : by_class) {
        require(static_cast<int>(members.size()) >= k + 1, Errc::class_too_small,
                "sample_episode: class " + std::to_string(label) + " has " +
                    std::to_string(members.size()) + " examples, needs " + std::to_string(k + 1));
        // partial Fisher-Yates: the first k slots are the support draw
        for (int j = 0; j < k; ++j) {
            const auto pick = j + static_cast<int>(rng.next_below(members.size() - static_cast<std::size_t>(j)));
            std::swap(members[static_cast<std::size_t>(j)], members[static_cast<std::size_t>(pick)]);
        }
        std::vector<int> chosen(members.begin(), members.begin() + k);
        std::sort(chosen.begin(), chosen.end());
        for (int idx : chosen) in_support[static_cast<std::size_t>(idx)] = true;
        ep.classes.push_back(label);
        ep.support.push_back(std::move(chosen));
    }
    for (int i = 0; i < set.rows(); ++i)
        if (!in_support[static_cast<std::size_t>(i)]) ep.query.push_back(i);
    return ep;
}

// Nearest-centroid classification: class prototypes are support means; the
// support mean of everything is subtracted from prototypes and queries, both
// are L2-normalized, and each query takes the class of the closest prototype
// (ties to the smallest class id).
inline std::vector<int> simpleshot_classify(const Mat& support, const std::vector<int>& support_labels,
                                            const Mat& queries) {
    require(support.rows() >= 1, Errc::empty_support, "simpleshot_classify: empty support set");
    require(static_cast<int>(support_labels.size()) == support.rows(), Errc::shape_mismatch,
            "simpleshot_classify: support labels length mismatch");
    require(queries.cols() == support.cols(), Errc::dim_mismatch,
            "simpleshot_classify: query dimension mismatch");

    const int d = support.cols();

    std::map<int, std::pair<Vec, int>> sums; // class -> (sum, count)
    for (int i = 0; i < support.rows(); ++i) {
        auto& [sum, count] = sums[support_labels[static_cast<std::size_t>(i)]];
        if (sum.empty()) sum.assign(static_cast<std::size_t>(d), 0.0);
        const auto row = support.row(i);
        for (int c = 0; c < d; ++c) sum[static_cast<std::size_t>(c)] += row[c];
        ++count;
    }

    Vec mean(static_cast<std::size_t>(d), 0.0);
    for (int i = 0; i < support.rows(); ++i) {
        const auto row = support.row(i);
        for (int c = 0; c < d; ++c) mean[static_cast<std::size_t>(c)] += row[c];
    }
    for (double& v : mean) v /= support.rows();

    std::vector<int> classes;
    std::vector<Vec> prototypes;
    for (auto& [label, sum_count] : sums) {
        Vec proto(static_cast<std::size_t>(d));
        for (int c = 0; c < d; ++c)
            proto[static_cast<std::size_t>(c)] =
                sum_count.first[static_cast<std::size_t>(c)] / sum_count.second - mean[static_cast<std::size_t>(c)];
        prototypes.push_back(l2_normalize(proto));
        classes.push_back(label);
    }

    std::vector<int> predictions(static_cast<std::size_t>(queries.rows()));
    Vec shifted(static_cast<std::size_t>(d));
    for (int q = 0; q < queries.rows(); ++q) {
        const auto row = queries.row(q);
        for (int c = 0; c < d; ++c) shifted[static_cast<std::size_t>(c)] = row[c] - mean[static_cast<std::size_t>(c)];
        const Vec qn = l2_normalize(shifted);
        int best = classes[0];
        double best_dist = HUGE_VAL;
        for (std::size_t p = 0; p < prototypes.size(); ++p) {
            double dist = 0.0;
            for (int c = 0; c < d; ++c) {
                const double delta = qn[static_cast<std::size_t>(c)] - prototypes[p][static_cast<std::size_t>(c)];
                dist += delta * delta;
            }
            if (dist < best_dist) { // strict: ties keep the smaller class id
                best_dist = dist;
                best = classes[p];
            }
        }
        predictions[static_cast<std::size_t>(q)] = best;
    }
    return predictions;
}

// Repeated episodic evaluation with per-run substreams of the base seed.
inline EvalReport evaluate(const EmbeddingSet& set, const EvalConfig& cfg) {
    cfg.validate();
    set.validate();

    EvalReport report;
    RngStream root(cfg.base_seed);
    for (int run = 0; run < cfg.num_runs; ++run) {
        RngStream run_rng = root.substream(static_cast<std::uint64_t>(run));
        report.run_seeds.push_back(run_rng.seed());
        const Episode ep = sample_episode(set, cfg.k, run_rng);

        if (run == 0) {
            report.classes = ep.classes;
            report.support_sizes.assign(ep.classes.size(), cfg.k);
        }

        int support_rows = 0;
        for (const auto& s : ep.support) support_rows += static_cast<int>(s.size());
        Mat support(support_rows, set.dim());
        std::vector<int> support_labels(static_cast<std::size_t>(support_rows));
        int r = 0;
        for (std::size_t cls = 0; cls < ep.support.size(); ++cls) {
            for (int idx : ep.support[cls]) {
                for (int c = 0; c < set.dim(); ++c) support(r, c) = set.features(idx, c);
                support_labels[static_cast<std::size_t>(r)] = ep.classes[cls];
                ++r;
            }
        }
        Mat queries(static_cast<int>(ep.query.size()), set.dim());
        for (std::size_t q = 0; q < ep.query.size(); ++q)
            for (int c = 0; c < set.dim(); ++c) queries(static_cast<int>(q), c) = set.features(ep.query[q], c);

        const auto predictions = simpleshot_classify(support, support_labels, queries);
        int correct = 0;
        for (std::size_t q = 0; q < ep.query.size(); ++q)
            if (predictions[q] == set.labels[static_cast<std::size_t>(ep.query[q])]) ++correct;
        report.run_accuracies.push_back(100.0 * correct / static_cast<double>(ep.query.size()));
    }

    double sum = 0.0;
    for (double a : report.run_accuracies) sum += a;
    report.mean = sum / cfg.num_runs;
    if (cfg.num_runs > 1) {
        double ss = 0.0;
        for (double a : report.run_accuracies) ss += (a - report.mean) * (a - report.mean);
        report.stddev = std::sqrt(ss / (cfg.num_runs - 1));
    }
    return report;
}

// Chance-level top-1 accuracy in percent for balanced classes.
inline double random_baseline(int num_classes) {
    require(num_classes >= 1, Errc::invalid_argument, "random_baseline: num_classes must be >= 1");
    return 100.0 / num_classes;
}

} // namespace protoclr
