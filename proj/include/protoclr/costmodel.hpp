#pragma once

#include <set>
#include <string>

#include "protoclr/losses.hpp"

namespace protoclr {

struct CostParams {
    long long batch_rows = 0;       // n, views included
    long long distinct_classes = 0; // c
    long long dim = 0;              // d
    long long batches = 1;

    void validate() const {
        require(batch_rows >= 1, Errc::invalid_argument, "CostParams: n must be >= 1");
        require(distinct_classes >= 1 && distinct_classes <= batch_rows, Errc::invalid_argument,
                "CostParams: need 1 <= c <= n");
        require(dim >= 1, Errc::invalid_argument, "CostParams: d must be >= 1");
        require(batches >= 1, Errc::invalid_argument, "CostParams: batches must be >= 1");
    }
};

struct CostReport {
    CostParams params;
    long long supcon_macs = 0;              // batches * n * (n-1) * d
    long long protoclr_similarity_macs = 0; // batches * n * c * d
    long long protoclr_centroid_macs = 0;   // batches * n * d
    long long protoclr_macs = 0;
    double ratio = 0.0; // supcon / protoclr
    long long instrumented_supcon_macs = -1;
    long long instrumented_protoclr_macs = -1;
};

// Similarity-computation MACs only: all ordered anchor pairs for the
// pairwise loss, anchor-to-centroid dots plus centroid accumulation for the
// prototype loss.
inline CostReport closed_form(const CostParams& params) {
    params.validate();
    CostReport report;
    report.params = params;
    report.supcon_macs = params.batches * params.batch_rows * (params.batch_rows - 1) * params.dim;
    report.protoclr_similarity_macs =
        params.batches * params.batch_rows * params.distinct_classes * params.dim;
    report.protoclr_centroid_macs = params.batches * params.batch_rows * params.dim;
    report.protoclr_macs = report.protoclr_similarity_macs + report.protoclr_centroid_macs;
    report.ratio = static_cast<double>(report.supcon_macs) / static_cast<double>(report.protoclr_macs);
    return report;
}

// Runs both losses on the batch and checks their instrumented counters
// against the closed forms, with c taken from the batch's distinct labels.
inline CostReport verify_instrumented(const LabeledBatch& batch, const LossConfig& cfg) {
    batch.validate();
    std::set<int> distinct(batch.labels.begin(), batch.labels.end());

    CostParams params;
    params.batch_rows = batch.rows();
    params.distinct_classes = static_cast<long long>(distinct.size());
    params.dim = batch.dim();
    params.batches = 1;

    CostReport report = closed_form(params);
    report.instrumented_supcon_macs = supcon_forward(batch, cfg).macs;
    report.instrumented_protoclr_macs = protoclr_forward(batch, cfg).macs;

    require(report.instrumented_supcon_macs == report.supcon_macs, Errc::counter_mismatch,
            "supcon macs: instrumented " + std::to_string(report.instrumented_supcon_macs) +
                " != closed form " + std::to_string(report.supcon_macs));
    require(report.instrumented_protoclr_macs == report.protoclr_macs, Errc::counter_mismatch,
            "protoclr macs: instrumented " + std::to_string(report.instrumented_protoclr_macs) +
                " != closed form " + std::to_string(report.protoclr_macs));
    return report;
}

} // namespace protoclr
