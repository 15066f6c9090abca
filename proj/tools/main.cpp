// protoclr: command-line front end for the contrastive-representation
// engine. Subcommands: gradcheck, synth, train, eval, probe, cost.
//
// Exit codes: 0 success, 2 check/probe failure, 64 usage, 65 validation,
// 66 unreadable input, 73 write failure.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "protoclr/protoclr.hpp"
#include "report.hpp"

using namespace protoclr;

namespace {

constexpr int kOk = 0;
constexpr int kCheckFailed = 2;
constexpr int kUsage = 64;
constexpr int kValidation = 65;
constexpr int kUnreadable = 66;
constexpr int kWriteFailure = 73;

// --- shared helpers ---------------------------------------------------------

Mat fd_gradient(const std::function<double(const Mat&)>& f, Mat x, double h = 1e-5) {
    Mat grad(x.rows(), x.cols());
    for (int r = 0; r < x.rows(); ++r) {
        for (int c = 0; c < x.cols(); ++c) {
            const double saved = x(r, c);
            x(r, c) = saved + h;
            const double up = f(x);
            x(r, c) = saved - h;
            const double down = f(x);
            x(r, c) = saved;
            grad(r, c) = (up - down) / (2.0 * h);
        }
    }
    return grad;
}

double max_rel_err(const Mat& a, const Mat& b) {
    double scale = 1.0, worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        scale = std::max({scale, std::fabs(a.data()[i]), std::fabs(b.data()[i])});
        worst = std::max(worst, std::fabs(a.data()[i] - b.data()[i]));
    }
    return worst / scale;
}

double max_rel_err_row(const Vec& a, std::span<const double> b) {
    double scale = 1.0, worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        scale = std::max({scale, std::fabs(a[i]), std::fabs(b[i])});
        worst = std::max(worst, std::fabs(a[i] - b[i]));
    }
    return worst / scale;
}

// Random unit-row batch whose first min(n, classes) labels cover every class
// before shuffling, so the distinct-class count is deterministic.
LabeledBatch gradcheck_batch(int n, int d, int classes, bool paired_labels, RngStream& rng) {
    LabeledBatch batch;
    batch.embeddings = Mat(n, d);
    batch.labels.resize((std::size_t)n);
    for (int i = 0; i < n; ++i) {
        Vec v((std::size_t)d);
        for (double& x : v) x = rng.next_normal();
        const Vec u = l2_normalize(v);
        for (int c = 0; c < d; ++c) batch.embeddings(i, c) = u[(std::size_t)c];
    }
    if (paired_labels) {
        for (int j = 0; 2 * j + 1 < n; ++j) {
            const int y = j % classes;
            batch.labels[(std::size_t)(2 * j)] = y;
            batch.labels[(std::size_t)(2 * j + 1)] = y;
        }
    } else {
        for (int i = 0; i < n; ++i)
            batch.labels[(std::size_t)i] =
                i < classes ? i : (int)rng.next_below((std::uint64_t)classes);
        rng.shuffle(batch.labels);
    }
    return batch;
}

// Anchor i's own loss term of the pairwise contrastive loss (with the
// 1/|P(i)| factor), evaluated directly.
double supcon_anchor_term_value(const Mat& z, const std::vector<int>& labels, int i, double tau) {
    const int n = z.rows();
    std::vector<int> positives;
    for (int a = 0; a < n; ++a)
        if (a != i && labels[(std::size_t)a] == labels[(std::size_t)i]) positives.push_back(a);
    Vec logits;
    for (int a = 0; a < n; ++a) {
        if (a == i) continue;
        logits.push_back(dot(z.row(i), z.row(a)) / tau);
    }
    const double lse = log_sum_exp(logits);
    double term = 0.0;
    for (int p : positives) {
        const int slot = p < i ? p : p - 1;
        term += (lse - logits[(std::size_t)slot]) / (double)positives.size();
    }
    return term;
}

// Anchor i's prototype-loss term with externally frozen centroids.
double protoclr_anchor_term_value(const Mat& z, int i, const Mat& centroids, int own_class_row,
                                  double tau) {
    Vec logits((std::size_t)centroids.rows());
    for (int y = 0; y < centroids.rows(); ++y)
        logits[(std::size_t)y] = dot(z.row(i), centroids.row(y)) / tau;
    return log_sum_exp(logits) - logits[(std::size_t)own_class_row];
}

int map_validation_error(const Error& e) {
    switch (e.code()) {
        case Errc::malformed_header:
        case Errc::truncated_payload:
        case Errc::inconsistent_row_length:
        case Errc::io_failure:
            return kUnreadable;
        default:
            return kValidation;
    }
}

// --- gradcheck ----------------------------------------------------------------

struct GradcheckOpts {
    std::string loss = "supcon";
    int n = 32, d = 8, classes = 4;
    double tau = 0.5;
    int trials = 20;
    std::uint64_t seed = 7;
    std::string singleton_policy = "skip";
    std::string anchor_weight = "uniform";
};

int run_gradcheck(const GradcheckOpts& opt) {
    cli::Report report("gradcheck");
    report.config("loss", opt.loss);
    report.config("n", opt.n);
    report.config("d", opt.d);
    report.config("classes", opt.classes);
    report.config("tau", opt.tau);
    report.config("trials", opt.trials);
    report.config("seed", opt.seed);
    report.config("singleton_policy", opt.singleton_policy);
    report.config("anchor_weight", opt.anchor_weight);

    if (opt.loss == "infonce" && (opt.n % 2 != 0 || opt.n < 4)) {
        std::fprintf(stderr, "gradcheck: --loss infonce needs an even --n >= 4\n");
        return kValidation;
    }

    LossConfig cfg;
    cfg.temperature = opt.tau;
    cfg.anchor_weight =
        opt.anchor_weight == "inverse-positives" ? AnchorWeight::inverse_positives : AnchorWeight::uniform;
    cfg.singleton_policy =
        opt.singleton_policy == "error" ? SingletonPolicy::error : SingletonPolicy::skip_anchor;
    cfg.prototype_mode = PrototypeMode::full;

    constexpr double kThreshold = 1e-6;
    double worst_overall = 0.0;
    bool pass = true;

    for (int trial = 0; trial < opt.trials; ++trial) {
        RngStream rng = RngStream(opt.seed).substream((std::uint64_t)trial);
        double worst = 0.0;
        try {
            if (opt.loss == "ce") {
                Mat logits(opt.n, opt.classes);
                for (std::size_t i = 0; i < logits.size(); ++i)
                    logits.data()[i] = rng.next_normal(0.0, 2.0);
                std::vector<int> labels((std::size_t)opt.n);
                for (int i = 0; i < opt.n; ++i)
                    labels[(std::size_t)i] =
                        i < opt.classes ? i % opt.classes : (int)rng.next_below((std::uint64_t)opt.classes);
                const auto result = softmax_ce_forward(logits, labels);
                const Mat fd = fd_gradient(
                    [&](const Mat& l) { return softmax_ce_forward(l, labels).value; }, logits);
                worst = max_rel_err(result.grad, fd);
            } else {
                LabeledBatch batch =
                    gradcheck_batch(opt.n, opt.d, opt.classes, opt.loss == "infonce", rng);

                if (opt.loss == "supcon") {
                    const auto result = supcon_forward(batch, cfg);
                    const Mat fd = fd_gradient(
                        [&](const Mat& z) {
                            LabeledBatch b{z, batch.labels, std::nullopt};
                            return supcon_forward(b, cfg).value;
                        },
                        batch.embeddings);
                    worst = max_rel_err(result.grad, fd);

                    for (const int anchor : {0, opt.n / 2, opt.n - 1}) {
                        int positives = 0;
                        for (int a = 0; a < opt.n; ++a)
                            if (a != anchor && batch.labels[(std::size_t)a] == batch.labels[(std::size_t)anchor])
                                ++positives;
                        if (positives == 0) continue;
                        const auto g = supcon_anchor_gradient(batch, cfg, anchor);
                        const Mat fd_anchor = fd_gradient(
                            [&](const Mat& z) {
                                return supcon_anchor_term_value(z, batch.labels, anchor, opt.tau);
                            },
                            batch.embeddings);
                        Vec negated((std::size_t)opt.d);
                        for (int c = 0; c < opt.d; ++c) negated[(std::size_t)c] = -g.ascent_form[(std::size_t)c];
                        worst = std::max(worst, max_rel_err_row(negated, fd_anchor.row(anchor)));
                    }
                } else if (opt.loss == "protoclr") {
                    const auto result = protoclr_forward(batch, cfg);
                    const Mat fd = fd_gradient(
                        [&](const Mat& z) {
                            LabeledBatch b{z, batch.labels, std::nullopt};
                            return protoclr_forward(b, cfg).value;
                        },
                        batch.embeddings);
                    worst = max_rel_err(result.grad, fd);

                    const Prototypes frozen = class_centroids(batch);
                    for (const int anchor : {0, opt.n / 2, opt.n - 1}) {
                        const int own = frozen.class_index(batch.labels[(std::size_t)anchor]);
                        const auto g = protoclr_anchor_gradient(batch, cfg, anchor);
                        const Mat fd_anchor = fd_gradient(
                            [&](const Mat& z) {
                                return protoclr_anchor_term_value(z, anchor, frozen.centroids, own,
                                                                  opt.tau);
                            },
                            batch.embeddings);
                        Vec negated((std::size_t)opt.d);
                        for (int c = 0; c < opt.d; ++c) negated[(std::size_t)c] = -g.ascent_form[(std::size_t)c];
                        worst = std::max(worst, max_rel_err_row(negated, fd_anchor.row(anchor)));
                    }
                } else { // infonce
                    const auto result = infonce_forward(batch, cfg);
                    const Mat fd = fd_gradient(
                        [&](const Mat& z) {
                            LabeledBatch b{z, batch.labels, std::nullopt};
                            return infonce_forward(b, cfg).value;
                        },
                        batch.embeddings);
                    worst = max_rel_err(result.grad, fd);
                }
            }
        } catch (const Error& e) {
            report.linef("trial %d: %s", trial, e.what());
            report.trailer("trial" + std::to_string(trial) + ".error", e.what());
            report.print(false);
            return kCheckFailed;
        }

        worst_overall = std::max(worst_overall, worst);
        pass = pass && worst <= kThreshold;
        report.linef("trial %2d: worst relative error %.3e %s", trial, worst,
                     worst <= kThreshold ? "ok" : "FAIL");
        report.trailer("trial" + std::to_string(trial) + ".worst_rel_err", worst);
    }

    report.linef("worst over %d trials: %.3e (threshold %.0e)", opt.trials, worst_overall, kThreshold);
    report.trailer("worst_rel_err", worst_overall);
    report.trailer("threshold", kThreshold);
    report.print(pass);
    return pass ? kOk : kCheckFailed;
}

// --- synth ----------------------------------------------------------------------

struct SynthOpts {
    std::string spec_path;
    std::string out_path;
    // overrides; -1 / NaN mean "not set"
    int classes = -1, domains = -1, dim = -1, per = -1;
    double separation = -1.0, offset = -1.0, noise = -1.0;
    int rotate = -1;
    long long seed = -1;
};

SyntheticSpec parse_synth_spec_file(const std::string& path) {
    const std::string text = detail::read_file_bytes(path);
    SyntheticSpec spec;
    std::size_t pos = 0;
    int line_no = 0;
    while (pos < text.size()) {
        std::size_t eol = text.find('\n', pos);
        if (eol == std::string::npos) eol = text.size();
        std::string line = text.substr(pos, eol - pos);
        pos = eol + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        while (!line.empty() && (line.back() == ' ' || line.back() == '\t')) line.pop_back();
        std::size_t start = 0;
        while (start < line.size() && (line[start] == ' ' || line[start] == '\t')) ++start;
        line = line.substr(start);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        require(eq != std::string::npos, Errc::invalid_argument,
                "spec file line " + std::to_string(line_no) + ": expected key=value");
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        try {
            if (key == "num_classes") spec.num_classes = std::stoi(value);
            else if (key == "num_domains") spec.num_domains = std::stoi(value);
            else if (key == "dim") spec.dim = std::stoi(value);
            else if (key == "samples_per_class_domain") spec.samples_per_class_domain = std::stoi(value);
            else if (key == "class_separation") spec.class_separation = std::stod(value);
            else if (key == "domain_offset_scale") spec.domain_offset_scale = std::stod(value);
            else if (key == "domain_transform") spec.domain_transform = value == "1" || value == "true";
            else if (key == "noise_sigma") spec.noise_sigma = std::stod(value);
            else if (key == "seed") spec.seed = (std::uint64_t)std::stoull(value);
            else
                fail(Errc::invalid_argument,
                     "spec file line " + std::to_string(line_no) + ": unknown key '" + key + "'");
        } catch (const Error&) {
            throw;
        } catch (const std::exception&) {
            fail(Errc::invalid_argument,
                 "spec file line " + std::to_string(line_no) + ": unparsable value for '" + key + "'");
        }
    }
    return spec;
}

int run_synth(const SynthOpts& opt) {
    cli::Report report("synth");

    SyntheticSpec spec;
    if (!opt.spec_path.empty()) {
        try {
            spec = parse_synth_spec_file(opt.spec_path);
        } catch (const Error& e) {
            std::fprintf(stderr, "synth: %s\n", e.what());
            return e.code() == Errc::io_failure ? kUnreadable : kValidation;
        }
        report.input_digest("spec", opt.spec_path);
    }
    if (opt.classes >= 0) spec.num_classes = opt.classes;
    if (opt.domains >= 0) spec.num_domains = opt.domains;
    if (opt.dim >= 0) spec.dim = opt.dim;
    if (opt.per >= 0) spec.samples_per_class_domain = opt.per;
    if (opt.separation >= 0) spec.class_separation = opt.separation;
    if (opt.offset >= 0) spec.domain_offset_scale = opt.offset;
    if (opt.noise >= 0) spec.noise_sigma = opt.noise;
    if (opt.rotate >= 0) spec.domain_transform = opt.rotate != 0;
    if (opt.seed >= 0) spec.seed = (std::uint64_t)opt.seed;

    report.config("num_classes", spec.num_classes);
    report.config("num_domains", spec.num_domains);
    report.config("dim", spec.dim);
    report.config("samples_per_class_domain", spec.samples_per_class_domain);
    report.config("class_separation", spec.class_separation);
    report.config("domain_offset_scale", spec.domain_offset_scale);
    report.config("domain_transform", spec.domain_transform ? 1 : 0);
    report.config("noise_sigma", spec.noise_sigma);
    report.config("seed", spec.seed);
    report.config("out", opt.out_path);

    EmbeddingSet set;
    try {
        spec.validate();
        set = generate(spec);
    } catch (const Error& e) {
        std::fprintf(stderr, "synth: %s\n", e.what());
        return kValidation;
    }

    std::string bytes;
    try {
        const bool csv = opt.out_path.size() >= 4 &&
                         opt.out_path.compare(opt.out_path.size() - 4, 4, ".csv") == 0;
        bytes = csv ? encode_csv(set) : encode_emb1(set);
        detail::write_file_bytes(opt.out_path, bytes);
    } catch (const Error& e) {
        std::fprintf(stderr, "synth: %s\n", e.what());
        return kWriteFailure;
    }

    report.linef("wrote %s: n=%d d=%d classes=%d domains=%d", opt.out_path.c_str(), set.rows(),
                 set.dim(), spec.num_classes, spec.num_domains);
    report.trailer("n", set.rows());
    report.trailer("d", set.dim());
    report.trailer("classes", spec.num_classes);
    report.trailer("domains", spec.num_domains);
    report.trailer("output_digest", cli::hex64(cli::fnv1a64(bytes)));
    report.print(true);
    return kOk;
}

// --- train ----------------------------------------------------------------------

struct TrainOpts {
    std::string data_path;
    std::string out_path;
    std::string loss = "protoclr";
    int epochs = 50;
    double lr = -1.0; // per-loss default when unset
    double wd = 1e-6;
    int batch = 64;
    std::uint64_t seed = 0;
    double tau = 0.5;
    std::string hidden = "64,64";
    int embed_dim = 32;
    std::string optimizer = "adamw";
    std::string anchor_weight = "uniform";
    std::string prototype_mode = "full";
};

std::vector<int> parse_int_list(const std::string& text) {
    std::vector<int> out;
    std::size_t start = 0;
    while (start <= text.size()) {
        const std::size_t comma = text.find(',', start);
        const std::string field =
            text.substr(start, comma == std::string::npos ? comma : comma - start);
        if (!field.empty()) out.push_back(std::stoi(field));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

int run_train(const TrainOpts& opt) {
    cli::Report report("train");

    EmbeddingSet set;
    try {
        set = load_embedding_set(opt.data_path);
    } catch (const Error& e) {
        std::fprintf(stderr, "train: %s\n", e.what());
        return kUnreadable;
    }
    report.input_digest("data", opt.data_path);

    TrainConfig cfg;
    cfg.loss = opt.loss == "supcon"    ? LossKind::supcon
               : opt.loss == "infonce" ? LossKind::infonce
               : opt.loss == "ce"      ? LossKind::ce
                                       : LossKind::protoclr;
    const bool contrastive = cfg.loss != LossKind::ce;
    cfg.learning_rate = opt.lr >= 0 ? opt.lr
                        : (cfg.loss == LossKind::ce || cfg.loss == LossKind::protoclr) ? 5e-4
                                                                                       : 1e-4;
    cfg.weight_decay = opt.wd;
    cfg.batch_size = opt.batch;
    cfg.epochs = opt.epochs;
    cfg.seed = opt.seed;
    cfg.temperature = opt.tau;
    cfg.optimizer = opt.optimizer == "sgd" ? OptimizerKind::sgd : OptimizerKind::adamw;
    cfg.anchor_weight = opt.anchor_weight == "inverse-positives" ? AnchorWeight::inverse_positives
                                                                 : AnchorWeight::uniform;
    cfg.prototype_mode =
        opt.prototype_mode == "detached" ? PrototypeMode::detached : PrototypeMode::full;

    int num_classes = 0;
    for (int y : set.labels) num_classes = std::max(num_classes, y + 1);

    MlpSpec spec;
    spec.layer_dims.push_back(set.dim());
    for (int h : parse_int_list(opt.hidden)) spec.layer_dims.push_back(h);
    spec.layer_dims.push_back(cfg.loss == LossKind::ce ? num_classes : opt.embed_dim);
    spec.final_l2_normalize = contrastive;

    report.config("loss", opt.loss);
    report.config("epochs", cfg.epochs);
    report.config("lr", cfg.learning_rate);
    report.config("wd", cfg.weight_decay);
    report.config("batch", cfg.batch_size);
    report.config("tau", cfg.temperature);
    report.config("seed", cfg.seed);
    report.config("optimizer", opt.optimizer);
    report.config("anchor_weight", opt.anchor_weight);
    report.config("prototype_mode", opt.prototype_mode);
    std::string dims;
    for (std::size_t i = 0; i < spec.layer_dims.size(); ++i)
        dims += (i ? "," : "") + std::to_string(spec.layer_dims[i]);
    report.config("layer_dims", dims);
    report.config("out", opt.out_path);

    if (contrastive && cfg.batch_size % 2 != 0) {
        std::fprintf(stderr, "train: contrastive losses need an even --batch\n");
        return kValidation;
    }

    Params params;
    TrainHistory history;
    try {
        spec.validate();
        cfg.validate();
        RngStream rng(cfg.seed);
        auto [p, h] = fit(spec, set.to_batch(), cfg, rng);
        params = std::move(p);
        history = std::move(h);
    } catch (const Error& e) {
        std::fprintf(stderr, "train: %s\n", e.what());
        return map_validation_error(e);
    }

    try {
        save_checkpoint(opt.out_path, spec, params);
    } catch (const Error& e) {
        std::fprintf(stderr, "train: %s\n", e.what());
        return kWriteFailure;
    }

    for (std::size_t e = 0; e < history.epoch_loss.size(); ++e)
        report.linef("epoch %3zu/%d: loss %.6f", e + 1, cfg.epochs, history.epoch_loss[e]);
    report.linef("checkpoint written to %s", opt.out_path.c_str());
    for (std::size_t e = 0; e < history.epoch_loss.size(); ++e)
        report.trailer("loss.epoch" + std::to_string(e), history.epoch_loss[e]);
    report.trailer("final_loss", history.epoch_loss.back());
    report.trailer("checkpoint_digest", cli::file_digest(opt.out_path));
    report.print(true);
    return kOk;
}

// --- eval -----------------------------------------------------------------------

struct EvalOpts {
    std::string data_path;
    std::string checkpoint;
    int k = 1;
    int runs = 10;
    std::uint64_t seed = 0;
    int domain = -1;      // evaluate only rows of this domain id
    double holdout = 0.0; // evaluate on a seeded random fraction
};

int run_eval(const EvalOpts& opt) {
    cli::Report report("eval");

    EmbeddingSet set;
    try {
        set = load_embedding_set(opt.data_path);
    } catch (const Error& e) {
        std::fprintf(stderr, "eval: %s\n", e.what());
        return kUnreadable;
    }
    report.input_digest("data", opt.data_path);

    report.config("k", opt.k);
    report.config("runs", opt.runs);
    report.config("seed", opt.seed);
    report.config("domain", opt.domain);
    report.config("holdout", opt.holdout);

    try {
        if (opt.domain >= 0) {
            require(set.has_domains(), Errc::invalid_argument, "--domain given but data has no domain ids");
            EmbeddingSet filtered;
            std::vector<int> keep;
            for (int i = 0; i < set.rows(); ++i)
                if (set.domains[(std::size_t)i] == opt.domain) keep.push_back(i);
            require(!keep.empty(), Errc::invalid_argument,
                    "no rows with domain " + std::to_string(opt.domain));
            filtered.features = Mat((int)keep.size(), set.dim());
            for (std::size_t r = 0; r < keep.size(); ++r) {
                for (int c = 0; c < set.dim(); ++c) filtered.features((int)r, c) = set.features(keep[r], c);
                filtered.labels.push_back(set.labels[(std::size_t)keep[r]]);
                filtered.domains.push_back(set.domains[(std::size_t)keep[r]]);
            }
            filtered.class_names = set.class_names;
            set = std::move(filtered);
        }

        if (opt.holdout > 0.0) {
            require(opt.holdout < 1.0, Errc::invalid_argument, "--holdout must be in (0, 1)");
            RngStream rng = RngStream(opt.seed).substream(0xFFFFFFFFull);
            std::vector<int> order((std::size_t)set.rows());
            for (int i = 0; i < set.rows(); ++i) order[(std::size_t)i] = i;
            rng.shuffle(order);
            const int keep_count = std::max(1, (int)(opt.holdout * set.rows()));
            order.resize((std::size_t)keep_count);
            std::sort(order.begin(), order.end());
            EmbeddingSet subset;
            subset.features = Mat(keep_count, set.dim());
            for (std::size_t r = 0; r < order.size(); ++r) {
                for (int c = 0; c < set.dim(); ++c) subset.features((int)r, c) = set.features(order[r], c);
                subset.labels.push_back(set.labels[(std::size_t)order[r]]);
                if (set.has_domains()) subset.domains.push_back(set.domains[(std::size_t)order[r]]);
            }
            subset.class_names = set.class_names;
            set = std::move(subset);
        }

        if (!opt.checkpoint.empty()) {
            MlpSpec spec;
            Params params;
            try {
                auto [s, p] = load_checkpoint(opt.checkpoint);
                spec = std::move(s);
                params = std::move(p);
            } catch (const Error& e) {
                std::fprintf(stderr, "eval: %s\n", e.what());
                return kUnreadable;
            }
            report.input_digest("checkpoint", opt.checkpoint);
            require(spec.input_dim() == set.dim(), Errc::shape_mismatch,
                    "checkpoint expects input dim " + std::to_string(spec.input_dim()) +
                        ", data has " + std::to_string(set.dim()));
            const auto [embeddings, cache] = mlp_forward(spec, params, set.features);
            set.features = embeddings;
        }

        EvalConfig cfg;
        cfg.k = opt.k;
        cfg.num_runs = opt.runs;
        cfg.base_seed = opt.seed;
        const EvalReport result = evaluate(set, cfg);

        for (std::size_t r = 0; r < result.run_accuracies.size(); ++r)
            report.linef("run %2zu: top-1 accuracy %.4f%%", r, result.run_accuracies[r]);
        report.linef("mean +/- std: %s +/- %s (%d classes, k=%d)",
                     cli::format_mean(result.mean).c_str(), cli::format_std(result.stddev).c_str(),
                     (int)result.classes.size(), opt.k);

        report.trailer("n", set.rows());
        report.trailer("classes", (int)result.classes.size());
        for (std::size_t r = 0; r < result.run_accuracies.size(); ++r)
            report.trailer("acc.run" + std::to_string(r), result.run_accuracies[r]);
        report.trailer("acc.mean", result.mean);
        report.trailer("acc.std", result.stddev);
        for (std::size_t r = 0; r < result.run_seeds.size(); ++r)
            report.trailer("seed.run" + std::to_string(r), result.run_seeds[r]);
        report.print(true);
        return kOk;
    } catch (const Error& e) {
        std::fprintf(stderr, "eval: %s\n", e.what());
        return map_validation_error(e);
    }
}

// --- probe ----------------------------------------------------------------------

struct ProbeOpts {
    std::string probe;
    int classes = 8, per = 8, dim = 16;
    double tau = 0.5;
    std::string eps = "0,0.001,0.01";
    std::string sizes = "2,8,32";
    int resamples = 10000;
    std::uint64_t seed = 0;
};

std::vector<double> parse_double_list(const std::string& text) {
    std::vector<double> out;
    std::size_t start = 0;
    while (start <= text.size()) {
        const std::size_t comma = text.find(',', start);
        const std::string field =
            text.substr(start, comma == std::string::npos ? comma : comma - start);
        if (!field.empty()) out.push_back(std::stod(field));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

int run_probe(const ProbeOpts& opt) {
    cli::Report report("probe");
    report.config("probe", opt.probe);
    report.config("seed", opt.seed);

    try {
        if (opt.probe == "convergence") {
            report.config("classes", opt.classes);
            report.config("per", opt.per);
            report.config("dim", opt.dim);
            report.config("tau", opt.tau);
            report.config("eps", opt.eps);

            std::vector<double> eps = parse_double_list(opt.eps);
            require(!eps.empty(), Errc::invalid_argument, "--eps list is empty");
            std::sort(eps.begin(), eps.end());

            std::vector<double> gaps;
            for (const double e : eps) {
                RngStream rng(opt.seed); // same stream per epsilon: common noise draws
                const auto probe_report =
                    convergence_equivalence_probe(opt.classes, opt.per, opt.dim, e, opt.tau, rng);
                gaps.push_back(probe_report.mean_negative_term_gap);
                report.linef("epsilon %.6g: mean negative-term gap %.6e", e,
                             probe_report.mean_negative_term_gap);
                report.trailer("gap.eps" + cli::format_full(e), probe_report.mean_negative_term_gap);
            }

            bool pass = true;
            std::vector<double> positive;
            for (std::size_t i = 0; i < eps.size(); ++i) {
                if (eps[i] == 0.0) {
                    pass = pass && gaps[i] <= 1e-9;
                    report.linef("zero-noise gap %.3e (must be <= 1e-9): %s", gaps[i],
                                 gaps[i] <= 1e-9 ? "ok" : "FAIL");
                } else {
                    positive.push_back(gaps[i]);
                }
            }
            for (std::size_t i = 1; i < positive.size(); ++i) {
                const bool increasing = positive[i] > positive[i - 1];
                pass = pass && increasing;
                if (!increasing) report.line("gap is not increasing with epsilon: FAIL");
            }
            if (positive.size() == 2) {
                const double ratio = positive[1] / positive[0];
                report.linef("gap ratio across the epsilon decade: %.3f (expected within [5, 20])", ratio);
                report.trailer("gap_ratio", ratio);
                pass = pass && ratio >= 5.0 && ratio <= 20.0;
            }
            report.print(pass);
            return pass ? kOk : kCheckFailed;
        }

        if (opt.probe == "variance") {
            report.config("dim", opt.dim);
            report.config("sizes", opt.sizes);
            report.config("resamples", opt.resamples);

            bool pass = true;
            for (const double size_d : parse_double_list(opt.sizes)) {
                const int size = (int)size_d;
                RngStream rng = RngStream(opt.seed).substream((std::uint64_t)size);
                const auto probe_report = variance_probe(opt.dim, size, opt.resamples, rng);
                const double rel =
                    std::fabs(probe_report.empirical_variance - probe_report.predicted_variance) /
                    probe_report.predicted_variance;
                const bool ok = rel <= 0.25;
                pass = pass && ok;
                report.linef("class size %2d: empirical %.6f predicted %.6f (rel dev %.3f) %s", size,
                             probe_report.empirical_variance, probe_report.predicted_variance, rel,
                             ok ? "ok" : "FAIL");
                report.trailer("empirical.n" + std::to_string(size), probe_report.empirical_variance);
                report.trailer("predicted.n" + std::to_string(size), probe_report.predicted_variance);
            }
            report.print(pass);
            return pass ? kOk : kCheckFailed;
        }

        std::fprintf(stderr, "probe: unknown probe '%s'\n", opt.probe.c_str());
        return kValidation;
    } catch (const Error& e) {
        std::fprintf(stderr, "probe: %s\n", e.what());
        return map_validation_error(e);
    }
}

// --- cost -----------------------------------------------------------------------

struct CostOpts {
    long long n = 512;
    long long classes = 180;
    long long d = 128;
    long long batches = 1;
    bool verify = false;
    std::uint64_t seed = 0;
};

int run_cost(const CostOpts& opt) {
    cli::Report report("cost");
    report.config("n", opt.n);
    report.config("classes", opt.classes);
    report.config("d", opt.d);
    report.config("batches", opt.batches);
    report.config("verify_instrumented", opt.verify ? 1 : 0);
    report.config("seed", opt.seed);

    try {
        const CostReport closed = closed_form({opt.n, opt.classes, opt.d, opt.batches});
        report.linef("pairwise similarity macs:   %lld", closed.supcon_macs);
        report.linef("prototype similarity macs:  %lld (+ %lld centroid accumulation)",
                     closed.protoclr_similarity_macs, closed.protoclr_centroid_macs);
        report.linef("prototype total macs:       %lld", closed.protoclr_macs);
        report.linef("pairwise / prototype ratio: %.4f", closed.ratio);
        report.trailer("supcon_macs", closed.supcon_macs);
        report.trailer("protoclr_similarity_macs", closed.protoclr_similarity_macs);
        report.trailer("protoclr_centroid_macs", closed.protoclr_centroid_macs);
        report.trailer("protoclr_macs", closed.protoclr_macs);
        report.trailer("ratio", closed.ratio);

        if (opt.verify) {
            require(opt.n <= 4096 && opt.d <= 1024, Errc::invalid_argument,
                    "--verify-instrumented is limited to n <= 4096, d <= 1024");
            RngStream rng(opt.seed);
            LabeledBatch batch;
            batch.embeddings = Mat((int)opt.n, (int)opt.d);
            batch.labels.resize((std::size_t)opt.n);
            for (int i = 0; i < opt.n; ++i) {
                Vec v((std::size_t)opt.d);
                for (double& x : v) x = rng.next_normal();
                const Vec u = l2_normalize(v);
                for (int c = 0; c < opt.d; ++c) batch.embeddings(i, c) = u[(std::size_t)c];
                batch.labels[(std::size_t)i] = (int)(i % opt.classes);
            }
            LossConfig cfg;
            const CostReport verified = verify_instrumented(batch, cfg);
            report.linef("instrumented pairwise macs:  %lld (matches closed form)",
                         verified.instrumented_supcon_macs);
            report.linef("instrumented prototype macs: %lld (matches closed form)",
                         verified.instrumented_protoclr_macs);
            report.trailer("instrumented_supcon_macs", verified.instrumented_supcon_macs);
            report.trailer("instrumented_protoclr_macs", verified.instrumented_protoclr_macs);
        }
        report.print(true);
        return kOk;
    } catch (const Error& e) {
        std::fprintf(stderr, "cost: %s\n", e.what());
        return e.code() == Errc::counter_mismatch ? kCheckFailed : kValidation;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"contrastive representation engine: losses, gradients, training, few-shot "
                 "evaluation, and similarity-cost accounting"};
    app.require_subcommand(1);

    GradcheckOpts grad_opts;
    auto* grad = app.add_subcommand("gradcheck", "finite-difference verification of loss gradients");
    grad->add_option("--loss", grad_opts.loss, "loss to check")
        ->required()
        ->check(CLI::IsMember({"supcon", "protoclr", "infonce", "ce"}));
    grad->add_option("--n", grad_opts.n, "batch rows")->check(CLI::Range(2, 4096));
    grad->add_option("--d", grad_opts.d, "embedding dim")->check(CLI::Range(1, 1024));
    grad->add_option("--classes", grad_opts.classes, "distinct classes")->check(CLI::Range(1, 4096));
    grad->add_option("--tau", grad_opts.tau, "temperature")->check(CLI::PositiveNumber);
    grad->add_option("--trials", grad_opts.trials, "random trials")->check(CLI::Range(1, 10000));
    grad->add_option("--seed", grad_opts.seed, "base seed");
    grad->add_option("--singleton-policy", grad_opts.singleton_policy,
                     "anchors without positives: skip or error")
        ->check(CLI::IsMember({"skip", "error"}));
    grad->add_option("--anchor-weight", grad_opts.anchor_weight, "per-anchor weighting")
        ->check(CLI::IsMember({"uniform", "inverse-positives"}));

    SynthOpts synth_opts;
    auto* synth = app.add_subcommand("synth", "generate a synthetic multi-domain embedding set");
    synth->add_option("--spec", synth_opts.spec_path, "key=value spec file");
    synth->add_option("--out", synth_opts.out_path, "output path (.emb or .csv)")->required();
    synth->add_option("--classes", synth_opts.classes, "number of classes");
    synth->add_option("--domains", synth_opts.domains, "number of domains");
    synth->add_option("--dim", synth_opts.dim, "feature dimension");
    synth->add_option("--per", synth_opts.per, "samples per (class, domain)");
    synth->add_option("--separation", synth_opts.separation, "class mean sphere radius");
    synth->add_option("--offset", synth_opts.offset, "domain offset scale");
    synth->add_option("--rotate", synth_opts.rotate, "1 = random orthogonal map per domain")
        ->check(CLI::Range(0, 1));
    synth->add_option("--noise", synth_opts.noise, "per-sample noise sigma");
    synth->add_option("--seed", synth_opts.seed, "generator seed");

    TrainOpts train_opts;
    auto* train = app.add_subcommand("train", "train the MLP encoder on an embedding set");
    train->add_option("--data", train_opts.data_path, "input embedding set")->required();
    train->add_option("--out", train_opts.out_path, "checkpoint output path")->required();
    train->add_option("--loss", train_opts.loss, "training loss")
        ->check(CLI::IsMember({"supcon", "protoclr", "infonce", "ce"}));
    train->add_option("--epochs", train_opts.epochs, "epochs")->check(CLI::Range(1, 100000));
    train->add_option("--lr", train_opts.lr, "learning rate (default 5e-4 for ce/protoclr, 1e-4 otherwise)")
        ->check(CLI::NonNegativeNumber);
    train->add_option("--wd", train_opts.wd, "weight decay")->check(CLI::NonNegativeNumber);
    train->add_option("--batch", train_opts.batch, "batch size")->check(CLI::Range(2, 65536));
    train->add_option("--seed", train_opts.seed, "training seed");
    train->add_option("--tau", train_opts.tau, "temperature")->check(CLI::PositiveNumber);
    train->add_option("--hidden", train_opts.hidden, "hidden layer dims, comma separated");
    train->add_option("--embed-dim", train_opts.embed_dim, "embedding dim for contrastive losses")
        ->check(CLI::Range(1, 4096));
    train->add_option("--optimizer", train_opts.optimizer, "optimizer")
        ->check(CLI::IsMember({"adamw", "sgd"}));
    train->add_option("--anchor-weight", train_opts.anchor_weight, "per-anchor weighting")
        ->check(CLI::IsMember({"uniform", "inverse-positives"}));
    train->add_option("--prototype-mode", train_opts.prototype_mode, "prototype gradient mode")
        ->check(CLI::IsMember({"detached", "full"}));

    EvalOpts eval_opts;
    auto* eval = app.add_subcommand("eval", "episodic few-shot evaluation (nearest centroid)");
    eval->add_option("--data", eval_opts.data_path, "embedding set to evaluate")->required();
    eval->add_option("--checkpoint", eval_opts.checkpoint, "encode features with this checkpoint first");
    eval->add_option("--k", eval_opts.k, "shots per class")->check(CLI::Range(1, 1024));
    eval->add_option("--runs", eval_opts.runs, "episode repetitions")->check(CLI::Range(1, 10000));
    eval->add_option("--seed", eval_opts.seed, "base seed");
    eval->add_option("--domain", eval_opts.domain, "restrict to one domain id")->check(CLI::Range(0, 1 << 30));
    eval->add_option("--holdout", eval_opts.holdout, "evaluate on a seeded random fraction (0, 1)")
        ->check(CLI::Range(0.0, 1.0));

    ProbeOpts probe_opts;
    auto* probe = app.add_subcommand("probe", "statistical probes of the loss geometry");
    probe->add_option("--probe", probe_opts.probe, "convergence or variance")
        ->required()
        ->check(CLI::IsMember({"convergence", "variance"}));
    probe->add_option("--classes", probe_opts.classes, "classes (convergence)")->check(CLI::Range(2, 4096));
    probe->add_option("--per", probe_opts.per, "points per class (convergence)")->check(CLI::Range(2, 65536));
    probe->add_option("--dim", probe_opts.dim, "dimension")->check(CLI::Range(2, 4096));
    probe->add_option("--tau", probe_opts.tau, "temperature (convergence)")->check(CLI::PositiveNumber);
    probe->add_option("--eps", probe_opts.eps, "noise radii, comma separated (convergence)");
    probe->add_option("--sizes", probe_opts.sizes, "class sizes, comma separated (variance)");
    probe->add_option("--resamples", probe_opts.resamples, "Monte-Carlo resamples (variance)")
        ->check(CLI::Range(100, 10000000));
    probe->add_option("--seed", probe_opts.seed, "probe seed");

    CostOpts cost_opts;
    auto* cost = app.add_subcommand("cost", "similarity-cost model (closed form and instrumented)");
    cost->add_option("--n", cost_opts.n, "batch rows (views included)")->check(CLI::Range(1LL, 1LL << 40));
    cost->add_option("--classes", cost_opts.classes, "distinct classes per batch")
        ->check(CLI::Range(1LL, 1LL << 40));
    cost->add_option("--d", cost_opts.d, "embedding dim")->check(CLI::Range(1LL, 1LL << 30));
    cost->add_option("--batches", cost_opts.batches, "batches per epoch")->check(CLI::Range(1LL, 1LL << 40));
    cost->add_flag("--verify-instrumented", cost_opts.verify, "run both losses and compare counters");
    cost->add_option("--seed", cost_opts.seed, "seed for the verification batch");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    try {
        if (*grad) return run_gradcheck(grad_opts);
        if (*synth) return run_synth(synth_opts);
        if (*train) return run_train(train_opts);
        if (*eval) return run_eval(eval_opts);
        if (*probe) return run_probe(probe_opts);
        if (*cost) return run_cost(cost_opts);
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return map_validation_error(e);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kValidation;
    }
    return kUsage;
}
