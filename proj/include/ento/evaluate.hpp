#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ento/kernel.hpp"
#include "ento/metrics.hpp"
#include "ento/pnm.hpp"

namespace ento {

struct ImageMetrics {
    std::string id;
    double s = 0;
    double fw = 0;
    double e = 0;
    double m = 0;
};

struct MetricReport {
    std::vector<ImageMetrics> records; ///< sorted by id
    ImageMetrics mean;                 ///< id "aggregate"
    std::vector<std::string> unmatched;
    /// id -> reason for pairs that could not be scored
    std::map<std::string, std::string> errors;
};

struct EvalOptions {
    bool strict = false;
    /// Resize a prediction to its ground truth's size instead of reporting an error.
    bool resize_mismatched = false;
};

/// Binarises at 0.5.
inline metrics::Map to_ground_truth(const Tensor<float>& t) {
    metrics::Map y(t.shape());
    for (std::size_t i = 0; i < t.numel(); ++i) y[i] = t[i] >= 0.5f ? 1.0 : 0.0;
    return y;
}

inline ImageMetrics score_image(const std::string& id, const metrics::Map& p_raw, const metrics::Map& y, bool strict) {
    const metrics::Map p = metrics::normalize_prediction(p_raw, strict);
    return {id, metrics::s_measure(p, y), metrics::weighted_f_measure(p, y), metrics::e_measure(p, y),
            metrics::mae(p, y)};
}

inline ImageMetrics mean_of(const std::vector<ImageMetrics>& recs) {
    ImageMetrics m{"aggregate"};
    for (const auto& r : recs) {
        m.s += r.s;
        m.fw += r.fw;
        m.e += r.e;
        m.m += r.m;
    }
    if (!recs.empty()) {
        const double n = static_cast<double>(recs.size());
        m.s /= n;
        m.fw /= n;
        m.e /= n;
        m.m /= n;
    }
    return m;
}

namespace detail {

inline std::map<std::string, std::filesystem::path> list_pgm(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir.string());
    std::map<std::string, std::filesystem::path> out;
    for (const auto& ent : std::filesystem::directory_iterator(dir)) {
        if (ent.is_regular_file() && ent.path().extension() == ".pgm") out.emplace(ent.path().stem().string(), ent.path());
    }
    return out;
}

} // namespace detail

/// Scores every prediction/ground-truth pair matched by file stem.
inline MetricReport evaluate_batch(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir,
                                   const EvalOptions& opt = {}) {
    const auto preds = detail::list_pgm(pred_dir);
    const auto gts = detail::list_pgm(gt_dir);
    MetricReport rep;
    for (const auto& [id, path] : preds) {
        if (!gts.count(id)) rep.unmatched.push_back("pred:" + id);
    }
    std::size_t matched = 0;
    for (const auto& [id, gt_path] : gts) {
        auto it = preds.find(id);
        if (it == preds.end()) {
            rep.unmatched.push_back("gt:" + id);
            continue;
        }
        ++matched;
        const Tensor<float> gt = read_pnm(gt_path);
        Tensor<float> pr = read_pnm(it->second);
        if (gt.shape().c != 1 || pr.shape().c != 1) {
            rep.errors[id] = "expected single-channel P5 maps";
            continue;
        }
        if (pr.shape() != gt.shape()) {
            if (!opt.resize_mismatched) {
                rep.errors[id] = "size mismatch " + pr.shape().str() + " vs " + gt.shape().str();
                continue;
            }
            pr = kernel::bilinear_resize(pr, gt.shape().h, gt.shape().w);
        }
        try {
            rep.records.push_back(score_image(id, pr.cast<double>(), to_ground_truth(gt), opt.strict));
        } catch (const DegenerateGroundTruthError& e) {
            rep.errors[id] = e.what();
        } catch (const InvalidArgument& e) {
            rep.errors[id] = e.what();
        }
    }
    if (matched == 0) throw IoError("evaluate: no matching prediction/ground-truth pairs");
    rep.mean = mean_of(rep.records);
    return rep;
}

inline std::string format_metrics(const ImageMetrics& r, const char* key = "image") {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s=%s S=%.6f Fw=%.6f E=%.6f M=%.6f", key, r.id.c_str(), r.s, r.fw, r.e, r.m);
    return buf;
}

/// One line per image, then unmatched/error notes, then the aggregate line.
inline std::string format_report(const MetricReport& rep) {
    std::string out;
    for (const auto& r : rep.records) out += format_metrics(r) + "\n";
    for (const auto& u : rep.unmatched) out += "unmatched=" + u + "\n";
    for (const auto& [id, why] : rep.errors) out += "error image=" + id + " reason=" + why + "\n";
    char buf[256];
    std::snprintf(buf, sizeof buf, "aggregate n=%zu S=%.6f Fw=%.6f E=%.6f M=%.6f\n", rep.records.size(), rep.mean.s,
                  rep.mean.fw, rep.mean.e, rep.mean.m);
    return out + buf;
}

} // namespace ento
