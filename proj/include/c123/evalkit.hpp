#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "c123/boundary.hpp"
#include "c123/case_io.hpp"
#include "c123/image_io.hpp"
#include "c123/raster.hpp"

namespace c123 {

// Peak signal-to-noise ratio for rasters in [0,1], capped at 99 dB for
// (near-)identical inputs.
inline double psnr(const Image& a, const Image& b) {
    require_same_shape(a, b, "psnr");
    const double m = mse(a, b);
    if (m < 1e-10) return 99.0;
    return -10.0 * std::log10(m);
}

// Mean cosine similarity between each render's embedding and the reference
// image's embedding. Image-to-image, unlike the boundary detector's
// image-to-prompt score.
inline double clip_similarity_metric(const std::vector<Image>& renders, const Image& reference,
                                     EmbeddingModel& model) {
    if (renders.empty()) throw std::invalid_argument("clip_similarity_metric: no renders");
    const std::vector<double> ref = model.embed_image(reference);
    double total = 0.0;
    for (const Image& r : renders) total += cosine_similarity(model.embed_image(r), ref);
    return total / static_cast<double>(renders.size());
}

// Optional perceptual-distance adapter (LPIPS-style). Never bundled; its
// absence drops the metric from reports instead of failing them.
class PerceptualModel {
  public:
    virtual ~PerceptualModel() = default;
    virtual double distance(const Image& a, const Image& b) = 0;
};

struct CaseReport {
    double clip_similarity = 0.0;
    double psnr_db = 0.0;
    std::optional<double> lpips;
    std::vector<double> per_view_similarity;
};

struct CaseRenders {
    std::vector<Image> novel;
    Image reference;
};

inline CaseReport evaluate_case(const CaseRenders& renders, const Image& reference_image,
                                EmbeddingModel& model, PerceptualModel* perceptual = nullptr) {
    if (renders.novel.empty() || renders.reference.empty())
        throw std::invalid_argument("evaluate_case: missing renders");
    CaseReport report;
    const std::vector<double> ref = model.embed_image(reference_image);
    for (const Image& r : renders.novel)
        report.per_view_similarity.push_back(cosine_similarity(model.embed_image(r), ref));
    double total = 0.0;
    for (double s : report.per_view_similarity) total += s;
    report.clip_similarity = total / static_cast<double>(report.per_view_similarity.size());
    report.psnr_db = psnr(renders.reference, reference_image);
    if (perceptual) report.lpips = perceptual->distance(renders.reference, reference_image);
    return report;
}

struct MetricMeans {
    double clip_similarity = 0.0;
    double psnr_db = 0.0;
    std::optional<double> lpips;
    long cases = 0;
};

struct DatasetReport {
    std::vector<std::pair<std::string, CaseReport>> per_case;  // sorted by case name
    std::map<std::string, MetricMeans> per_category;
    MetricMeans mean;
};

namespace detail {

inline MetricMeans aggregate(const std::vector<const CaseReport*>& reports) {
    MetricMeans out;
    out.cases = static_cast<long>(reports.size());
    double lpips_sum = 0.0;
    long lpips_n = 0;
    for (const CaseReport* r : reports) {
        out.clip_similarity += r->clip_similarity;
        out.psnr_db += r->psnr_db;
        if (r->lpips) {
            lpips_sum += *r->lpips;
            ++lpips_n;
        }
    }
    out.clip_similarity /= static_cast<double>(out.cases);
    out.psnr_db /= static_cast<double>(out.cases);
    if (lpips_n > 0) out.lpips = lpips_sum / static_cast<double>(lpips_n);
    return out;
}

// Renders written by a reconstruction run: render_eval_XX.png in index order
// plus render_reference.png.
inline CaseRenders load_result_renders(const std::string& result_dir) {
    namespace fs = std::filesystem;
    CaseRenders out;
    for (int k = 0;; ++k) {
        char name[32];
        std::snprintf(name, sizeof(name), "render_eval_%02d.png", k);
        const std::string path = result_dir + "/" + name;
        if (!fs::exists(path)) break;
        out.novel.push_back(read_png(path));
    }
    const std::string ref_path = result_dir + "/render_reference.png";
    if (fs::exists(ref_path)) out.reference = read_png(ref_path);
    return out;
}

}  // namespace detail

// Pairs each case directory with its result directory by name, evaluates
// every match, and aggregates overall and per-category means.
inline DatasetReport evaluate_dataset(const std::string& results_dir, const std::string& cases_dir,
                                      EmbeddingModel& model, PerceptualModel* perceptual = nullptr) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(cases_dir))
        throw std::invalid_argument("evaluate_dataset: cases directory missing: " + cases_dir);
    if (!fs::is_directory(results_dir))
        throw std::invalid_argument("evaluate_dataset: results directory missing: " + results_dir);

    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(cases_dir))
        if (entry.is_directory() && fs::exists(entry.path() / "image.png"))
            names.push_back(entry.path().filename().string());
    std::sort(names.begin(), names.end());

    DatasetReport report;
    std::map<std::string, std::vector<const CaseReport*>> by_category;
    std::vector<const CaseReport*> all;

    std::vector<std::optional<std::string>> categories;
    for (const std::string& name : names) {
        const std::string result_dir = results_dir + "/" + name;
        CaseRenders renders = detail::load_result_renders(result_dir);
        if (renders.novel.empty() || renders.reference.empty()) continue;
        const LoadedCase loaded = load_case_directory(cases_dir + "/" + name, CameraPose{});
        Image reference = loaded.input.image;
        if (reference.height != renders.reference.height ||
            reference.width != renders.reference.width)
            reference = bilinear_resample(reference, renders.reference.height,
                                          renders.reference.width);
        report.per_case.emplace_back(name, evaluate_case(renders, reference, model, perceptual));
        categories.push_back(loaded.category);
    }
    if (report.per_case.empty())
        throw std::invalid_argument("evaluate_dataset: no case/result pairs matched");

    for (size_t i = 0; i < report.per_case.size(); ++i) {
        all.push_back(&report.per_case[i].second);
        if (categories[i]) by_category[*categories[i]].push_back(&report.per_case[i].second);
    }
    report.mean = detail::aggregate(all);
    for (const auto& [cat, reports] : by_category) report.per_category[cat] = detail::aggregate(reports);
    return report;
}

inline nlohmann::json case_report_json(const CaseReport& r) {
    nlohmann::json j;
    j["clip_similarity"] = r.clip_similarity;
    j["psnr"] = r.psnr_db;
    if (r.lpips) j["lpips"] = *r.lpips;
    j["per_view_similarity"] = r.per_view_similarity;
    return j;
}

inline nlohmann::json metric_means_json(const MetricMeans& m) {
    nlohmann::json j;
    j["clip_similarity"] = m.clip_similarity;
    j["psnr"] = m.psnr_db;
    if (m.lpips) j["lpips"] = *m.lpips;
    j["cases"] = m.cases;
    return j;
}

inline nlohmann::json dataset_report_json(const DatasetReport& report) {
    nlohmann::json j;
    j["per_case"] = nlohmann::json::object();
    for (const auto& [name, r] : report.per_case) j["per_case"][name] = case_report_json(r);
    j["per_category"] = nlohmann::json::object();
    for (const auto& [cat, m] : report.per_category) j["per_category"][cat] = metric_means_json(m);
    j["mean"] = metric_means_json(report.mean);
    return j;
}

// CSV with the headline metric columns in report-table order.
inline std::string dataset_report_csv(const DatasetReport& report) {
    std::string csv = "case,clip_similarity,psnr,lpips\n";
    char buf[160];
    const auto row = [&](const std::string& name, double clip, double p,
                         const std::optional<double>& lpips) {
        if (lpips)
            std::snprintf(buf, sizeof(buf), "%s,%.9g,%.9g,%.9g\n", name.c_str(), clip, p, *lpips);
        else
            std::snprintf(buf, sizeof(buf), "%s,%.9g,%.9g,\n", name.c_str(), clip, p);
        csv += buf;
    };
    for (const auto& [name, r] : report.per_case) row(name, r.clip_similarity, r.psnr_db, r.lpips);
    row("mean", report.mean.clip_similarity, report.mean.psnr_db, report.mean.lpips);
    return csv;
}

}  // namespace c123
