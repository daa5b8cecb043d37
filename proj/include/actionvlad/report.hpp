#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "actionvlad/aggregation.hpp"
#include "actionvlad/classifier.hpp"
#include "actionvlad/error.hpp"
#include "actionvlad/fusion.hpp"

namespace actionvlad {

struct ExperimentReport {
    std::string split;
    std::size_t classes = 0;
    std::size_t videos = 0;
    double accuracy = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> class_accuracy;  ///< NaN for classes without videos
    std::vector<std::vector<std::size_t>> confusion;  ///< [true][predicted]
    double mean_ap = std::numeric_limits<double>::quiet_NaN();
    double weighted_ap = std::numeric_limits<double>::quiet_NaN();
    std::vector<std::pair<std::string, double>> timings;  ///< seconds

    /// Equality of everything except wall-clock timings.
    bool same_results(const ExperimentReport& o) const
    {
        auto same = [](double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); };
        if (split != o.split || classes != o.classes || videos != o.videos || confusion != o.confusion ||
            class_accuracy.size() != o.class_accuracy.size())
            return false;
        for (std::size_t c = 0; c < class_accuracy.size(); ++c)
            if (!same(class_accuracy[c], o.class_accuracy[c]))
                return false;
        return same(accuracy, o.accuracy) && same(mean_ap, o.mean_ap) && same(weighted_ap, o.weighted_ap);
    }
};

/**
 * Non-interpolated average precision: rank by descending score (earlier
 * index first on ties) and average the precision at the rank of every
 * positive. NaN when there are no positives.
 */
inline double average_precision(std::span<const double> scores, std::span<const bool> positives)
{
    require(scores.size() == positives.size(), ErrorKind::dimension_mismatch, "scores and labels differ in length");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::ranges::stable_sort(order, [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    double sum = 0;
    std::size_t hits = 0;
    for (std::size_t r = 0; r < order.size(); ++r)
        if (positives[order[r]]) {
            ++hits;
            sum += static_cast<double>(hits) / static_cast<double>(r + 1);
        }
    return hits == 0 ? std::numeric_limits<double>::quiet_NaN() : sum / static_cast<double>(hits);
}

/// Accuracy, per-class accuracy, confusion matrix, and per-class AP
/// aggregated as the plain mean (mAP) and weighted by class size (wAP).
inline ExperimentReport build_report(std::span<const std::size_t> labels, std::span<const ScoreVector> scores,
                                     std::size_t classes, std::string split)
{
    require(labels.size() == scores.size(), ErrorKind::dimension_mismatch, "labels and scores differ in count");
    ExperimentReport r;
    r.split = std::move(split);
    r.classes = classes;
    r.videos = labels.size();
    r.confusion.assign(classes, std::vector<std::size_t>(classes, 0));
    std::size_t correct = 0;
    for (std::size_t v = 0; v < labels.size(); ++v) {
        require(scores[v].classes() == classes, ErrorKind::dimension_mismatch, "score vector has wrong class count");
        require(labels[v] < classes, ErrorKind::label_error, "label out of range");
        const std::size_t pred = scores[v].argmax();
        ++r.confusion[labels[v]][pred];
        correct += pred == labels[v];
    }
    if (!labels.empty())
        r.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
    r.class_accuracy.assign(classes, std::numeric_limits<double>::quiet_NaN());
    double ap_sum = 0, weighted_sum = 0, weight_total = 0;
    std::size_t ap_count = 0;
    std::vector<double> column(labels.size());
    auto positive = std::make_unique<bool[]>(labels.size());
    for (std::size_t c = 0; c < classes; ++c) {
        const auto& row = r.confusion[c];
        const std::size_t total = std::accumulate(row.begin(), row.end(), std::size_t{0});
        if (total > 0)
            r.class_accuracy[c] = static_cast<double>(row[c]) / static_cast<double>(total);
        for (std::size_t v = 0; v < labels.size(); ++v) {
            column[v] = scores[v].values[c];
            positive[v] = labels[v] == c;
        }
        const double ap = average_precision(column, std::span<const bool>(positive.get(), labels.size()));
        if (!std::isnan(ap)) {
            ap_sum += ap;
            ++ap_count;
            weighted_sum += ap * static_cast<double>(total);
            weight_total += static_cast<double>(total);
        }
    }
    if (ap_count > 0) {
        r.mean_ap = ap_sum / static_cast<double>(ap_count);
        r.weighted_ap = weighted_sum / weight_total;
    }
    return r;
}

namespace detail {

inline std::string format_double(double v)
{
    if (std::isnan(v))
        return "nan";
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s)
{
    if (s == "nan")
        return std::numeric_limits<double>::quiet_NaN();
    double v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    require(res.ec == std::errc() && res.ptr == s.data() + s.size(), ErrorKind::parse_error,
            "'" + std::string(s) + "' is not a number");
    return v;
}

inline std::size_t parse_size(std::string_view s)
{
    std::size_t v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    require(res.ec == std::errc() && res.ptr == s.data() + s.size(), ErrorKind::parse_error,
            "'" + std::string(s) + "' is not a non-negative integer");
    return v;
}

inline std::vector<std::string_view> fields(std::string_view line, char sep)
{
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        auto pos = line.find(sep, start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos)
            return out;
        start = pos + 1;
    }
}

} // namespace detail

/// Line-oriented report: one "key<TAB>value..." record per line. Numbers use
/// shortest round-trip formatting, so parse_report recovers them exactly.
inline std::string format_report(const ExperimentReport& r)
{
    using detail::format_double;
    std::ostringstream out;
    out << "split\t" << r.split << '\n';
    out << "classes\t" << r.classes << '\n';
    out << "videos\t" << r.videos << '\n';
    out << "accuracy\t" << format_double(r.accuracy) << '\n';
    out << "mAP\t" << format_double(r.mean_ap) << '\n';
    out << "wAP\t" << format_double(r.weighted_ap) << '\n';
    for (std::size_t c = 0; c < r.class_accuracy.size(); ++c)
        out << "class_accuracy\t" << c << '\t' << format_double(r.class_accuracy[c]) << '\n';
    for (std::size_t c = 0; c < r.confusion.size(); ++c) {
        out << "confusion\t" << c << '\t';
        for (std::size_t p = 0; p < r.confusion[c].size(); ++p)
            out << (p ? "," : "") << r.confusion[c][p];
        out << '\n';
    }
    for (const auto& [name, seconds] : r.timings)
        out << "time\t" << name << '\t' << format_double(seconds) << '\n';
    return out.str();
}

inline ExperimentReport parse_report(std::string_view text)
{
    using namespace detail;
    ExperimentReport r;
    std::map<std::size_t, std::vector<std::size_t>> rows;
    std::map<std::size_t, double> class_acc;
    for (auto line : fields(text, '\n')) {
        if (!line.empty() && line.back() == '\r')
            line.remove_suffix(1);
        if (line.empty() || line.front() == '#')
            continue;
        auto f = fields(line, '\t');
        const auto key = f[0];
        auto need = [&](std::size_t n) {
            require(f.size() == n, ErrorKind::parse_error, "malformed report line '" + std::string(line) + "'");
        };
        if (key == "split") {
            need(2);
            r.split = f[1];
        } else if (key == "classes") {
            need(2);
            r.classes = parse_size(f[1]);
        } else if (key == "videos") {
            need(2);
            r.videos = parse_size(f[1]);
        } else if (key == "accuracy") {
            need(2);
            r.accuracy = parse_double(f[1]);
        } else if (key == "mAP") {
            need(2);
            r.mean_ap = parse_double(f[1]);
        } else if (key == "wAP") {
            need(2);
            r.weighted_ap = parse_double(f[1]);
        } else if (key == "class_accuracy") {
            need(3);
            class_acc[parse_size(f[1])] = parse_double(f[2]);
        } else if (key == "confusion") {
            need(3);
            std::vector<std::size_t> row;
            for (auto cell : fields(f[2], ','))
                row.push_back(parse_size(cell));
            rows[parse_size(f[1])] = std::move(row);
        } else if (key == "time") {
            need(3);
            r.timings.emplace_back(std::string(f[1]), parse_double(f[2]));
        } else {
            fail(ErrorKind::parse_error, "unknown report key '" + std::string(key) + "'");
        }
    }
    require(rows.size() == r.classes && class_acc.size() == r.classes, ErrorKind::parse_error,
            "report lists " + std::to_string(rows.size()) + " confusion rows for " + std::to_string(r.classes) +
                " classes");
    for (std::size_t c = 0; c < r.classes; ++c) {
        require(rows.contains(c) && rows[c].size() == r.classes && class_acc.contains(c), ErrorKind::parse_error,
                "report confusion matrix is not square");
        r.confusion.push_back(rows[c]);
        r.class_accuracy.push_back(class_acc[c]);
    }
    return r;
}

inline nlohmann::json report_to_json(const ExperimentReport& r)
{
    auto number = [](double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); };
    nlohmann::json j;
    j["split"] = r.split;
    j["classes"] = r.classes;
    j["videos"] = r.videos;
    j["accuracy"] = number(r.accuracy);
    j["mAP"] = number(r.mean_ap);
    j["wAP"] = number(r.weighted_ap);
    j["class_accuracy"] = nlohmann::json::array();
    for (double a : r.class_accuracy)
        j["class_accuracy"].push_back(number(a));
    j["confusion"] = r.confusion;
    j["timings"] = nlohmann::json::object();
    for (const auto& [name, seconds] : r.timings)
        j["timings"][name] = seconds;
    return j;
}

/// Row-normalised confusion of a minus row-normalised confusion of b. Rows
/// without videos normalise to zeros.
inline std::vector<std::vector<double>> confusion_diff(const ExperimentReport& a, const ExperimentReport& b)
{
    require(a.confusion.size() == b.confusion.size(), ErrorKind::dimension_mismatch,
            "reports have different class counts");
    auto normalized = [](const std::vector<std::size_t>& row) {
        const double total = static_cast<double>(std::accumulate(row.begin(), row.end(), std::size_t{0}));
        std::vector<double> out(row.size(), 0.0);
        if (total > 0)
            for (std::size_t p = 0; p < row.size(); ++p)
                out[p] = static_cast<double>(row[p]) / total;
        return out;
    };
    std::vector<std::vector<double>> diff;
    for (std::size_t c = 0; c < a.confusion.size(); ++c) {
        require(a.confusion[c].size() == b.confusion[c].size(), ErrorKind::dimension_mismatch,
                "confusion rows differ in length");
        auto ra = normalized(a.confusion[c]);
        auto rb = normalized(b.confusion[c]);
        for (std::size_t p = 0; p < ra.size(); ++p)
            ra[p] -= rb[p];
        diff.push_back(std::move(ra));
    }
    return diff;
}

struct WordContribution {
    std::size_t word = 0;
    double score = 0;
};

struct WordContributions {
    std::vector<WordContribution> ranked;  ///< descending score, lower word first on ties
    double bias = 0;
    double logit = 0;
};

/// Splits a class logit into per-cell terms <W_class block k, v block k>.
inline WordContributions word_contributions(std::span<const double> descriptor, const ClassifierModel<double>& model,
                                            std::size_t cls, std::size_t cells)
{
    require(cls < model.classes, ErrorKind::label_error,
            "class " + std::to_string(cls) + " out of range for " + std::to_string(model.classes) + " classes");
    require(cells >= 1 && descriptor.size() == model.input_dim && descriptor.size() % cells == 0,
            ErrorKind::dimension_mismatch, "descriptor does not split into K blocks matching the classifier");
    const std::size_t dim = descriptor.size() / cells;
    auto w = model.row(cls);
    WordContributions out;
    out.bias = model.bias[cls];
    for (std::size_t k = 0; k < cells; ++k) {
        double s = 0;
        for (std::size_t j = 0; j < dim; ++j)
            s += w[k * dim + j] * descriptor[k * dim + j];
        out.ranked.push_back({k, s});
    }
    out.logit = classifier_forward(descriptor, model)[cls];
    std::ranges::stable_sort(out.ranked, [](const auto& a, const auto& b) { return a.score > b.score; });
    return out;
}

} // namespace actionvlad
