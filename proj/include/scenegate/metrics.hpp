#pragma once

#include <algorithm>
#include <cctype>
#include <string>
#include <vector>

#include "json.hpp"
#include "scenegate/common.hpp"

namespace scenegate {

inline std::string to_lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

// Lowercase and collapse runs of whitespace to single spaces.
inline std::string normalize_answer(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    bool in_space = true;  // strips leading whitespace
    for (unsigned char c : s) {
        if (std::isspace(c)) {
            in_space = true;
            continue;
        }
        if (in_space && !out.empty()) out.push_back(' ');
        in_space = false;
        out.push_back(static_cast<char>(std::tolower(c)));
    }
    return out;
}

// Edit distance with unit insert/delete/substitute costs.
inline std::size_t levenshtein(const std::string& a, const std::string& b) {
    const std::size_t m = a.size(), n = b.size();
    std::vector<std::size_t> prev(n + 1), cur(n + 1);
    for (std::size_t j = 0; j <= n; ++j) prev[j] = j;
    for (std::size_t i = 1; i <= m; ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= n; ++j) {
            const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[n];
}

// Normalized Levenshtein similarity against the best-matching gold answer:
// s = 1 - NL when NL < tau, else 0, with NL the edit distance over the longer
// length. Case-insensitive.
inline double anls(const std::string& prediction, const std::vector<std::string>& gold_set,
                   double tau = 0.5) {
    if (gold_set.empty()) throw ContractError("anls requires a non-empty gold set");
    const std::string pred = to_lower(prediction);
    double best = 0.0;
    for (const std::string& g : gold_set) {
        const std::string gold = to_lower(g);
        const std::size_t denom = std::max<std::size_t>({pred.size(), gold.size(), 1});
        const double nl =
            static_cast<double>(levenshtein(pred, gold)) / static_cast<double>(denom);
        const double s = nl < tau ? 1.0 - nl : 0.0;
        best = std::max(best, s);
    }
    return best;
}

// Exact-match accuracy under lowercase + whitespace-collapse normalization.
inline double accuracy(const std::vector<std::string>& predictions,
                       const std::vector<std::string>& golds) {
    if (predictions.size() != golds.size()) {
        throw ContractError("accuracy: prediction and gold counts differ (" +
                            std::to_string(predictions.size()) + " vs " +
                            std::to_string(golds.size()) + ")");
    }
    if (predictions.empty()) return 0.0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        if (normalize_answer(predictions[i]) == normalize_answer(golds[i])) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(predictions.size());
}

struct EvalReport {
    std::size_t n_examples = 0;
    double accuracy = 0.0;
    double anls = 0.0;
};

inline nlohmann::json eval_report_to_json(const EvalReport& r) {
    return {{"n_examples", r.n_examples}, {"accuracy", r.accuracy}, {"anls", r.anls}};
}

inline EvalReport evaluate_answers(const std::vector<std::string>& predictions,
                                   const std::vector<std::string>& golds) {
    EvalReport r;
    r.n_examples = predictions.size();
    r.accuracy = accuracy(predictions, golds);
    double total = 0.0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        total += anls(predictions[i], {golds[i]});
    }
    r.anls = predictions.empty() ? 0.0 : total / static_cast<double>(predictions.size());
    return r;
}

}  // namespace scenegate
