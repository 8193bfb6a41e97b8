#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vsa/eval/case.hpp"
#include "vsa/functions/rle.hpp"
#include "vsa/orchestrator/dispatch.hpp"
#include "vsa/text.hpp"

namespace vsa::eval {

/// num/den as a percentage rounded half-up to two decimals, in exact integer arithmetic.
inline double percent_2dp(std::uint64_t num, std::uint64_t den)
{
    if (den == 0)
        throw std::invalid_argument("percentage of an empty population");
    const std::uint64_t hundredths = (2 * num * 10000 + den) / (2 * den);
    return static_cast<double>(hundredths) / 100.0;
}

inline double round_2dp(double pct)
{
    return std::floor(pct * 100.0 + 0.5 + 1e-9) / 100.0;
}

// ---------------------------------------------------------------------------
// SR

enum class SrOutcome { success, false_positive_call, wrong_function, missed_call };

inline const char* to_string(SrOutcome o)
{
    switch (o) {
    case SrOutcome::success:
        return "success";
    case SrOutcome::false_positive_call:
        return "false_positive_call";
    case SrOutcome::wrong_function:
        return "wrong_function";
    case SrOutcome::missed_call:
        return "missed_call";
    }
    return "?";
}

inline SrOutcome classify_sr(const EvalCase& c, const orchestrator::DispatchTrace& t)
{
    const auto& executed = t.executed_call;
    if (c.expect_call) {
        if (!executed)
            return SrOutcome::missed_call;
        return executed->api_name == *c.expect_call ? SrOutcome::success : SrOutcome::wrong_function;
    }
    return executed ? SrOutcome::false_positive_call : SrOutcome::success;
}

struct SrResult {
    double percent = 0;
    std::size_t total = 0;
    std::size_t successes = 0;
    std::size_t false_positive_calls = 0;
    std::size_t wrong_function = 0;
    std::size_t missed_calls = 0;
};

inline SrResult eval_sr(const std::vector<EvalCase>& cases, const std::vector<orchestrator::DispatchTrace>& traces)
{
    if (cases.size() != traces.size())
        throw std::invalid_argument("eval_sr: " + std::to_string(cases.size()) + " cases but " +
                                    std::to_string(traces.size()) + " traces");
    if (cases.empty())
        throw std::invalid_argument("eval_sr: no cases");
    SrResult r;
    r.total = cases.size();
    for (std::size_t i = 0; i < cases.size(); ++i) {
        switch (classify_sr(cases[i], traces[i])) {
        case SrOutcome::success:
            ++r.successes;
            break;
        case SrOutcome::false_positive_call:
            ++r.false_positive_calls;
            break;
        case SrOutcome::wrong_function:
            ++r.wrong_function;
            break;
        case SrOutcome::missed_call:
            ++r.missed_calls;
            break;
        }
    }
    r.percent = percent_2dp(r.successes, r.total);
    return r;
}

// ---------------------------------------------------------------------------
// KeyHit

inline std::size_t keyword_hits(const std::vector<std::string>& keywords, const std::string& reply)
{
    std::size_t hits = 0;
    for (const auto& k : keywords)
        hits += text::contains_whole_word(reply, k);
    return hits;
}

/// Macro average over cases with keywords; nullopt when no case has any.
inline std::optional<double> eval_keyhit(const std::vector<EvalCase>& cases, const std::vector<std::string>& replies)
{
    if (cases.size() != replies.size())
        throw std::invalid_argument("eval_keyhit: case/reply count mismatch");
    double sum = 0;
    std::size_t eligible = 0;
    for (std::size_t i = 0; i < cases.size(); ++i) {
        if (cases[i].keywords.empty())
            continue;
        sum += static_cast<double>(keyword_hits(cases[i].keywords, replies[i])) /
               static_cast<double>(cases[i].keywords.size());
        ++eligible;
    }
    if (eligible == 0)
        return std::nullopt;
    return round_2dp(sum / static_cast<double>(eligible) * 100.0);
}

// ---------------------------------------------------------------------------
// Rejection

struct RejectionLexicon {
    std::string version;
    std::vector<std::string> phrases;

    bool matches(const std::string& reply) const
    {
        return std::any_of(phrases.begin(), phrases.end(),
                           [&](const std::string& p) { return text::contains_whole_word(reply, p); });
    }
};

/// One phrase per line. Blank lines and '#' comments are skipped; "# version: X" sets the version.
inline RejectionLexicon parse_lexicon(const std::string& text)
{
    RejectionLexicon lex;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        const auto t = std::string(protocol::trim(line));
        if (t.empty())
            continue;
        if (t[0] == '#') {
            const auto pos = t.find("version:");
            if (pos != std::string::npos)
                lex.version = std::string(protocol::trim(std::string_view(t).substr(pos + 8)));
            continue;
        }
        lex.phrases.push_back(text::to_lower(t));
    }
    if (lex.phrases.empty())
        throw std::invalid_argument("rejection lexicon has no phrases");
    return lex;
}

inline RejectionLexicon load_lexicon(const std::filesystem::path& p)
{
    std::ifstream in(p);
    if (!in)
        throw std::runtime_error("cannot read rejection lexicon " + p.string());
    std::ostringstream os;
    os << in.rdbuf();
    return parse_lexicon(os.str());
}

inline RejectionLexicon default_lexicon()
{
    return parse_lexicon("# version: 1\n"
                         "no\nnot present\nnot visible\nnot found\nnot see\ncannot find\ncannot see\n"
                         "could not find\nunable to find\nunable to locate\ndoes not appear\nabsent\nnone\n");
}

/// Empty evidence: no function ran, or the one that ran found nothing.
inline bool evidence_empty(const orchestrator::DispatchTrace& t)
{
    return !t.function_result || t.function_result->is_empty();
}

inline bool is_rejection(const orchestrator::DispatchTrace& t, const std::string& reply, const RejectionLexicon& lex)
{
    return evidence_empty(t) && lex.matches(reply);
}

inline std::optional<double> eval_rej(const std::vector<EvalCase>& cases,
                                      const std::vector<orchestrator::DispatchTrace>& traces,
                                      const std::vector<std::string>& replies, const RejectionLexicon& lex)
{
    if (cases.size() != traces.size() || cases.size() != replies.size())
        throw std::invalid_argument("eval_rej: case/trace/reply count mismatch");
    std::size_t negatives = 0, rejected = 0;
    for (std::size_t i = 0; i < cases.size(); ++i) {
        if (!cases[i].is_negative)
            continue;
        ++negatives;
        rejected += is_rejection(traces[i], replies[i], lex);
    }
    if (negatives == 0)
        return std::nullopt;
    return percent_2dp(rejected, negatives);
}

// ---------------------------------------------------------------------------
// BLEU@4

/// Lowercase, drop ASCII punctuation, split on whitespace.
inline std::vector<std::string> bleu_tokens(std::string_view s)
{
    std::string cleaned;
    cleaned.reserve(s.size());
    for (unsigned char c : s)
        if (!std::ispunct(c))
            cleaned.push_back(static_cast<char>(std::tolower(c)));
    return text::split_whitespace(cleaned);
}

struct BleuStats {
    std::size_t matches[4] = {0, 0, 0, 0};
    std::size_t counts[4] = {0, 0, 0, 0};
    std::size_t candidate_length = 0;
    std::size_t reference_length = 0;
};

inline void add_sentence(BleuStats& st, const std::vector<std::string>& cand, const std::vector<std::string>& ref)
{
    st.candidate_length += cand.size();
    st.reference_length += ref.size();
    for (std::size_t n = 1; n <= 4; ++n) {
        std::map<std::vector<std::string>, std::size_t> ref_counts;
        for (std::size_t i = 0; i + n <= ref.size(); ++i)
            ++ref_counts[std::vector<std::string>(ref.begin() + i, ref.begin() + i + n)];
        std::map<std::vector<std::string>, std::size_t> cand_counts;
        for (std::size_t i = 0; i + n <= cand.size(); ++i)
            ++cand_counts[std::vector<std::string>(cand.begin() + i, cand.begin() + i + n)];
        for (const auto& [gram, count] : cand_counts) {
            const auto it = ref_counts.find(gram);
            st.matches[n - 1] += std::min(count, it == ref_counts.end() ? std::size_t{0} : it->second);
            st.counts[n - 1] += count;
        }
    }
}

inline double bleu_from_stats(const BleuStats& st)
{
    if (st.candidate_length == 0)
        return 0.0;
    double log_sum = 0;
    for (int n = 0; n < 4; ++n) {
        const double count = static_cast<double>(std::max<std::size_t>(st.counts[n], 1));
        const double p = st.matches[n] == 0 ? 1.0 / (2.0 * count) : static_cast<double>(st.matches[n]) / count;
        log_sum += std::log(p);
    }
    const double c = static_cast<double>(st.candidate_length);
    const double r = static_cast<double>(st.reference_length);
    const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
    return bp * std::exp(log_sum / 4.0) * 100.0;
}

/// Corpus-level BLEU@4, one reference per candidate.
inline double bleu4(const std::vector<std::string>& candidates, const std::vector<std::string>& references)
{
    if (candidates.empty())
        throw std::invalid_argument("bleu4: empty corpus");
    if (candidates.size() != references.size())
        throw std::invalid_argument("bleu4: candidate/reference count mismatch");
    BleuStats st;
    for (std::size_t i = 0; i < candidates.size(); ++i)
        add_sentence(st, bleu_tokens(candidates[i]), bleu_tokens(references[i]));
    return bleu_from_stats(st);
}

// ---------------------------------------------------------------------------
// IoU

inline double box_area(const functions::Box& b)
{
    return std::max(0.0, b[2] - b[0]) * std::max(0.0, b[3] - b[1]);
}

inline double iou_box(const functions::Box& a, const functions::Box& b)
{
    const double iw = std::max(0.0, std::min(a[2], b[2]) - std::max(a[0], b[0]));
    const double ih = std::max(0.0, std::min(a[3], b[3]) - std::max(a[1], b[1]));
    const double inter = iw * ih;
    const double uni = box_area(a) + box_area(b) - inter;
    if (uni <= 0)
        return a == b ? 1.0 : 0.0;
    return std::clamp(inter / uni, 0.0, 1.0);
}

/// Two empty masks agree perfectly (IoU 1).
inline double iou_mask(const functions::SegmentationMask& a, const functions::SegmentationMask& b)
{
    if (a.width != b.width || a.height != b.height)
        throw std::invalid_argument("iou_mask: dimension mismatch " + std::to_string(a.width) + "x" +
                                    std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                                    std::to_string(b.height));
    const auto ba = functions::rle_decode(a);
    const auto bb = functions::rle_decode(b);
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < ba.pixels.size(); ++i) {
        inter += ba.pixels[i] && bb.pixels[i];
        uni += ba.pixels[i] || bb.pixels[i];
    }
    if (uni == 0)
        return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

inline std::optional<double> mean_iou(const std::vector<double>& ious)
{
    if (ious.empty())
        return std::nullopt;
    double s = 0;
    for (double v : ious)
        s += v;
    return s / static_cast<double>(ious.size()) * 100.0;
}

} // namespace vsa::eval
