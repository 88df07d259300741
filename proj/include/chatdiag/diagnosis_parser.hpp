#pragma once

#include <array>
#include <cctype>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "chatdiag/core_model.hpp"
#include "chatdiag/text.hpp"

namespace chatdiag {

namespace parser_detail {

inline bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

inline std::string_view skip_decoration(std::string_view s) {
    while (!s.empty() && (text::is_space(s.front()) || s.front() == '*' || s.front() == '#' || s.front() == '-' ||
                          s.front() == '>' || s.front() == '_'))
        s.remove_prefix(1);
    return s;
}

// Option text after a letter or on its own: "depressed", "non-depressed",
// "not depressed". Returns the matched length.
inline std::optional<std::pair<Label, std::size_t>> verdict_phrase(std::string_view s) {
    for (std::string_view neg : {"non-depressed", "non depressed", "nondepressed", "not depressed"})
        if (text::istarts_with(s, neg)) return std::pair{Label::NonDepressed, neg.size()};
    if (text::istarts_with(s, "depressed")) return std::pair{Label::Depressed, std::string_view("depressed").size()};
    return std::nullopt;
}

struct VerdictToken {
    Label label;
    std::size_t length;  // bytes consumed
};

// "[A]", "(b).", "A.depressed", "B non-depressed", "a": an option letter
// that is not the start of a longer word, with optional brackets and option text.
inline std::optional<VerdictToken> verdict_token(std::string_view s) {
    std::size_t i = 0;
    while (i < s.size() && (s[i] == '[' || s[i] == '(' || s[i] == '{' || s[i] == '"' || s[i] == '\'' || s[i] == '*' ||
                            s[i] == ' '))
        ++i;
    if (i >= s.size()) return std::nullopt;
    char c = static_cast<char>(std::toupper(static_cast<unsigned char>(s[i])));
    if (c != 'A' && c != 'B') return std::nullopt;
    if (i + 1 < s.size() && is_alnum(s[i + 1])) return std::nullopt;
    Label label = c == 'A' ? Label::Depressed : Label::NonDepressed;
    ++i;
    // closing brackets / separators, then optional option text
    std::size_t j = i;
    while (j < s.size() && (s[j] == ']' || s[j] == ')' || s[j] == '}' || s[j] == '.' || s[j] == ':' || s[j] == ' ' ||
                            s[j] == '"' || s[j] == '\'' || s[j] == '*' || s[j] == '-'))
        ++j;
    if (auto phrase = verdict_phrase(s.substr(j))) {
        j += phrase->second;
        while (j < s.size() && (s[j] == ']' || s[j] == ')' || s[j] == '}' || s[j] == '.' || s[j] == '"' ||
                                s[j] == '\'' || s[j] == '*'))
            ++j;
        return VerdictToken{label, j};
    }
    return VerdictToken{label, i};
}

// Rule 1: "Answer: <verdict>" anywhere on a line start.
inline std::optional<Label> answer_line(std::string_view line) {
    auto s = skip_decoration(line);
    if (!text::istarts_with(s, "answer")) return std::nullopt;
    s.remove_prefix(6);
    while (!s.empty() && (s.front() == ' ' || s.front() == '*')) s.remove_prefix(1);
    if (s.empty() || s.front() != ':') return std::nullopt;
    s.remove_prefix(1);
    while (!s.empty() && (text::is_space(s.front()) || s.front() == '*')) s.remove_prefix(1);
    if (auto phrase = verdict_phrase(s)) return phrase->first;
    if (auto tok = verdict_token(s)) return tok->label;
    return std::nullopt;
}

// Rule 2: a line holding nothing but a verdict token.
inline std::optional<Label> standalone_line(std::string_view line) {
    auto s = text::trim(line);
    if (s.empty()) return std::nullopt;
    auto tok = verdict_token(s);
    if (!tok) return std::nullopt;
    for (char c : s.substr(tok->length))
        if (is_alnum(c)) return std::nullopt;
    return tok->label;
}

// Rule 3: the reply opens with a verdict phrase.
inline std::optional<Label> leading_phrase(std::string_view raw) {
    auto s = skip_decoration(text::trim(raw));
    if (auto phrase = verdict_phrase(s)) return phrase->first;
    return std::nullopt;
}

inline std::vector<std::string_view> split_sentences(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    int depth = 0;
    auto emit = [&](std::size_t end) {
        auto sentence = text::trim(s.substr(start, end - start));
        if (!sentence.empty()) out.push_back(sentence);
        start = end;
    };
    for (std::size_t i = 0; i < s.size(); ++i) {
        char c = s[i];
        if (c == '\n') {
            emit(i);
            depth = 0;
            continue;
        }
        if (c == '(' || c == '[') ++depth;
        if ((c == ')' || c == ']') && depth > 0) --depth;
        if (depth > 0 || (c != '.' && c != '!' && c != '?')) continue;
        std::size_t j = i;
        while (j < s.size() && (s[j] == '.' || s[j] == '!' || s[j] == '?')) ++j;
        const bool ellipsis = j - i >= 2 && s[i] == '.';
        std::size_t k = j;
        while (k < s.size() && s[k] == ' ') ++k;
        const bool boundary = j == s.size() ||
                              (k > j && k < s.size() &&
                               (std::isupper(static_cast<unsigned char>(s[k])) ||
                                std::isdigit(static_cast<unsigned char>(s[k])) || s[k] == '"'));
        if (!ellipsis && boundary) emit(j);
        i = j - 1;
    }
    emit(s.size());
    return out;
}

inline std::string normalize_token(std::string_view tok) {
    while (!tok.empty() && !is_alnum(tok.front())) tok.remove_prefix(1);
    while (!tok.empty() && !is_alnum(tok.back())) tok.remove_suffix(1);
    return text::to_lower(tok);
}

inline std::optional<int> criterion_number(const std::string& tok) {
    if (tok.size() == 1 && tok[0] >= '1' && tok[0] <= '9') return tok[0] - '0';
    return std::nullopt;
}

inline std::optional<int> ordinal_number(const std::string& tok) {
    static constexpr std::array<std::string_view, 9> words = {"first", "second", "third", "fourth", "fifth",
                                                              "sixth", "seventh", "eighth", "ninth"};
    for (std::size_t i = 0; i < words.size(); ++i)
        if (tok == words[i]) return static_cast<int>(i + 1);
    static constexpr std::array<std::string_view, 9> numeric = {"1st", "2nd", "3rd", "4th", "5th",
                                                                "6th", "7th", "8th", "9th"};
    for (std::size_t i = 0; i < numeric.size(); ++i)
        if (tok == numeric[i]) return static_cast<int>(i + 1);
    return std::nullopt;
}

inline bool is_criterion_word(const std::string& tok) {
    return tok == "criterion" || tok == "criteria" || tok == "criterions";
}

inline std::optional<std::string> find_post_id(std::string_view sentence, const std::vector<std::string>& ids) {
    std::optional<std::string> best;
    std::size_t best_pos = std::string_view::npos;
    for (const auto& id : ids) {
        if (id.empty()) continue;
        for (auto pos = sentence.find(id); pos != std::string_view::npos; pos = sentence.find(id, pos + 1)) {
            bool left = pos == 0 || !is_alnum(sentence[pos - 1]);
            bool right = pos + id.size() >= sentence.size() || !is_alnum(sentence[pos + id.size()]);
            if (left && right) {
                if (pos < best_pos) {
                    best_pos = pos;
                    best = id;
                }
                break;
            }
        }
    }
    return best;
}

}  // namespace parser_detail

// Criterion references in an explanation. "criterion"/"criteria" followed
// within three tokens by a digit 1-9 yields that index; failing that, an
// ordinal word up to three tokens before it ("the first criterion") does.
// Snippet = enclosing sentence. Duplicates on (index, snippet) are dropped.
inline std::vector<EvidenceItem> extract_evidence(std::string_view explanation,
                                                  const std::vector<std::string>& known_post_ids = {}) {
    using namespace parser_detail;
    std::vector<EvidenceItem> out;
    std::set<std::pair<int, std::string>> seen;
    for (auto sentence : split_sentences(explanation)) {
        std::vector<std::string> tokens;
        std::size_t i = 0;
        while (i < sentence.size()) {
            while (i < sentence.size() && text::is_space(sentence[i])) ++i;
            std::size_t j = i;
            while (j < sentence.size() && !text::is_space(sentence[j])) ++j;
            if (j > i) tokens.push_back(normalize_token(sentence.substr(i, j - i)));
            i = j;
        }
        const auto post_id = find_post_id(sentence, known_post_ids);
        auto emit = [&](int index) {
            std::string snippet(sentence);
            if (!seen.insert({index, snippet}).second) return;
            out.push_back({post_id, index, std::move(snippet)});
        };
        for (std::size_t t = 0; t < tokens.size(); ++t) {
            if (!is_criterion_word(tokens[t])) continue;
            bool found = false;
            for (std::size_t a = t + 1; a < tokens.size() && a <= t + 3; ++a) {
                if (is_criterion_word(tokens[a])) break;
                if (auto n = criterion_number(tokens[a])) {
                    emit(*n);
                    found = true;
                }
            }
            if (found) continue;
            for (std::size_t back = 1; back <= 3 && back <= t; ++back) {
                if (auto n = ordinal_number(tokens[t - back])) {
                    emit(*n);
                    break;
                }
            }
        }
    }
    return out;
}

// Label by the first rule that matches, in priority order:
//   1. a line "Answer: <A|B>" (case, brackets, periods, option text tolerated)
//   2. a line holding only an option letter
//   3. the reply opening with "depressed" / "non-depressed"
// Explanation = text after the first "Explanation:" marker, trimmed.
inline Diagnosis parse_diagnosis(const std::string& raw, const ExperimentSetting& setting,
                                 const std::vector<std::string>& known_post_ids = {}) {
    using namespace parser_detail;
    if (text::trim(raw).empty()) throw UnparseableOutput(raw);
    const auto lines = text::split_lines(raw);

    std::optional<Label> label;
    for (auto line : lines)
        if ((label = answer_line(line))) break;
    if (!label)
        for (auto line : lines)
            if ((label = standalone_line(line))) break;
    if (!label) label = leading_phrase(raw);
    if (!label) throw UnparseableOutput(raw);

    Diagnosis d;
    d.label = *label;
    d.raw_model_output = raw;
    d.setting = setting;
    if (auto pos = text::ifind(raw, "explanation:"); pos != std::string::npos)
        d.explanation = std::string(text::trim(std::string_view(raw).substr(pos + 12)));
    d.evidence = extract_evidence(d.explanation, known_post_ids);
    return d;
}

}  // namespace chatdiag
