#pragma once

#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "chatdiag/text.hpp"

namespace chatdiag {

enum class Section {
    Question,
    Options,
    DiagnosisCriteria,
    Demonstrations,
    Posts,
    AnswerCandidate,
    Answer,
    Explanation,
    Instruction,
    Diagnosis,
    DialogueHistory,
    Input,
};

inline const char* to_string(Section s) {
    switch (s) {
    case Section::Question: return "Question";
    case Section::Options: return "Options";
    case Section::DiagnosisCriteria: return "Diagnosis criteria";
    case Section::Demonstrations: return "Demonstrations";
    case Section::Posts: return "Posts";
    case Section::AnswerCandidate: return "Answer candidate";
    case Section::Answer: return "Answer";
    case Section::Explanation: return "Explanation";
    case Section::Instruction: return "Instruction";
    case Section::Diagnosis: return "Diagnosis";
    case Section::DialogueHistory: return "Dialogue history";
    case Section::Input: return "Input";
    }
    return "?";
}

// ceil(scalar values / ratio). Monotone in text length.
inline long token_estimate(std::string_view text, double chars_per_token = 4.0) {
    if (text.empty()) return 0;
    return static_cast<long>(std::ceil(static_cast<double>(text::count_scalars(text)) / chars_per_token));
}

struct PromptText {
    std::string body;
    long estimated_tokens = 0;
    std::vector<Section> sections;

    static PromptText plain(std::string body, double chars_per_token = 4.0) {
        PromptText p;
        p.estimated_tokens = token_estimate(body, chars_per_token);
        p.body = std::move(body);
        return p;
    }
};

}  // namespace chatdiag
