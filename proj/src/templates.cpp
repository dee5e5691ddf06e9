#include "pace/templates.hpp"

#include <cctype>
#include <cstdint>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "pace/error.hpp"

namespace pace {

namespace {

const char* kActorDefault =
    "Instruction: [TASK_INSTRUCTION],\n"
    "Input: [INPUT],\n"
    "Output:";

const char* kCriticDefault =
    "I gave you an instruction:[TASK_INSTRUCTION]. Based on this instruction they produced the "
    "following input-prediction pairs and the corresponding ground truth:\n"
    "Input: [INPUT],\n"
    "Prediction: [PREDICTION],\n"
    "Ground Truth: [GROUNDTRUTH],\n"
    "According to Input, Prediction, and Ground Truth, give the critical advice on how to improve "
    "the instruction:";

const char* kUpdateDefault =
    "I gave you an instruction:[TASK_INSTRUCTION]. Based on the instruction they produced the "
    "following critical advices: [Critical_Advices]. Taking these critical advices into "
    "consideration, the improved instruction was:";

} // namespace

TemplateSet TemplateSet::defaults() {
    return TemplateSet{kActorDefault, kCriticDefault, kUpdateDefault};
}

TemplateSet TemplateSet::load_overrides(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorKind::config, "cannot read template file: " + path);
    }
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::config, std::string("template file is not valid JSON: ") + e.what());
    }
    TemplateSet set = defaults();
    if (doc.contains("actor")) set.actor_template = doc.at("actor").get<std::string>();
    if (doc.contains("critic")) set.critic_template = doc.at("critic").get<std::string>();
    if (doc.contains("update")) set.update_template = doc.at("update").get<std::string>();
    return set;
}

std::string substitute(const std::string& tmpl,
                       const std::vector<std::pair<std::string, std::string>>& slots) {
    std::string out;
    out.reserve(tmpl.size());
    std::size_t i = 0;
    while (i < tmpl.size()) {
        bool replaced = false;
        for (const auto& [placeholder, value] : slots) {
            if (!placeholder.empty() && tmpl.compare(i, placeholder.size(), placeholder) == 0) {
                out += value;
                i += placeholder.size();
                replaced = true;
                break;
            }
        }
        if (!replaced) {
            out += tmpl[i];
            ++i;
        }
    }
    return out;
}

std::string render_actor(const Prompt& prompt, const std::string& input, const TemplateSet& templates) {
    return substitute(templates.actor_template,
                      {{"[TASK_INSTRUCTION]", prompt.text}, {"[INPUT]", input}});
}

std::string join_references(const std::vector<std::string>& references) {
    std::string out;
    for (std::size_t i = 0; i < references.size(); ++i) {
        if (i > 0) out += " | ";
        out += references[i];
    }
    return out;
}

std::string render_critic(const Prompt& prompt, const std::string& input, const std::string& prediction,
                          const std::string& ground_truth, const TemplateSet& templates) {
    return substitute(templates.critic_template, {{"[TASK_INSTRUCTION]", prompt.text},
                                                  {"[INPUT]", input},
                                                  {"[PREDICTION]", prediction},
                                                  {"[GROUNDTRUTH]", ground_truth}});
}

std::string render_critic(const Prompt& prompt, const std::string& input, const std::string& prediction,
                          const std::vector<std::string>& references, const TemplateSet& templates) {
    return render_critic(prompt, input, prediction, join_references(references), templates);
}

std::string aggregate_advices(const std::vector<std::string>& critiques) {
    std::string out;
    for (std::size_t i = 0; i < critiques.size(); ++i) {
        if (i > 0) out += '\n';
        out += "Advice " + std::to_string(i + 1) + ": " + critiques[i];
    }
    return out;
}

std::string render_update(const Prompt& prompt, const std::vector<std::string>& critiques,
                          const TemplateSet& templates) {
    if (critiques.empty()) {
        throw Error(ErrorKind::data, "no critiques to aggregate");
    }
    return render_update_raw(prompt, aggregate_advices(critiques), templates);
}

std::string render_update_raw(const Prompt& prompt, const std::string& advices_text,
                              const TemplateSet& templates) {
    return substitute(templates.update_template,
                      {{"[TASK_INSTRUCTION]", prompt.text}, {"[Critical_Advices]", advices_text}});
}

namespace {

std::string trim(const std::string& s) {
    std::size_t begin = 0;
    std::size_t end = s.size();
    while (begin < end && std::isspace(static_cast<unsigned char>(s[begin]))) ++begin;
    while (end > begin && std::isspace(static_cast<unsigned char>(s[end - 1]))) --end;
    return s.substr(begin, end - begin);
}

bool iequals_prefix(const std::string& s, const std::string& prefix) {
    if (s.size() < prefix.size()) return false;
    for (std::size_t i = 0; i < prefix.size(); ++i) {
        if (std::tolower(static_cast<unsigned char>(s[i])) !=
            std::tolower(static_cast<unsigned char>(prefix[i]))) {
            return false;
        }
    }
    return true;
}

} // namespace

Prompt extract_prompt(const std::string& update_response) {
    std::string text = trim(update_response);
    if (text.size() >= 2 && text.front() == '"' && text.back() == '"') {
        text = trim(text.substr(1, text.size() - 2));
    }
    const std::string label = "Improved instruction:";
    if (iequals_prefix(text, label)) {
        text = trim(text.substr(label.size()));
    }
    if (text.empty()) {
        throw Error(ErrorKind::data, "empty updated prompt");
    }
    return Prompt{text, PromptOrigin::edited};
}

std::string content_hash(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    std::ostringstream out;
    out << std::hex;
    for (int shift = 60; shift >= 0; shift -= 4) {
        out << ((h >> shift) & 0xF);
    }
    return out.str();
}

} // namespace pace
