#pragma once

#include <string>
#include <vector>

#include "pace/core.hpp"

namespace pace {

// The three role templates. Defaults are the fixed actor/critic/update
// texts this project ships with; see tests/fixtures/templates/ for the
// byte-exact reference copies.
struct TemplateSet {
    std::string actor_template;
    std::string critic_template;
    std::string update_template;

    static TemplateSet defaults();

    // Override file: JSON with optional keys actor / critic / update;
    // a missing key keeps the default.
    static TemplateSet load_overrides(const std::string& path);
};

// Single-pass placeholder substitution: values are inserted verbatim and
// never re-expanded, placeholders missing from the template are ignored.
std::string substitute(const std::string& tmpl,
                       const std::vector<std::pair<std::string, std::string>>& slots);

std::string render_actor(const Prompt& prompt, const std::string& input, const TemplateSet& templates);

// Multiple acceptable references are joined with " | " for the
// [GROUNDTRUTH] slot.
std::string join_references(const std::vector<std::string>& references);

std::string render_critic(const Prompt& prompt, const std::string& input, const std::string& prediction,
                          const std::string& ground_truth, const TemplateSet& templates);
std::string render_critic(const Prompt& prompt, const std::string& input, const std::string& prediction,
                          const std::vector<std::string>& references, const TemplateSet& templates);

// "Advice 1: <c1>\nAdvice 2: <c2>\n..." in the given order.
std::string aggregate_advices(const std::vector<std::string>& critiques);

std::string render_update(const Prompt& prompt, const std::vector<std::string>& critiques,
                          const TemplateSet& templates);

// Same as render_update but with the advice slot text supplied directly
// (used by the ablation modes, which fill the slot with actor transcripts
// or leave it empty).
std::string render_update_raw(const Prompt& prompt, const std::string& advices_text,
                              const TemplateSet& templates);

// Parse the model's completion of an update call back into a Prompt:
// trims whitespace, strips one pair of enclosing double quotes, strips a
// leading "Improved instruction:" label (case-insensitive).
Prompt extract_prompt(const std::string& update_response);

// Stable 64-bit content hash, hex-encoded; used for template fixtures and
// artifact headers.
std::string content_hash(const std::string& text);

} // namespace pace
