#pragma once

#include <optional>
#include <string>
#include <vector>

#include "metachain/chain_generator.hpp"
#include "metachain/core.hpp"
#include "metachain/meta_reasoner.hpp"

namespace metachain::prompt_registry {

/// One prompt file parsed into its instruction and exemplar blocks.
struct PromptSection {
    std::string instruction;
    std::vector<std::string> exemplars;
};

/// All prompts registered for one dataset within a prompt set. The meta
/// section reads question/answer context lines; meta_evidence reads
/// question/evidence lines and exists only for datasets that ship one.
/// meta_all_facts is an alternate explanation style for fact verification
/// (list every checked fact, not only corrections).
struct PromptSet {
    std::string set_name;
    std::string dataset;
    PromptSection decomposition;
    PromptSection meta;
    std::optional<PromptSection> meta_evidence;
    std::optional<PromptSection> meta_all_facts;

    chain_generator::DecompositionPromptSpec decomposition_spec() const;

    /// Spec for the requested context variant; all_facts swaps in the
    /// alternate exemplars. Throws ConfigError when the section is missing.
    meta_reasoner::MetaPromptSpec meta_spec(ContextVariant variant, bool all_facts = false) const;
};

/// File format: instruction text, then exemplar blocks, separated by lines
/// containing exactly "#". Blank segments (e.g. from a trailing separator)
/// are dropped. Throws ConfigError on an empty instruction or no exemplars.
PromptSection parse_prompt_file(const std::string& path);

/// Loads and validates prompts/<set_name>/<dataset>/: the manifest pins each
/// section's exemplar count, decomposition exemplars must carry the
/// decomposition markers, meta exemplars the meta answer marker, and
/// sections with "balanced_labels" must have equally many exemplars per
/// label. Violations throw ConfigError naming the offending file.
PromptSet load_prompt_set(const std::string& root, const std::string& set_name,
                          const std::string& dataset);

/// Dataset directories under prompts/<set_name>/, sorted.
std::vector<std::string> list_datasets(const std::string& root, const std::string& set_name);

}  // namespace metachain::prompt_registry
