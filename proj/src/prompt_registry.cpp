#include "metachain/prompt_registry.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "metachain/evaluation.hpp"
#include "metachain/text.hpp"

namespace fs = std::filesystem;

namespace metachain::prompt_registry {

namespace {

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open prompt file: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::string trim_block(const std::string& s) {
    size_t begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    size_t end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

void require_marker(const PromptSection& section, const std::string& marker,
                    const std::string& file) {
    for (size_t i = 0; i < section.exemplars.size(); ++i) {
        if (section.exemplars[i].find(marker) == std::string::npos) {
            throw ConfigError(file + ": exemplar " + std::to_string(i + 1) +
                              " is missing the marker \"" + marker + "\"");
        }
    }
}

/// The label an exemplar demonstrates: the answer after its last
/// "So the answer is:" line, normalized.
std::string exemplar_label(const std::string& exemplar, const std::string& marker) {
    size_t pos = exemplar.rfind(marker);
    if (pos == std::string::npos) return "";
    std::string rest = exemplar.substr(pos + marker.size());
    size_t eol = rest.find('\n');
    if (eol != std::string::npos) rest = rest.substr(0, eol);
    return evaluation::normalize_answer(text::strip_answer_decorations(rest));
}

void check_label_balance(const PromptSection& section, const std::vector<std::string>& labels,
                         const std::string& marker, const std::string& file) {
    std::vector<int> counts(labels.size(), 0);
    for (size_t i = 0; i < section.exemplars.size(); ++i) {
        std::string got = exemplar_label(section.exemplars[i], marker);
        bool matched = false;
        for (size_t l = 0; l < labels.size(); ++l) {
            if (got == evaluation::normalize_answer(labels[l])) {
                ++counts[l];
                matched = true;
                break;
            }
        }
        if (!matched) {
            throw ConfigError(file + ": exemplar " + std::to_string(i + 1) +
                              " answers \"" + got + "\", not one of the balanced labels");
        }
    }
    for (size_t l = 1; l < labels.size(); ++l) {
        if (counts[l] != counts[0]) {
            throw ConfigError(file + ": unbalanced labels, " + labels[0] + "=" +
                              std::to_string(counts[0]) + " vs " + labels[l] + "=" +
                              std::to_string(counts[l]));
        }
    }
}

struct SectionSpec {
    std::string file;
    int exemplars = 0;
    std::vector<std::string> balanced_labels;
};

SectionSpec section_spec(const json& j, const std::string& manifest_path) {
    SectionSpec spec;
    if (!j.contains("file") || !j.contains("exemplars")) {
        throw ConfigError(manifest_path + ": section needs \"file\" and \"exemplars\"");
    }
    spec.file = j.at("file").get<std::string>();
    spec.exemplars = j.at("exemplars").get<int>();
    if (j.contains("balanced_labels")) {
        spec.balanced_labels = j.at("balanced_labels").get<std::vector<std::string>>();
    }
    return spec;
}

PromptSection load_section(const fs::path& dir, const SectionSpec& spec,
                           const std::string& marker_kind) {
    fs::path path = dir / spec.file;
    PromptSection section = parse_prompt_file(path.string());
    if (static_cast<int>(section.exemplars.size()) != spec.exemplars) {
        throw ConfigError(path.string() + ": manifest pins " + std::to_string(spec.exemplars) +
                          " exemplars, file has " + std::to_string(section.exemplars.size()));
    }
    chain_generator::DecompositionMarkers markers;
    meta_reasoner::MetaPromptSpec meta_defaults;
    if (marker_kind == "decomposition") {
        require_marker(section, "Question:", path.string());
        require_marker(section, markers.final_answer, path.string());
        require_marker(section, markers.need_followups, path.string());
    } else {
        require_marker(section, "Context:", path.string());
        require_marker(section, "Question:", path.string());
        require_marker(section, meta_defaults.answer_marker, path.string());
        if (!spec.balanced_labels.empty()) {
            check_label_balance(section, spec.balanced_labels, meta_defaults.answer_marker,
                                path.string());
        }
    }
    return section;
}

}  // namespace

PromptSection parse_prompt_file(const std::string& path) {
    std::string content = read_file(path);
    std::vector<std::string> segments;
    std::string current;
    std::istringstream lines(content);
    std::string line;
    while (std::getline(lines, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line == "#") {
            segments.push_back(current);
            current.clear();
        } else {
            current += line;
            current += '\n';
        }
    }
    segments.push_back(current);

    PromptSection section;
    bool have_instruction = false;
    for (const auto& segment : segments) {
        std::string block = trim_block(segment);
        if (block.empty()) continue;
        if (!have_instruction) {
            section.instruction = block;
            have_instruction = true;
        } else {
            section.exemplars.push_back(block);
        }
    }
    if (!have_instruction) throw ConfigError(path + ": prompt file has no instruction");
    if (section.exemplars.empty()) throw ConfigError(path + ": prompt file has no exemplars");
    return section;
}

chain_generator::DecompositionPromptSpec PromptSet::decomposition_spec() const {
    chain_generator::DecompositionPromptSpec spec;
    spec.instruction = decomposition.instruction;
    spec.exemplars = decomposition.exemplars;
    return spec;
}

meta_reasoner::MetaPromptSpec PromptSet::meta_spec(ContextVariant variant, bool all_facts) const {
    const PromptSection* section = nullptr;
    if (all_facts) {
        if (!meta_all_facts) {
            throw ConfigError("prompt set " + set_name + "/" + dataset +
                              " has no all-facts meta prompt");
        }
        section = &*meta_all_facts;
    } else if (variant == ContextVariant::evidence_pairs) {
        if (!meta_evidence) {
            throw ConfigError("prompt set " + set_name + "/" + dataset +
                              " has no evidence-context meta prompt (required by scr_e/mcr_e)");
        }
        section = &*meta_evidence;
    } else {
        section = &meta;
    }
    meta_reasoner::MetaPromptSpec spec;
    spec.instruction = section->instruction;
    spec.exemplars = section->exemplars;
    if (all_facts) spec.feverous_mode = meta_reasoner::FeverousMode::all_facts;
    return spec;
}

PromptSet load_prompt_set(const std::string& root, const std::string& set_name,
                          const std::string& dataset) {
    fs::path dir = fs::path(root) / set_name / dataset;
    fs::path manifest_path = dir / "manifest.json";
    if (!fs::exists(manifest_path)) {
        throw ConfigError("no prompt set at " + dir.string() + " (missing manifest.json)");
    }
    json manifest;
    try {
        std::ifstream in(manifest_path);
        manifest = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(manifest_path.string() + ": " + e.what());
    }

    PromptSet set;
    set.set_name = set_name;
    set.dataset = manifest.value("dataset", dataset);
    if (set.dataset != dataset) {
        throw ConfigError(manifest_path.string() + ": manifest is for dataset \"" + set.dataset +
                          "\", expected \"" + dataset + "\"");
    }
    if (!manifest.contains("decomposition") || !manifest.contains("meta")) {
        throw ConfigError(manifest_path.string() +
                          ": manifest needs \"decomposition\" and \"meta\" sections");
    }
    set.decomposition =
        load_section(dir, section_spec(manifest.at("decomposition"), manifest_path.string()),
                     "decomposition");
    set.meta = load_section(dir, section_spec(manifest.at("meta"), manifest_path.string()), "meta");
    if (manifest.contains("meta_evidence")) {
        set.meta_evidence = load_section(
            dir, section_spec(manifest.at("meta_evidence"), manifest_path.string()), "meta");
    }
    if (manifest.contains("meta_all_facts")) {
        set.meta_all_facts = load_section(
            dir, section_spec(manifest.at("meta_all_facts"), manifest_path.string()), "meta");
    }
    return set;
}

std::vector<std::string> list_datasets(const std::string& root, const std::string& set_name) {
    fs::path dir = fs::path(root) / set_name;
    if (!fs::is_directory(dir)) throw ConfigError("no prompt set directory: " + dir.string());
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_directory() && fs::exists(entry.path() / "manifest.json")) {
            names.push_back(entry.path().filename().string());
        }
    }
    std::sort(names.begin(), names.end());
    return names;
}

}  // namespace metachain::prompt_registry
