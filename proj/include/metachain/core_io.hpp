#pragma once

#include <fstream>
#include <istream>
#include <sstream>
#include <string>
#include <vector>

namespace metachain {

template <typename T>
std::vector<T> read_jsonl(std::istream& in, const std::string& source_name) {
    std::vector<T> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(json::parse(line).template get<T>());
        } catch (const std::exception& e) {
            throw ConfigError(source_name + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

template <typename T>
std::vector<T> read_jsonl_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path);
    return read_jsonl<T>(in, path);
}

template <typename T>
void write_jsonl_file(const std::string& path, const std::vector<T>& rows) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path);
    for (const T& row : rows) {
        out << json(row).dump() << '\n';
    }
}

}  // namespace metachain
