#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tabtext/error.hpp"

namespace tabtext {

using json = nlohmann::json;

/// Calls fn(record, line_number) for every non-blank line of a JSONL file.
/// Parse failures raise MalformedRecord naming the file and 1-based line.
void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(const json&, size_t)>& fn);

/// Like for_each_jsonl but hands the raw line to fn and lets it decide how
/// to treat parse failures.
void for_each_line(const std::filesystem::path& path,
                   const std::function<void(const std::string&, size_t)>& fn);

/// Writes one compact record per line. Object keys are emitted in sorted
/// order, which makes the output canonical.
void write_jsonl(const std::filesystem::path& path, const std::vector<json>& records);

std::string dump_canonical(const json& value);

/// Typed field access that reports schema problems as MalformedRecord.
template <typename T>
T field(const json& record, const char* name, size_t line)
{
    auto it = record.find(name);
    if (it == record.end()) {
        throw Error(ErrorKind::MalformedRecord,
                    "line " + std::to_string(line) + ": missing field '" + name + "'");
    }
    try {
        return it->get<T>();
    } catch (const json::exception&) {
        throw Error(ErrorKind::MalformedRecord,
                    "line " + std::to_string(line) + ": field '" + name + "' has the wrong type");
    }
}

std::ofstream open_output(const std::filesystem::path& path, bool binary = false);
std::ifstream open_input(const std::filesystem::path& path, bool binary = false);

}  // namespace tabtext
