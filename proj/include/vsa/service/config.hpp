#pragma once

// Service configuration: one `key = value` per line, '#' starts a comment.
// Every key can be overridden by the environment variable VSA_<KEY> (upper case).

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vsa/functions/fixtures.hpp"
#include "vsa/orchestrator/backend.hpp"
#include "vsa/protocol/structured_reply.hpp"

namespace vsa::service {

struct ConfigError : std::runtime_error {
    std::string source;
    std::size_t line = 0; // 0 when the value came from the environment or a cross-field check
    std::string field;

    ConfigError(std::string src, std::size_t ln, std::string fld, const std::string& msg)
        : std::runtime_error(describe(src, ln, fld, msg)), source(std::move(src)), line(ln), field(std::move(fld))
    {
    }

    static std::string describe(const std::string& src, std::size_t ln, const std::string& fld, const std::string& msg)
    {
        std::string s = src;
        if (ln)
            s += ":" + std::to_string(ln);
        if (!fld.empty())
            s += ": field '" + fld + "'";
        return s + ": " + msg;
    }
};

struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::string backend = "scripted"; // scripted | remote
    std::optional<std::filesystem::path> script;
    orchestrator::RemoteBackendConfig remote;
    std::optional<std::filesystem::path> fixtures; // unset: built-in synthetic bundle
    std::vector<std::string> functions = functions::function_names(3);
    int backend_timeout_ms = 30000;
    int function_timeout_ms = 10000;
    std::optional<std::filesystem::path> trace_dir;
    std::optional<std::filesystem::path> session_dir;
    std::optional<std::filesystem::path> lexicon;
    std::size_t max_image_bytes = 8u << 20;
    int threads = 8;
};

/// Recognized keys, in documentation order.
inline const std::vector<std::string>& config_keys()
{
    static const std::vector<std::string> keys = {
        "host",       "port",         "backend",           "script",          "remote_url",
        "remote_path", "remote_model", "remote_images",    "remote_attempts", "fixtures",
        "functions",  "backend_timeout_ms", "function_timeout_ms", "trace_dir", "session_dir",
        "lexicon",    "max_image_bytes", "threads"};
    return keys;
}

namespace detail {

inline long long parse_int(const std::string& v, long long lo, long long hi, const std::function<void(std::string)>& fail)
{
    std::size_t used = 0;
    long long n = 0;
    try {
        n = std::stoll(v, &used);
    } catch (const std::exception&) {
        fail("'" + v + "' is not an integer");
    }
    if (used != v.size())
        fail("'" + v + "' is not an integer");
    if (n < lo || n > hi)
        fail(v + " is outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    return n;
}

inline std::vector<std::string> split_list(const std::string& v)
{
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ','))
        if (auto t = std::string(protocol::trim(item)); !t.empty())
            out.push_back(t);
    return out;
}

} // namespace detail

/// Applies one key. Throws ConfigError naming source/line/field.
inline void set_config_value(ServiceConfig& c, const std::string& key, const std::string& value,
                             const std::string& source, std::size_t line)
{
    auto fail = [&](const std::string& msg) { throw ConfigError(source, line, key, msg); };
    auto path = [&] { return value.empty() ? std::nullopt : std::optional<std::filesystem::path>(value); };
    if (key == "host") {
        if (value.empty())
            fail("must not be empty");
        c.host = value;
    } else if (key == "port") {
        c.port = static_cast<int>(detail::parse_int(value, 0, 65535, fail));
    } else if (key == "backend") {
        if (value != "scripted" && value != "remote")
            fail("must be 'scripted' or 'remote', got '" + value + "'");
        c.backend = value;
    } else if (key == "script") {
        c.script = path();
    } else if (key == "remote_url") {
        c.remote.endpoint.base_url = value;
    } else if (key == "remote_path") {
        c.remote.endpoint.path = value.empty() ? "/" : value;
    } else if (key == "remote_model") {
        c.remote.model = value;
    } else if (key == "remote_images") {
        if (value == "reference")
            c.remote.images = orchestrator::ImageTransport::reference;
        else if (value == "base64")
            c.remote.images = orchestrator::ImageTransport::base64;
        else
            fail("must be 'reference' or 'base64', got '" + value + "'");
    } else if (key == "remote_attempts") {
        c.remote.endpoint.max_attempts = static_cast<int>(detail::parse_int(value, 1, 20, fail));
    } else if (key == "fixtures") {
        c.fixtures = path();
    } else if (key == "functions") {
        auto names = detail::split_list(value);
        if (names.empty())
            fail("needs at least one function name");
        const auto known = functions::function_names(6);
        for (const auto& n : names)
            if (std::find(known.begin(), known.end(), n) == known.end())
                fail("unknown function '" + n + "'");
        c.functions = names;
    } else if (key == "backend_timeout_ms") {
        c.backend_timeout_ms = static_cast<int>(detail::parse_int(value, 1, 3600000, fail));
        c.remote.endpoint.timeout_ms = c.backend_timeout_ms;
    } else if (key == "function_timeout_ms") {
        c.function_timeout_ms = static_cast<int>(detail::parse_int(value, 1, 3600000, fail));
    } else if (key == "trace_dir") {
        c.trace_dir = path();
    } else if (key == "session_dir") {
        c.session_dir = path();
    } else if (key == "lexicon") {
        c.lexicon = path();
    } else if (key == "max_image_bytes") {
        c.max_image_bytes = static_cast<std::size_t>(detail::parse_int(value, 1, 1ll << 32, fail));
    } else if (key == "threads") {
        c.threads = static_cast<int>(detail::parse_int(value, 1, 256, fail));
    } else {
        fail("unknown key");
    }
}

inline void parse_config_text(ServiceConfig& c, const std::string& text, const std::string& source)
{
    std::istringstream in(text);
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        auto line = std::string(protocol::trim(raw));
        if (line.empty() || line[0] == '#')
            continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(source, line_no, "", "expected 'key = value'");
        const auto key = std::string(protocol::trim(std::string_view(line).substr(0, eq)));
        const auto value = std::string(protocol::trim(std::string_view(line).substr(eq + 1)));
        if (key.empty())
            throw ConfigError(source, line_no, "", "missing key before '='");
        set_config_value(c, key, value, source, line_no);
    }
}

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

inline EnvLookup process_env()
{
    return [](const std::string& name) -> std::optional<std::string> {
        if (const char* v = std::getenv(name.c_str()))
            return std::string(v);
        return std::nullopt;
    };
}

inline void apply_env(ServiceConfig& c, const EnvLookup& env)
{
    for (const auto& key : config_keys()) {
        std::string name = "VSA_";
        for (char ch : key)
            name += static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
        if (auto v = env(name))
            set_config_value(c, key, *v, "environment " + name, 0);
    }
}

inline void validate_config(const ServiceConfig& c)
{
    if (c.backend == "remote" && c.remote.endpoint.base_url.empty())
        throw ConfigError("config", 0, "remote_url", "required when backend = remote");
    if (c.backend == "scripted" && c.script && !std::filesystem::is_regular_file(*c.script))
        throw ConfigError("config", 0, "script", "no such file: " + c.script->string());
    if (c.fixtures && !std::filesystem::is_directory(*c.fixtures))
        throw ConfigError("config", 0, "fixtures", "no such directory: " + c.fixtures->string());
    if (c.lexicon && !std::filesystem::is_regular_file(*c.lexicon))
        throw ConfigError("config", 0, "lexicon", "no such file: " + c.lexicon->string());
}

/// Defaults, then the file (if any), then VSA_* variables; validated.
inline ServiceConfig load_config(const std::optional<std::filesystem::path>& file, const EnvLookup& env = process_env())
{
    ServiceConfig c;
    if (file) {
        std::ifstream in(*file);
        if (!in)
            throw ConfigError(file->string(), 0, "", "cannot read config file");
        std::ostringstream os;
        os << in.rdbuf();
        parse_config_text(c, os.str(), file->string());
    }
    apply_env(c, env);
    validate_config(c);
    return c;
}

} // namespace vsa::service
