#pragma once

#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "vsa/functions/types.hpp"
#include "vsa/result.hpp"

namespace vsa::functions {

using Params = std::map<std::string, std::string>;

/// What a function may look at besides its parameters.
struct CallContext {
    using Lookup = std::function<std::optional<std::string>(const std::string&)>;
    std::optional<std::string> image_ref;
    /// Raw bytes of an image reference (session store or fixture bundle); nullopt if unknown.
    Lookup image_bytes;
};

enum class FailureCause { transport, schema, validation, timeout, missing_input, internal };

inline const char* to_string(FailureCause c)
{
    switch (c) {
    case FailureCause::transport:
        return "transport";
    case FailureCause::schema:
        return "schema";
    case FailureCause::validation:
        return "validation";
    case FailureCause::timeout:
        return "timeout";
    case FailureCause::missing_input:
        return "missing_input";
    case FailureCause::internal:
        return "internal";
    }
    return "?";
}

/// Thrown by implementations; the dispatcher turns it into a FunctionFailed error.
struct FunctionFailure : std::runtime_error {
    FailureCause cause;
    FunctionFailure(FailureCause c, const std::string& msg) : std::runtime_error(msg), cause(c) {}
};

using FunctionImpl = std::function<FunctionResult(const Params&, const CallContext&)>;

struct DuplicateName : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct UnknownFunction {
    std::string api_name;
};

/// Surgical function set. Lookup is by exact api_name; listing keeps registration order.
class Registry {
public:
    struct Entry {
        FunctionSpec spec;
        FunctionImpl impl;
    };

    void register_function(FunctionSpec spec, FunctionImpl impl)
    {
        if (index_.count(spec.api_name))
            throw DuplicateName("function '" + spec.api_name + "' is already registered");
        index_[spec.api_name] = entries_.size();
        entries_.push_back({std::move(spec), std::move(impl)});
    }

    std::vector<FunctionSpec> list() const
    {
        std::vector<FunctionSpec> specs;
        specs.reserve(entries_.size());
        for (const auto& e : entries_)
            specs.push_back(e.spec);
        return specs;
    }

    Result<const Entry*, UnknownFunction> lookup(const std::string& api_name) const
    {
        const auto it = index_.find(api_name);
        if (it == index_.end())
            return unexpected(UnknownFunction{api_name});
        return &entries_[it->second];
    }

    std::size_t size() const { return entries_.size(); }

private:
    std::vector<Entry> entries_;
    std::map<std::string, std::size_t> index_;
};

} // namespace vsa::functions
