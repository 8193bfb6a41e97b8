#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "vsa/base64.hpp"
#include "vsa/functions/types.hpp"

namespace vsa::orchestrator {

enum class Role { user, assistant, function };

inline const char* to_string(Role r)
{
    switch (r) {
    case Role::user:
        return "user";
    case Role::assistant:
        return "assistant";
    case Role::function:
        return "function";
    }
    return "?";
}

inline std::optional<Role> role_from_string(const std::string& s)
{
    if (s == "user")
        return Role::user;
    if (s == "assistant")
        return Role::assistant;
    if (s == "function")
        return Role::function;
    return std::nullopt;
}

struct Turn {
    Role role = Role::user;
    std::string content;
    std::optional<std::string> image_ref;
    std::optional<functions::FunctionResult> attached_result; // always set on function turns

    bool operator==(const Turn&) const = default;
};

inline nlohmann::json turn_to_json(const Turn& t)
{
    nlohmann::json j = {{"role", to_string(t.role)}, {"content", t.content}};
    j["image_ref"] = t.image_ref ? nlohmann::json(*t.image_ref) : nlohmann::json(nullptr);
    j["attached_result"] = t.attached_result ? nlohmann::json(*t.attached_result) : nlohmann::json(nullptr);
    return j;
}

inline Turn turn_from_json(const nlohmann::json& j)
{
    Turn t;
    const auto role = role_from_string(j.at("role").get<std::string>());
    if (!role)
        throw std::invalid_argument("unknown turn role");
    t.role = *role;
    t.content = j.at("content").get<std::string>();
    if (j.contains("image_ref") && !j["image_ref"].is_null())
        t.image_ref = j["image_ref"].get<std::string>();
    if (j.contains("attached_result") && !j["attached_result"].is_null())
        t.attached_result = j["attached_result"].get<functions::FunctionResult>();
    return t;
}

inline std::int64_t now_ms()
{
    using namespace std::chrono;
    return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

/// Content-addressed image id (FNV-1a 64 of the bytes).
inline std::string image_id_for(std::string_view bytes)
{
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    char buf[24];
    std::snprintf(buf, sizeof buf, "img-%016llx", static_cast<unsigned long long>(h));
    return buf;
}

/// Conversation state. Turns are append-only.
struct Session {
    std::string id;
    std::vector<Turn> turns;
    std::map<std::string, std::string> image_store; // image id -> bytes
    std::int64_t created_at = 0;
    std::int64_t updated_at = 0;

    void append(Turn t)
    {
        turns.push_back(std::move(t));
        updated_at = now_ms();
    }

    std::string add_image(std::string bytes)
    {
        auto id = image_id_for(bytes);
        image_store.emplace(id, std::move(bytes));
        return id;
    }
};

inline nlohmann::json session_to_json(const Session& s, bool include_images = false)
{
    nlohmann::json turns = nlohmann::json::array();
    for (const auto& t : s.turns)
        turns.push_back(turn_to_json(t));
    nlohmann::json images = nlohmann::json::array();
    for (const auto& [id, bytes] : s.image_store)
        images.push_back(id);
    nlohmann::json j = {{"id", s.id},
                        {"turns", turns},
                        {"images", images},
                        {"created_at", s.created_at},
                        {"updated_at", s.updated_at}};
    if (include_images) {
        nlohmann::json data = nlohmann::json::object();
        for (const auto& [id, bytes] : s.image_store)
            data[id] = base64_encode(bytes);
        j["image_data"] = data;
    }
    return j;
}

inline Session session_from_json(const nlohmann::json& j)
{
    Session s;
    s.id = j.at("id").get<std::string>();
    for (const auto& t : j.at("turns"))
        s.turns.push_back(turn_from_json(t));
    s.created_at = j.value("created_at", std::int64_t{0});
    s.updated_at = j.value("updated_at", std::int64_t{0});
    if (j.contains("image_data"))
        for (const auto& [id, b64] : j["image_data"].items())
            if (auto bytes = base64_decode(b64.get<std::string>()))
                s.image_store[id] = *bytes;
    return s;
}

/// Ticket lock: waiters acquire in arrival order.
class FifoMutex {
public:
    void lock()
    {
        std::unique_lock lk(m_);
        const std::uint64_t ticket = next_++;
        cv_.wait(lk, [&] { return serving_ == ticket; });
    }

    void unlock()
    {
        {
            std::lock_guard lk(m_);
            ++serving_;
        }
        cv_.notify_all();
    }

private:
    std::mutex m_;
    std::condition_variable cv_;
    std::uint64_t next_ = 0;
    std::uint64_t serving_ = 0;
};

struct SessionSlot {
    Session session;
    FifoMutex dispatch; // one in-flight query per session, FIFO
};

/// In-memory session table with optional directory persistence (<dir>/<id>.json).
class SessionStore {
public:
    explicit SessionStore(std::optional<std::filesystem::path> dir = std::nullopt) : dir_(std::move(dir))
    {
        if (!dir_)
            return;
        std::filesystem::create_directories(*dir_);
        for (const auto& e : std::filesystem::directory_iterator(*dir_)) {
            if (e.path().extension() != ".json")
                continue;
            std::ifstream in(e.path());
            std::ostringstream os;
            os << in.rdbuf();
            try {
                auto slot = std::make_shared<SessionSlot>();
                slot->session = session_from_json(nlohmann::json::parse(os.str()));
                sessions_[slot->session.id] = slot;
                counter_ = std::max(counter_, sessions_.size());
            } catch (const std::exception&) {
                // Unreadable session files are skipped; traces remain the audit record.
            }
        }
    }

    std::shared_ptr<SessionSlot> create()
    {
        std::lock_guard lk(m_);
        std::string id;
        do {
            char buf[32];
            std::snprintf(buf, sizeof buf, "s-%06zu", ++counter_);
            id = buf;
        } while (sessions_.count(id));
        auto slot = std::make_shared<SessionSlot>();
        slot->session.id = id;
        slot->session.created_at = slot->session.updated_at = now_ms();
        sessions_[id] = slot;
        return slot;
    }

    std::shared_ptr<SessionSlot> get(const std::string& id) const
    {
        std::lock_guard lk(m_);
        const auto it = sessions_.find(id);
        return it == sessions_.end() ? nullptr : it->second;
    }

    /// Writes the session file atomically (tmp + rename). Caller holds the session's dispatch lock.
    void persist(const Session& s) const
    {
        if (!dir_)
            return;
        const auto final_path = *dir_ / (s.id + ".json");
        const auto tmp = *dir_ / (s.id + ".json.tmp");
        {
            std::ofstream out(tmp, std::ios::trunc);
            out << session_to_json(s, true).dump() << "\n";
        }
        std::filesystem::rename(tmp, final_path);
    }

    std::size_t size() const
    {
        std::lock_guard lk(m_);
        return sessions_.size();
    }

private:
    std::optional<std::filesystem::path> dir_;
    mutable std::mutex m_;
    std::map<std::string, std::shared_ptr<SessionSlot>> sessions_;
    std::size_t counter_ = 0;
};

} // namespace vsa::orchestrator
