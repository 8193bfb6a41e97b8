#pragma once

#include <stdexcept>
#include <utility>
#include <variant>

namespace vsa {

template <class E>
struct Unexpected {
    E error;
};

template <class E>
Unexpected<std::decay_t<E>> unexpected(E&& e)
{
    return {std::forward<E>(e)};
}

/// Minimal value-or-error holder in the spirit of std::expected (not available in C++20).
template <class T, class E>
class Result {
public:
    using value_type = T;
    using error_type = E;

    Result(T value) : storage_(std::in_place_index<0>, std::move(value)) {}
    template <class G>
    Result(Unexpected<G> e) : storage_(std::in_place_index<1>, E(std::move(e.error)))
    {
    }

    bool has_value() const noexcept { return storage_.index() == 0; }
    explicit operator bool() const noexcept { return has_value(); }

    T& value() &
    {
        if (!has_value())
            throw std::logic_error("Result::value() called on an error");
        return std::get<0>(storage_);
    }
    const T& value() const&
    {
        if (!has_value())
            throw std::logic_error("Result::value() called on an error");
        return std::get<0>(storage_);
    }
    T&& value() &&
    {
        if (!has_value())
            throw std::logic_error("Result::value() called on an error");
        return std::get<0>(std::move(storage_));
    }

    E& error() & { return std::get<1>(storage_); }
    const E& error() const& { return std::get<1>(storage_); }

    T& operator*() & { return value(); }
    const T& operator*() const& { return value(); }
    T* operator->() { return &value(); }
    const T* operator->() const { return &value(); }

private:
    std::variant<T, E> storage_;
};

} // namespace vsa
