#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace dpiqa {

// Error raised for violated preconditions and unrecoverable runtime failures.
// The CLI maps ConfigError to exit code 1 and everything else to 2.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

namespace detail {
template <typename... Args>
std::string format_msg(Args&&... args) {
    std::ostringstream oss;
    (oss << ... << args);
    return oss.str();
}
}  // namespace detail

template <typename... Args>
[[noreturn]] void fail(Args&&... args) {
    throw Error(detail::format_msg(std::forward<Args>(args)...));
}

template <typename... Args>
void check(bool cond, Args&&... args) {
    if (!cond) fail(std::forward<Args>(args)...);
}

template <typename... Args>
[[noreturn]] void fail_config(Args&&... args) {
    throw ConfigError(detail::format_msg(std::forward<Args>(args)...));
}

template <typename... Args>
void check_config(bool cond, Args&&... args) {
    if (!cond) fail_config(std::forward<Args>(args)...);
}

}  // namespace dpiqa
