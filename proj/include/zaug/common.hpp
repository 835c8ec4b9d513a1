#ifndef ZAUG_COMMON_HPP
#define ZAUG_COMMON_HPP

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace zaug {

inline constexpr const char* kToolkitName = "zaug";
inline constexpr const char* kToolkitVersion = "0.1.0";

// All recoverable failures surface as zaug::Error; the CLI turns them into
// a one-line "error: <what>" plus a nonzero exit code.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {
template <typename... Args>
std::string format_msg(Args&&... args) {
    std::ostringstream os;
    (os << ... << args);
    return os.str();
}
}  // namespace detail

#define ZAUG_CHECK(cond, ...)                                             \
    do {                                                                  \
        if (!(cond)) throw ::zaug::Error(::zaug::detail::format_msg(__VA_ARGS__)); \
    } while (0)

// FNV-1a, used for config/model provenance hashes.
inline std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t seed = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

inline std::string hash_string(const std::string& s) { return hex64(fnv1a64(s.data(), s.size())); }

}  // namespace zaug

#endif
