#include "bubblesched/common.hpp"

#include <cctype>
#include <cstdio>
#include <limits>

namespace bubblesched {

Duration parse_millis(std::string_view text)
{
    auto fail = [&](const char* why) {
        return ConfigError("invalid duration '" + std::string(text) + "': " + why);
    };
    if (text.empty()) {
        throw fail("empty");
    }
    std::size_t pos = 0;
    std::int64_t whole = 0;
    bool digits = false;
    while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) {
        whole = whole * 10 + (text[pos] - '0');
        if (whole > std::numeric_limits<std::int64_t>::max() / 1'000'000'000) {
            throw fail("too large");
        }
        digits = true;
        ++pos;
    }
    std::int64_t frac_ns = 0;
    if (pos < text.size() && text[pos] == '.') {
        ++pos;
        // Milliseconds have six decimal digits of nanoseconds.
        std::int64_t scale = 100'000;
        while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) {
            int d = text[pos] - '0';
            if (scale == 0) {
                if (d != 0) {
                    throw fail("finer than 1 ns");
                }
            } else {
                frac_ns += d * scale;
                scale /= 10;
            }
            digits = true;
            ++pos;
        }
    }
    if (!digits || pos != text.size()) {
        throw fail("expected a non-negative decimal number of milliseconds");
    }
    return Duration{whole * 1'000'000 + frac_ns};
}

std::string format_millis(Duration d)
{
    std::int64_t ns = d.count();
    bool negative = ns < 0;
    if (negative) {
        ns = -ns;
    }
    char buf[48];
    std::snprintf(buf, sizeof buf, "%s%lld.%06lld", negative ? "-" : "",
                  static_cast<long long>(ns / 1'000'000), static_cast<long long>(ns % 1'000'000));
    return buf;
}

std::string to_string(ActorId actor)
{
    switch (actor.kind) {
    case ActorId::Kind::cpu:
        return "cpu" + std::to_string(actor.index);
    case ActorId::Kind::daemon:
        return "d" + std::to_string(actor.index);
    case ActorId::Kind::timer:
        return "timer";
    case ActorId::Kind::external:
        return "x" + std::to_string(actor.index);
    }
    return "?";
}

}  // namespace bubblesched
