#pragma once

#include <chrono>
#include <compare>
#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

#include "swm/error.hpp"

namespace swm {

/// UTC instant at hour resolution, stored as hours since 1970-01-01T00.
class UtcHour {
public:
    constexpr UtcHour() = default;
    constexpr explicit UtcHour(std::int64_t epoch_hours) : hours_(epoch_hours) {}

    /// Throws InvalidTimestamp for an impossible calendar date or hour.
    static UtcHour from_civil(int year, unsigned month, unsigned day, unsigned hour) {
        using namespace std::chrono;
        year_month_day ymd{std::chrono::year{year}, std::chrono::month{month}, std::chrono::day{day}};
        if (!ymd.ok() || hour > 23) {
            char buf[64];
            std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02u", year, month, day, hour);
            fail(ErrorCode::InvalidTimestamp, std::string("invalid calendar time ") + buf);
        }
        auto days = sys_days{ymd}.time_since_epoch().count();
        return UtcHour(static_cast<std::int64_t>(days) * 24 + hour);
    }

    /// Strict `YYYY-MM-DDTHH`; minutes and seconds are rejected.
    static UtcHour parse(std::string_view s) {
        auto digits = [&](std::size_t pos, std::size_t n) -> int {
            int v = 0;
            for (std::size_t i = pos; i < pos + n; ++i) {
                if (s[i] < '0' || s[i] > '9') bad(s);
                v = v * 10 + (s[i] - '0');
            }
            return v;
        };
        if (s.size() != 13 || s[4] != '-' || s[7] != '-' || s[10] != 'T') bad(s);
        return from_civil(digits(0, 4), static_cast<unsigned>(digits(5, 2)), static_cast<unsigned>(digits(8, 2)),
                          static_cast<unsigned>(digits(11, 2)));
    }

    constexpr std::int64_t epoch_hours() const { return hours_; }

    std::chrono::year_month_day date() const {
        using namespace std::chrono;
        return year_month_day{sys_days{days{floor_div(hours_, 24)}}};
    }
    int year() const { return static_cast<int>(date().year()); }
    unsigned month() const { return static_cast<unsigned>(date().month()); }
    unsigned day() const { return static_cast<unsigned>(date().day()); }
    unsigned hour() const { return static_cast<unsigned>(hours_ - floor_div(hours_, 24) * 24); }
    /// 1-based ordinal day within the year.
    unsigned day_of_year() const {
        using namespace std::chrono;
        auto d = date();
        auto jan1 = sys_days{d.year() / January / 1};
        return static_cast<unsigned>((sys_days{d} - jan1).count()) + 1;
    }

    std::string iso() const {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02u", year(), month(), day(), hour());
        return buf;
    }

    constexpr auto operator<=>(const UtcHour&) const = default;

private:
    static constexpr std::int64_t floor_div(std::int64_t a, std::int64_t b) {
        return a / b - ((a % b != 0) && ((a < 0) != (b < 0)));
    }
    [[noreturn]] static void bad(std::string_view s) {
        fail(ErrorCode::InvalidTimestamp, "expected YYYY-MM-DDTHH, got '" + std::string(s) + "'");
    }

    std::int64_t hours_ = 0;
};

inline UtcHour now_utc_hour() {
    using namespace std::chrono;
    return UtcHour(duration_cast<hours>(system_clock::now().time_since_epoch()).count());
}

} // namespace swm
