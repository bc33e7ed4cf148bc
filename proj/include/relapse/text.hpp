#pragma once
#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

namespace relapse {
namespace detail {

// Shortest decimal representation that round-trips the double exactly.
inline std::string fmt_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    if (std::strtod(buf, nullptr) == x) {
        for (int prec = 1; prec < 17; ++prec) {
            char probe[40];
            std::snprintf(probe, sizeof probe, "%.*g", prec, x);
            if (std::strtod(probe, nullptr) == x) return probe;
        }
    }
    return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace detail
}  // namespace relapse
