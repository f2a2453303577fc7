#pragma once

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace voxgan::io {

/// Shortest round-trip decimal form of a double (locale-independent).
inline std::string fmt_double(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    if (ec != std::errc()) throw std::runtime_error("fmt_double: conversion failed");
    return std::string(buf, p);
}

/// Minimal CSV writer: comma separated, no quoting (fields never contain commas).
class CsvWriter {
public:
    explicit CsvWriter(std::ostream& os) : os_(os) {}

    CsvWriter& header(const std::vector<std::string>& cols) {
        row_strings(cols);
        return *this;
    }

    template <class... Ts>
    CsvWriter& row(const Ts&... fields) {
        bool first = true;
        ((os_ << (first ? "" : ",") << cell(fields), first = false), ...);
        os_ << '\n';
        return *this;
    }

    CsvWriter& row_strings(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) os_ << (i ? "," : "") << cells[i];
        os_ << '\n';
        return *this;
    }

private:
    static std::string cell(double v) { return fmt_double(v); }
    static std::string cell(const std::string& s) { return s; }
    static std::string cell(const char* s) { return s; }
    static std::string cell(char c) { return std::string(1, c); }
    template <class T>
    static std::string cell(const T& v) requires std::is_integral_v<T> {
        return std::to_string(v);
    }

    std::ostream& os_;
};

/// Parsed CSV: header plus rows of string cells.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(std::string_view name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        throw std::out_of_range("csv: missing column '" + std::string(name) + "'");
    }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

inline CsvTable read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    CsvTable t;
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty csv: " + path);
    t.header = split_csv_line(line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto cells = split_csv_line(line);
        if (cells.size() != t.header.size())
            throw std::runtime_error("csv " + path + ": row has " + std::to_string(cells.size()) + " cells, expected " +
                                     std::to_string(t.header.size()));
        t.rows.push_back(std::move(cells));
    }
    return t;
}

}  // namespace voxgan::io
