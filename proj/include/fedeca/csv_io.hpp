#pragma once
#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "fedeca/domain.hpp"
#include "fedeca/errors.hpp"

namespace fedeca {

// ============================================================================
// Cohort CSV contract: header `X_0,...,X_{p-1},treated,T,E`, one row per
// patient. Floats are written with the shortest representation that parses
// back to the same binary64 value, so a write/read cycle is bit-exact.
// ============================================================================

inline std::string format_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view text, const std::string& where) {
    double v = 0.0;
    const char* first = text.data();
    const char* last = text.data() + text.size();
    const auto res = std::from_chars(first, last, v);
    if (res.ec != std::errc{} || res.ptr != last)
        throw data_error("invalid number '" + std::string(text) + "' " + where);
    return v;
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    return fields;
}

inline std::string cohort_header(Eigen::Index p) {
    std::string header;
    for (Eigen::Index j = 0; j < p; ++j) header += "X_" + std::to_string(j) + ",";
    header += "treated,T,E";
    return header;
}

inline void write_cohort_csv(const CenterCohort& cohort, std::ostream& out) {
    out << cohort_header(cohort.num_covariates()) << '\n';
    for (Eigen::Index i = 0; i < cohort.size(); ++i) {
        for (Eigen::Index j = 0; j < cohort.num_covariates(); ++j)
            out << format_double(cohort.covariates()(i, j)) << ',';
        out << (cohort.treatment()[static_cast<std::size_t>(i)] ? '1' : '0') << ','
            << format_double(cohort.time()[i]) << ','
            << (cohort.event()[static_cast<std::size_t>(i)] ? '1' : '0') << '\n';
    }
}

inline void write_cohort_csv(const CenterCohort& cohort, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw data_error("cannot open for writing: " + path);
    write_cohort_csv(cohort, out);
}

inline CenterCohort read_cohort_csv(std::istream& in, int center_id, const std::string& name) {
    std::string line;
    if (!std::getline(in, line)) throw data_error("empty cohort file: " + name);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split_csv_line(line);
    if (header.size() < 3 || header[header.size() - 3] != "treated" ||
        header[header.size() - 2] != "T" || header[header.size() - 1] != "E")
        throw data_error("bad cohort header in " + name + ": expected X_*,treated,T,E");

    std::vector<std::vector<double>> rows;
    std::size_t row_index = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != header.size())
            throw data_error("row " + std::to_string(row_index) + " of " + name + " has " +
                             std::to_string(fields.size()) + " fields, expected " +
                             std::to_string(header.size()));
        std::vector<double> row;
        row.reserve(fields.size());
        for (std::size_t j = 0; j < fields.size(); ++j)
            row.push_back(parse_double(fields[j],
                                       "at row " + std::to_string(row_index) + ", column " +
                                           std::string(header[j]) + " of " + name));
        rows.push_back(std::move(row));
        ++row_index;
    }
    return validate_cohort(rows, center_id);
}

inline CenterCohort read_cohort_csv(const std::string& path, int center_id = 0) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open cohort file: " + path);
    return read_cohort_csv(in, center_id, path);
}

} // namespace fedeca
