#include "bdlab/report.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

namespace bdlab {

std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (v == 0) return "0";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

CsvTable::CsvTable(std::vector<std::string> header) : header_(std::move(header)) {
    if (header_.empty()) throw Error("csv: empty header");
}

void CsvTable::add_row(std::vector<std::string> cells) {
    if (cells.size() != header_.size())
        throw Error("csv: row has " + std::to_string(cells.size()) + " cells, header has " +
                    std::to_string(header_.size()));
    rows_.push_back(std::move(cells));
}

namespace {

std::string csv_cell(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

void csv_line(std::ostringstream& os, const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << csv_cell(cells[i]);
    os << "\n";
}

}  // namespace

std::string CsvTable::str() const {
    std::ostringstream os;
    csv_line(os, header_);
    for (const auto& r : rows_) csv_line(os, r);
    return os.str();
}

Json RunManifest::to_json() const {
    Json seeds_j = Json::object();
    for (const auto& [k, v] : seeds) seeds_j[k] = v;
    Json in = Json::array();
    for (const auto& [p, h] : inputs) in.push_back({{"path", p}, {"sha256", h}});
    Json out = Json::array();
    for (const auto& [p, h] : outputs) out.push_back({{"path", p}, {"sha256", h}});
    return Json{{"command", command},   {"tool_version", tool_version}, {"seeds", seeds_j},
                {"config", config},     {"inputs", in},                 {"outputs", out}};
}

}  // namespace bdlab
