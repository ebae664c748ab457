#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "bdlab/config.hpp"

namespace bdlab {

inline constexpr const char* kToolVersion = "0.1.0";

/// Shortest round-trip-safe rendering used in every CSV cell.
std::string format_number(double v);

class CsvTable {
public:
    explicit CsvTable(std::vector<std::string> header);

    void add_row(std::vector<std::string> cells);
    std::size_t rows() const { return rows_.size(); }
    std::string str() const;

private:
    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

struct RunManifest {
    std::string command;
    Json config = Json::object();
    std::vector<std::pair<std::string, std::uint64_t>> seeds;
    std::vector<std::pair<std::string, std::string>> inputs;   // path, sha256
    std::vector<std::pair<std::string, std::string>> outputs;  // path relative to the output root, sha256
    std::string tool_version = kToolVersion;

    Json to_json() const;
};

// ---- plots -----------------------------------------------------------------

enum class PlotKind { Histogram, Density, Scatter, ClusterScatter };

std::string to_string(PlotKind k);

enum class SeriesRole { Neutral, Clean, Poisoned };

struct Series {
    std::string label;
    std::vector<double> x;  // histogram: bin edges (n + 1)
    std::vector<double> y;  // histogram: counts (n)
    SeriesRole role = SeriesRole::Neutral;
};

struct PlotSpec {
    PlotKind kind = PlotKind::Scatter;
    std::string title;
    std::string x_label;
    std::string y_label;
    std::vector<Series> series;
};

std::string render_svg(const PlotSpec& spec);
void render_plot(const PlotSpec& spec, const std::filesystem::path& path);

}  // namespace bdlab
