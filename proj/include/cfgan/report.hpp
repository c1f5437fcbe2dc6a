#pragma once

// CSV tables and line plots. Plots are rendered from the CSV alone, so they can be
// regenerated byte for byte from the table.

#include <filesystem>
#include <string>
#include <vector>

namespace cfgan::report {

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;

    std::size_t column(const std::string& name) const;
};

// Values use the shortest round-trip representation, so reading back is exact.
std::string format_number(double v);
void write_csv(const std::filesystem::path& path, const Table& table);
Table read_csv(const std::filesystem::path& path);

struct PlotSpec {
    std::string title;
    std::string x_column;
    std::vector<std::string> y_columns;
    bool unit_y = true;  // fix the y axis to [0, 1]
};

// Renders the chosen columns of a table as polylines on a fixed-size canvas.
void plot_table(const Table& table, const PlotSpec& spec, const std::filesystem::path& png);
void plot_csv(const std::filesystem::path& csv, const PlotSpec& spec, const std::filesystem::path& png);

}  // namespace cfgan::report
