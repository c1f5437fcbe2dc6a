#include "cfgan/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace cfgan::report {
namespace fs = std::filesystem;

std::size_t Table::column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw std::invalid_argument("table has no column " + name);
    return static_cast<std::size_t>(it - header.begin());
}

std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

void write_csv(const fs::path& path, const Table& table) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (std::size_t i = 0; i < table.header.size(); ++i) out << (i ? "," : "") << table.header[i];
    out << '\n';
    for (const auto& row : table.rows) {
        if (row.size() != table.header.size()) throw std::invalid_argument("csv row width differs from header");
        for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << format_number(row[i]);
        out << '\n';
    }
}

Table read_csv(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    Table t;
    std::string line, cell;
    if (!std::getline(in, line)) throw std::runtime_error(path.string() + " is empty");
    std::stringstream hs(line);
    while (std::getline(hs, cell, ',')) t.header.push_back(cell);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream rs(line);
        while (std::getline(rs, cell, ',')) {
            if (cell == "nan") {
                row.push_back(std::nan(""));
                continue;
            }
            double v = 0.0;
            const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
            if (res.ec != std::errc()) throw std::runtime_error("bad number '" + cell + "' in " + path.string());
            row.push_back(v);
        }
        if (row.size() != t.header.size()) throw std::runtime_error("ragged row in " + path.string());
        t.rows.push_back(std::move(row));
    }
    return t;
}

namespace {

const cv::Scalar kPalette[] = {{200, 80, 30}, {40, 40, 200}, {40, 150, 40}, {150, 40, 150}, {20, 140, 200}};

}  // namespace

void plot_table(const Table& table, const PlotSpec& spec, const fs::path& png) {
    constexpr int W = 560, H = 380, left = 60, right = 20, top = 36, bottom = 48;
    cv::Mat canvas(H, W, CV_8UC3, cv::Scalar(255, 255, 255));
    const auto xc = table.column(spec.x_column);

    double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (!table.rows.empty()) {
        x0 = x1 = table.rows.front()[xc];
        for (const auto& r : table.rows) x0 = std::min(x0, r[xc]), x1 = std::max(x1, r[xc]);
    }
    if (!spec.unit_y) {
        bool first = true;
        for (const auto& name : spec.y_columns)
            for (const auto& r : table.rows) {
                const double v = r[table.column(name)];
                if (!std::isfinite(v)) continue;
                y0 = first ? v : std::min(y0, v);
                y1 = first ? v : std::max(y1, v);
                first = false;
            }
        const double pad = (y1 - y0) * 0.05 + 1e-9;
        y0 -= pad;
        y1 += pad;
    }
    if (x1 - x0 < 1e-12) x1 = x0 + 1.0;

    auto px = [&](double x, double y) {
        return cv::Point(left + static_cast<int>(std::lround((x - x0) / (x1 - x0) * (W - left - right))),
                         H - bottom - static_cast<int>(std::lround((y - y0) / (y1 - y0) * (H - top - bottom))));
    };

    const cv::Scalar ink(30, 30, 30), grid(225, 225, 225);
    const auto font = cv::FONT_HERSHEY_SIMPLEX;
    for (int k = 0; k <= 4; ++k) {
        const double y = y0 + (y1 - y0) * k / 4.0;
        cv::line(canvas, px(x0, y), px(x1, y), grid, 1);
        cv::putText(canvas, format_number(std::round(y * 1000) / 1000), {4, px(x0, y).y + 4}, font, 0.35, ink, 1,
                    cv::LINE_AA);
        const double x = x0 + (x1 - x0) * k / 4.0;
        cv::putText(canvas, format_number(std::round(x * 1000) / 1000), {px(x, y0).x - 12, H - bottom + 16}, font,
                    0.35, ink, 1, cv::LINE_AA);
    }
    cv::rectangle(canvas, px(x0, y1), px(x1, y0), ink, 1);
    cv::putText(canvas, spec.title, {left, 22}, font, 0.5, ink, 1, cv::LINE_AA);
    cv::putText(canvas, spec.x_column, {W / 2 - 30, H - 10}, font, 0.45, ink, 1, cv::LINE_AA);

    for (std::size_t s = 0; s < spec.y_columns.size(); ++s) {
        const auto yc = table.column(spec.y_columns[s]);
        const cv::Scalar color = kPalette[s % std::size(kPalette)];
        std::vector<cv::Point> pts;
        for (const auto& r : table.rows)
            if (std::isfinite(r[yc])) pts.push_back(px(r[xc], r[yc]));
        if (pts.size() > 1) cv::polylines(canvas, pts, false, color, 2, cv::LINE_AA);
        for (const auto& p : pts) cv::circle(canvas, p, 3, color, cv::FILLED, cv::LINE_AA);
        const cv::Point key(W - right - 150, top + 14 + static_cast<int>(s) * 16);
        cv::line(canvas, key, key + cv::Point(18, 0), color, 2);
        cv::putText(canvas, spec.y_columns[s], key + cv::Point(24, 4), font, 0.4, ink, 1, cv::LINE_AA);
    }
    if (png.has_parent_path()) fs::create_directories(png.parent_path());
    if (!cv::imwrite(png.string(), canvas)) throw std::runtime_error("cannot write " + png.string());
}

void plot_csv(const fs::path& csv, const PlotSpec& spec, const fs::path& png) { plot_table(read_csv(csv), spec, png); }

}  // namespace cfgan::report
