#ifndef CURVD_REPORT_IO_HPP
#define CURVD_REPORT_IO_HPP

// CSV and image artifacts. Doubles are printed with 17 significant digits so
// a written file reads back to the identical value.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "datasets.hpp"
#include "error.hpp"
#include "metrics.hpp"

namespace curvd {

inline std::string format_double(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string format_optional(const std::optional<double>& v)
{
    return v ? format_double(*v) : std::string{};
}

namespace detail {

inline std::ofstream open_output(const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot write " + path.string());
    return out;
}

inline std::vector<std::string> split_csv_line(const std::string& line)
{
    std::vector<std::string> fields;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ','))
        fields.push_back(field);
    if (!line.empty() && line.back() == ',')
        fields.emplace_back();
    return fields;
}

inline double parse_double(const std::string& text, const std::string& where)
{
    try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used != text.size())
            throw FormatError(where + ": trailing characters in '" + text + "'");
        return v;
    } catch (const std::logic_error&) {
        throw FormatError(where + ": not a number: '" + text + "'");
    }
}

inline long long parse_integer(const std::string& text, const std::string& where)
{
    try {
        std::size_t used = 0;
        const long long v = std::stoll(text, &used);
        if (used != text.size())
            throw FormatError(where + ": trailing characters in '" + text + "'");
        return v;
    } catch (const std::logic_error&) {
        throw FormatError(where + ": not an integer: '" + text + "'");
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// ScoreReport CSV: index,label,corrupted,score

inline constexpr const char* score_csv_header = "index,label,corrupted,score";

inline void write_score_csv(const ScoreReport& report, const std::filesystem::path& path)
{
    report.validate();
    auto out = detail::open_output(path);
    out << score_csv_header << '\n';
    for (std::size_t i = 0; i < report.size(); ++i) {
        out << report.indices[i] << ',' << report.labels[i] << ',';
        if (report.corrupted)
            out << ((*report.corrupted)[i] ? 1 : 0);
        out << ',' << format_double(report.scores[i]) << '\n';
    }
}

inline ScoreReport read_score_csv(const std::filesystem::path& path, ScoreKind kind = ScoreKind::external)
{
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != score_csv_header)
        throw FormatError(path.string() + ": expected header '" + score_csv_header + "'");
    ScoreReport report;
    report.kind = kind;
    std::vector<bool> flags;
    bool any_flag = false;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty())
            continue;
        const auto where = path.string() + ":" + std::to_string(row);
        const auto fields = detail::split_csv_line(line);
        if (fields.size() != 4)
            throw FormatError(where + ": expected 4 fields");
        const long long index = detail::parse_integer(fields[0], where);
        if (index < 0)
            throw FormatError(where + ": negative index");
        report.indices.push_back(static_cast<std::size_t>(index));
        report.labels.push_back(static_cast<int>(detail::parse_integer(fields[1], where)));
        if (!fields[2].empty()) {
            any_flag = true;
            flags.push_back(detail::parse_integer(fields[2], where) != 0);
        } else {
            flags.push_back(false);
        }
        report.scores.push_back(detail::parse_double(fields[3], where));
    }
    if (any_flag)
        report.corrupted = std::move(flags);
    report.validate();
    return report;
}

// ---------------------------------------------------------------------------
// Corruption mask CSV: index,original_label,assigned_label,corrupted

inline void write_mask_csv(const CorruptionMask& mask, const std::filesystem::path& path)
{
    auto out = detail::open_output(path);
    out << "index,original_label,assigned_label,corrupted\n";
    for (std::size_t i = 0; i < mask.corrupted.size(); ++i)
        out << i << ',' << mask.original_labels[i] << ',' << mask.assigned_labels[i] << ','
            << (mask.corrupted[i] ? 1 : 0) << '\n';
}

inline CorruptionMask read_mask_csv(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "index,original_label,assigned_label,corrupted")
        throw FormatError(path.string() + ": unexpected mask header");
    CorruptionMask mask;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty())
            continue;
        const auto where = path.string() + ":" + std::to_string(row);
        const auto fields = detail::split_csv_line(line);
        if (fields.size() != 4)
            throw FormatError(where + ": expected 4 fields");
        if (detail::parse_integer(fields[0], where) != static_cast<long long>(mask.corrupted.size()))
            throw FormatError(where + ": indices must be dense and sorted");
        mask.original_labels.push_back(static_cast<int>(detail::parse_integer(fields[1], where)));
        mask.assigned_labels.push_back(static_cast<int>(detail::parse_integer(fields[2], where)));
        mask.corrupted.push_back(detail::parse_integer(fields[3], where) != 0);
    }
    return mask;
}

// ---------------------------------------------------------------------------
// Histogram CSV: bin,lower,upper,count,flagged

inline void write_histogram_csv(const Histogram& hist, const std::filesystem::path& path,
                                const std::optional<Histogram>& flagged = std::nullopt)
{
    auto out = detail::open_output(path);
    out << "bin,lower,upper,count" << (flagged ? ",flagged" : "") << '\n';
    if (hist.scale == BinScale::log) {
        out << "underflow,,0," << hist.underflow;
        if (flagged)
            out << ',' << flagged->underflow;
        out << '\n';
    }
    for (std::size_t b = 0; b < hist.counts.size(); ++b) {
        out << b << ',' << format_double(hist.edges[b]) << ',' << format_double(hist.edges[b + 1]) << ','
            << hist.counts[b];
        if (flagged)
            out << ',' << flagged->counts[b];
        out << '\n';
    }
}

// ---------------------------------------------------------------------------
// Image export

/// Writes a binary PGM (P5, maxval 255) with bytes round(255 * pixel).
inline void write_pgm(const std::filesystem::path& path, const Eigen::Ref<const Vector>& pixels, ImageShape shape)
{
    if (pixels.size() != static_cast<Eigen::Index>(shape.rows) * shape.cols)
        throw ShapeError("image has " + std::to_string(pixels.size()) + " pixels, shape needs " +
                         std::to_string(shape.rows * shape.cols));
    auto out = detail::open_output(path);
    out << "P5\n" << shape.cols << ' ' << shape.rows << "\n255\n";
    std::vector<char> bytes(static_cast<std::size_t>(pixels.size()));
    for (Eigen::Index i = 0; i < pixels.size(); ++i)
        bytes[static_cast<std::size_t>(i)] =
            static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(pixels(i), 0.0, 1.0) * 255.0)));
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

/// Dumps the k highest (or lowest) scoring samples as `<rank>_<index>_<label>.pgm`.
inline std::vector<std::filesystem::path> export_topk_images(const Dataset& ds, const ScoreReport& report,
                                                             std::size_t k, const std::filesystem::path& dir,
                                                             bool lowest = false)
{
    if (!ds.image)
        throw UnsupportedError("image export needs a dataset with image geometry");
    std::vector<std::filesystem::path> files;
    if (k == 0)
        return files;
    std::filesystem::create_directories(dir);
    const auto ranked = rank_top(report, k, lowest);
    for (std::size_t r = 0; r < ranked.size(); ++r) {
        const auto index = ranked[r];
        if (index >= ds.size())
            throw AlignmentError("report index " + std::to_string(index) + " outside the dataset");
        const auto path = dir / (std::to_string(r) + "_" + std::to_string(index) + "_" +
                                 std::to_string(ds.labels[index]) + ".pgm");
        write_pgm(path, ds.inputs.col(static_cast<Eigen::Index>(index)), *ds.image);
        files.push_back(path);
    }
    return files;
}

} // namespace curvd

#endif // CURVD_REPORT_IO_HPP
