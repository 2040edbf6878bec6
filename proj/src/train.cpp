#include "sadcoeff/train.hpp"

#include "sadcoeff/errors.hpp"

#include <cmath>
#include <sstream>

namespace sadcoeff {

void TrainHistory::add(long step, std::vector<double> row) {
    if (row.size() != columns.size()) throw InvalidArgument("TrainHistory: row width mismatch");
    steps.push_back(step);
    values.push_back(std::move(row));
}

std::string TrainHistory::to_csv() const {
    std::ostringstream os;
    os << "step";
    for (const auto& c : columns) os << ',' << c;
    os << '\n';
    for (std::size_t i = 0; i < steps.size(); ++i) {
        os << steps[i];
        for (double v : values[i]) os << ',' << format_double(v);
        os << '\n';
    }
    return os.str();
}

TrainHistory TrainHistory::from_csv(const std::string& text) {
    TrainHistory h;
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw FormatError("history: empty file");
    {
        std::stringstream ss(line);
        std::string cell;
        std::getline(ss, cell, ',');
        if (cell != "step") throw FormatError("history: first column must be 'step'");
        while (std::getline(ss, cell, ',')) h.columns.push_back(cell);
    }
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::getline(ss, cell, ',');
        const long step = std::stol(cell);
        std::vector<double> row;
        while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
        h.add(step, std::move(row));
    }
    return h;
}

std::vector<double> TrainHistory::column(const std::string& name) const {
    for (std::size_t c = 0; c < columns.size(); ++c) {
        if (columns[c] != name) continue;
        std::vector<double> out;
        out.reserve(values.size());
        for (const auto& row : values) out.push_back(row[c]);
        return out;
    }
    throw InvalidArgument("TrainHistory: no column '" + name + "'");
}

namespace {

CoefMatrix column_coef(std::span<const double> v) {
    return CoefMatrix::from_values(static_cast<std::uint32_t>(v.size()), 1, v);
}

std::vector<double> read_column(const std::filesystem::path& path, std::size_t expected) {
    const CoefMatrix m = read_coef(path);
    if (m.dim != 1 || m.rows != expected) {
        throw FormatError(path.string() + ": expected " + std::to_string(expected) + " x 1");
    }
    return std::vector<double>(m.data.begin(), m.data.end());
}

}  // namespace

void save_param_set(const std::filesystem::path& dir, const std::string& name, const nn::ParamSet& params,
                    const nn::Adam& opt) {
    std::filesystem::create_directories(dir);
    write_coef(dir / (name + "_params.coef"), column_coef(params.flatten()));
    write_coef(dir / (name + "_adam_m.coef"), column_coef(opt.first_moment()));
    write_coef(dir / (name + "_adam_v.coef"), column_coef(opt.second_moment()));
    write_text_file(dir / (name + "_manifest.txt"), params.manifest());
}

void load_param_set(const std::filesystem::path& dir, const std::string& name, nn::ParamSet& params, nn::Adam* opt) {
    const auto manifest_path = dir / (name + "_manifest.txt");
    if (!std::filesystem::exists(manifest_path)) throw std::runtime_error("missing checkpoint " + manifest_path.string());
    params.check_manifest(read_text_file(manifest_path));
    const std::size_t n = params.total_size();
    params.load_flat(read_column(dir / (name + "_params.coef"), n));
    if (opt != nullptr) {
        opt->restore(load_train_step(dir), read_column(dir / (name + "_adam_m.coef"), n),
                     read_column(dir / (name + "_adam_v.coef"), n));
    }
}

void save_train_state(const std::filesystem::path& dir, long step, const RunConfig& cfg) {
    std::filesystem::create_directories(dir);
    write_text_file(dir / "state.txt", "step = " + std::to_string(step) + "\n");
    write_text_file(dir / "config.txt", cfg.to_text());
}

long load_train_step(const std::filesystem::path& dir) {
    const std::string text = read_text_file(dir / "state.txt");
    const auto eq = text.find('=');
    if (eq == std::string::npos) throw FormatError("state.txt: expected 'step = N'");
    return std::stol(text.substr(eq + 1));
}

RunConfig load_train_config(const std::filesystem::path& dir) { return load_config(dir / "config.txt"); }

void require_finite(double value, const char* stage, long step, const char* component) {
    if (!std::isfinite(value)) {
        throw NonFiniteLoss(std::string(stage) + ": non-finite " + component + " at step " + std::to_string(step));
    }
}

}  // namespace sadcoeff
