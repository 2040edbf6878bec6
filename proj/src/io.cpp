#include "sadcoeff/io.hpp"

#include "sadcoeff/errors.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace sadcoeff {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t off) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[off + i]) << (8 * i);
    return v;
}

}  // namespace

Eigen::MatrixXd CoefMatrix::to_matrix() const {
    Eigen::MatrixXd m(rows, dim);
    for (std::uint32_t r = 0; r < rows; ++r)
        for (std::uint32_t c = 0; c < dim; ++c) m(r, c) = at(r, c);
    return m;
}

std::vector<double> CoefMatrix::row(std::size_t r) const {
    return std::vector<double>(data.begin() + static_cast<std::ptrdiff_t>(r * dim),
                               data.begin() + static_cast<std::ptrdiff_t>((r + 1) * dim));
}

CoefMatrix CoefMatrix::from_matrix(const Eigen::MatrixXd& m) {
    CoefMatrix c;
    c.rows = static_cast<std::uint32_t>(m.rows());
    c.dim = static_cast<std::uint32_t>(m.cols());
    c.data.resize(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index k = 0; k < m.cols(); ++k) c.data[static_cast<std::size_t>(r * m.cols() + k)] = static_cast<float>(m(r, k));
    return c;
}

CoefMatrix CoefMatrix::from_values(std::uint32_t rows, std::uint32_t dim, std::span<const double> values) {
    if (values.size() != static_cast<std::size_t>(rows) * dim) {
        throw InvalidArgument("CoefMatrix: payload size does not match rows*dim");
    }
    CoefMatrix c;
    c.rows = rows;
    c.dim = dim;
    c.data.reserve(values.size());
    for (double v : values) c.data.push_back(static_cast<float>(v));
    return c;
}

std::vector<std::uint8_t> encode_coef(const CoefMatrix& m) {
    if (m.data.size() != static_cast<std::size_t>(m.rows) * m.dim) {
        throw InvalidArgument("encode_coef: payload size does not match rows*dim");
    }
    std::vector<std::uint8_t> out;
    out.reserve(16 + 4 * m.data.size());
    out.insert(out.end(), kCoefMagic.begin(), kCoefMagic.end());
    put_u32(out, kCoefVersion);
    put_u32(out, m.rows);
    put_u32(out, m.dim);
    for (float f : m.data) put_u32(out, std::bit_cast<std::uint32_t>(f));
    return out;
}

CoefMatrix decode_coef(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 16) throw FormatError("COEF: truncated header");
    for (int i = 0; i < 4; ++i) {
        if (static_cast<char>(bytes[i]) != kCoefMagic[i]) throw FormatError("COEF: bad magic");
    }
    if (get_u32(bytes, 4) != kCoefVersion) throw FormatError("COEF: unsupported version");
    CoefMatrix m;
    m.rows = get_u32(bytes, 8);
    m.dim = get_u32(bytes, 12);
    const std::uint64_t n = static_cast<std::uint64_t>(m.rows) * m.dim;
    if (bytes.size() != 16 + 4 * n) throw FormatError("COEF: payload length does not match rows*dim*4");
    m.data.resize(n);
    for (std::uint64_t i = 0; i < n; ++i) m.data[i] = std::bit_cast<float>(get_u32(bytes, 16 + 4 * i));
    return m;
}

void write_coef(const std::filesystem::path& path, const CoefMatrix& m) {
    const auto bytes = encode_coef(m);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("write failed: " + path.string());
}

CoefMatrix read_coef(const std::filesystem::path& path) {
    const auto bytes = read_binary_file(path);
    try {
        return decode_coef(bytes);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path.string());
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << text;
    if (!f) throw std::runtime_error("write failed: " + path.string());
}

std::uint64_t file_checksum(const std::filesystem::path& path) {
    std::uint64_t h = 1469598103934665603ULL;
    for (std::uint8_t b : read_binary_file(path)) {
        h ^= b;
        h *= 1099511628211ULL;
    }
    return h;
}

Image::Image(int w, int h, std::array<std::uint8_t, 3> fill) : width(w), height(h) {
    if (w <= 0 || h <= 0) throw InvalidArgument("Image: non-positive size");
    rgb.resize(static_cast<std::size_t>(w) * h * 3);
    for (std::size_t i = 0; i < rgb.size(); i += 3) {
        rgb[i] = fill[0];
        rgb[i + 1] = fill[1];
        rgb[i + 2] = fill[2];
    }
}

void Image::set(int x, int y, std::array<std::uint8_t, 3> color) {
    if (x < 0 || y < 0 || x >= width || y >= height) return;
    const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
    rgb[i] = color[0];
    rgb[i + 1] = color[1];
    rgb[i + 2] = color[2];
}

std::array<std::uint8_t, 3> Image::get(int x, int y) const {
    const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
    return {rgb[i], rgb[i + 1], rgb[i + 2]};
}

void write_ppm(const std::filesystem::path& path, const Image& image) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << "P6\n" << image.width << ' ' << image.height << "\n255\n";
    f.write(reinterpret_cast<const char*>(image.rgb.data()), static_cast<std::streamsize>(image.rgb.size()));
}

Image read_ppm(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path.string());
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    f >> magic >> w >> h >> maxval;
    if (magic != "P6" || maxval != 255) throw FormatError("PPM: only binary P6 with maxval 255 is supported");
    f.get();
    Image img(w, h);
    f.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
    if (!f) throw FormatError("PPM: truncated pixel data");
    return img;
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// ---- config ---------------------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double parse_number(const std::string& v, const std::string& key) {
    double out = 0.0;
    const char* end = v.data() + v.size();
    auto [ptr, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || ptr != end || !std::isfinite(out)) {
        throw FormatError("config: key '" + key + "' expects a number, got '" + v + "'");
    }
    return out;
}

int parse_int(const std::string& v, const std::string& key) {
    const double d = parse_number(v, key);
    if (d != std::floor(d) || std::abs(d) > 2e9) throw FormatError("config: key '" + key + "' expects an integer");
    return static_cast<int>(d);
}

std::array<int, 4> parse_widths(const std::string& v, const std::string& key) {
    std::array<int, 4> out{};
    std::stringstream ss(v);
    std::string item;
    int n = 0;
    while (std::getline(ss, item, ',')) {
        if (n >= 4) throw FormatError("config: key '" + key + "' expects exactly 4 comma-separated widths");
        out[n++] = parse_int(trim(item), key);
    }
    if (n != 4) throw FormatError("config: key '" + key + "' expects exactly 4 comma-separated widths");
    return out;
}

std::string widths_text(const std::array<int, 4>& w) {
    return std::to_string(w[0]) + "," + std::to_string(w[1]) + "," + std::to_string(w[2]) + "," + std::to_string(w[3]);
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = [] {
        std::map<std::string, Setter> t;
        auto num = [](double RunConfig::*f) {
            return [f](RunConfig& c, const std::string& k, const std::string& v) { c.*f = parse_number(v, k); };
        };
        auto integer = [](int RunConfig::*f) {
            return [f](RunConfig& c, const std::string& k, const std::string& v) { c.*f = parse_int(v, k); };
        };
        auto widths = [](std::array<int, 4> RunConfig::*f) {
            return [f](RunConfig& c, const std::string& k, const std::string& v) { c.*f = parse_widths(v, k); };
        };
        auto text = [](std::string RunConfig::*f) {
            return [f](RunConfig& c, const std::string&, const std::string& v) { c.*f = v; };
        };
        t["seed"] = [](RunConfig& c, const std::string& k, const std::string& v) {
            std::uint64_t s = 0;
            auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), s);
            if (ec != std::errc() || ptr != v.data() + v.size()) {
                throw FormatError("config: key '" + k + "' expects a non-negative integer");
            }
            c.seed = s;
        };
        t["fps"] = num(&RunConfig::fps);
        t["num_styles"] = integer(&RunConfig::num_styles);
        t["clips_per_style"] = integer(&RunConfig::clips_per_style);
        t["frames_per_clip"] = integer(&RunConfig::frames_per_clip);
        t["expnet_widths"] = widths(&RunConfig::expnet_widths);
        t["expnet_lr"] = num(&RunConfig::expnet_lr);
        t["expnet_steps"] = integer(&RunConfig::expnet_steps);
        t["expnet_batch"] = integer(&RunConfig::expnet_batch);
        t["lambda_distill"] = num(&RunConfig::lambda_distill);
        t["lambda_read"] = num(&RunConfig::lambda_read);
        t["lambda_lks"] = num(&RunConfig::lambda_lks);
        t["lambda_eye"] = num(&RunConfig::lambda_eye);
        t["posevae_widths"] = widths(&RunConfig::posevae_widths);
        t["posevae_lr"] = num(&RunConfig::posevae_lr);
        t["posevae_steps"] = integer(&RunConfig::posevae_steps);
        t["posevae_batch"] = integer(&RunConfig::posevae_batch);
        t["latent_dim"] = integer(&RunConfig::latent_dim);
        t["hidden_dim"] = integer(&RunConfig::hidden_dim);
        t["lambda_mse"] = num(&RunConfig::lambda_mse);
        t["lambda_kl"] = num(&RunConfig::lambda_kl);
        t["lambda_gan"] = num(&RunConfig::lambda_gan);
        t["mapper_channels"] = integer(&RunConfig::mapper_channels);
        t["mapper_lr"] = num(&RunConfig::mapper_lr);
        t["mapper_steps"] = integer(&RunConfig::mapper_steps);
        t["mapper_batch"] = integer(&RunConfig::mapper_batch);
        t["num_keypoints"] = integer(&RunConfig::num_keypoints);
        t["lambda_l1"] = num(&RunConfig::lambda_l1);
        t["beat_sigma"] = num(&RunConfig::beat_sigma);
        t["log_every"] = integer(&RunConfig::log_every);
        t["checkpoint_every"] = integer(&RunConfig::checkpoint_every);
        t["corpus_dir"] = text(&RunConfig::corpus_dir);
        t["out_dir"] = text(&RunConfig::out_dir);
        return t;
    }();
    return table;
}

void check_range(bool ok, const char* what) {
    if (!ok) throw FormatError(std::string("config: ") + what);
}

}  // namespace

void validate_config(const RunConfig& c) {
    check_range(c.fps > 0.0 && c.fps <= 240.0, "fps must be in (0, 240]");
    check_range(c.num_styles >= 1 && c.num_styles <= 46, "num_styles must be in [1, 46]");
    check_range(c.clips_per_style >= 1 && c.clips_per_style <= 10000, "clips_per_style must be in [1, 10000]");
    check_range(c.frames_per_clip >= 32 && c.frames_per_clip <= 1000000, "frames_per_clip must be in [32, 1e6]");
    for (const auto* w : {&c.expnet_widths, &c.posevae_widths}) {
        for (int x : *w) check_range(x >= 1 && x <= 1024, "encoder widths must be in [1, 1024]");
    }
    for (double lr : {c.expnet_lr, c.posevae_lr, c.mapper_lr}) {
        check_range(lr >= 0.0 && lr <= 1.0, "learning rates must be in [0, 1]");
    }
    for (int s : {c.expnet_steps, c.posevae_steps, c.mapper_steps}) {
        check_range(s >= 0 && s <= 100000000, "step counts must be in [0, 1e8]");
    }
    for (int b : {c.expnet_batch, c.posevae_batch, c.mapper_batch}) {
        check_range(b >= 1 && b <= 4096, "batch sizes must be in [1, 4096]");
    }
    for (double l : {c.lambda_distill, c.lambda_read, c.lambda_lks, c.lambda_eye, c.lambda_mse, c.lambda_kl,
                     c.lambda_gan, c.lambda_l1}) {
        check_range(l >= 0.0 && l <= 1e6, "loss weights must be in [0, 1e6]");
    }
    check_range(c.latent_dim >= 1 && c.latent_dim <= 1024, "latent_dim must be in [1, 1024]");
    check_range(c.hidden_dim >= 1 && c.hidden_dim <= 8192, "hidden_dim must be in [1, 8192]");
    check_range(c.mapper_channels >= 1 && c.mapper_channels <= 4096, "mapper_channels must be in [1, 4096]");
    check_range(c.num_keypoints >= 1 && c.num_keypoints <= 256, "num_keypoints must be in [1, 256]");
    check_range(c.beat_sigma > 0.0 && c.beat_sigma <= 10.0, "beat_sigma must be in (0, 10]");
    check_range(c.log_every >= 1, "log_every must be >= 1");
    check_range(c.checkpoint_every >= 0, "checkpoint_every must be >= 0");
}

RunConfig parse_config(const std::string& text, RunConfig base) {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw FormatError("config line " + std::to_string(lineno) + ": expected 'key = value'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const auto it = setters().find(key);
        if (it == setters().end()) {
            throw FormatError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        }
        try {
            it->second(base, key, value);
        } catch (const FormatError& e) {
            throw FormatError("config line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    validate_config(base);
    return base;
}

RunConfig load_config(const std::filesystem::path& path) { return parse_config(read_text_file(path)); }

std::string RunConfig::to_text() const {
    std::ostringstream os;
    os << "seed = " << seed << '\n'
       << "fps = " << format_double(fps) << '\n'
       << "num_styles = " << num_styles << '\n'
       << "clips_per_style = " << clips_per_style << '\n'
       << "frames_per_clip = " << frames_per_clip << '\n'
       << "expnet_widths = " << widths_text(expnet_widths) << '\n'
       << "expnet_lr = " << format_double(expnet_lr) << '\n'
       << "expnet_steps = " << expnet_steps << '\n'
       << "expnet_batch = " << expnet_batch << '\n'
       << "lambda_distill = " << format_double(lambda_distill) << '\n'
       << "lambda_read = " << format_double(lambda_read) << '\n'
       << "lambda_lks = " << format_double(lambda_lks) << '\n'
       << "lambda_eye = " << format_double(lambda_eye) << '\n'
       << "posevae_widths = " << widths_text(posevae_widths) << '\n'
       << "posevae_lr = " << format_double(posevae_lr) << '\n'
       << "posevae_steps = " << posevae_steps << '\n'
       << "posevae_batch = " << posevae_batch << '\n'
       << "latent_dim = " << latent_dim << '\n'
       << "hidden_dim = " << hidden_dim << '\n'
       << "lambda_mse = " << format_double(lambda_mse) << '\n'
       << "lambda_kl = " << format_double(lambda_kl) << '\n'
       << "lambda_gan = " << format_double(lambda_gan) << '\n'
       << "mapper_channels = " << mapper_channels << '\n'
       << "mapper_lr = " << format_double(mapper_lr) << '\n'
       << "mapper_steps = " << mapper_steps << '\n'
       << "mapper_batch = " << mapper_batch << '\n'
       << "num_keypoints = " << num_keypoints << '\n'
       << "lambda_l1 = " << format_double(lambda_l1) << '\n'
       << "beat_sigma = " << format_double(beat_sigma) << '\n'
       << "log_every = " << log_every << '\n'
       << "checkpoint_every = " << checkpoint_every << '\n'
       << "corpus_dir = " << corpus_dir << '\n'
       << "out_dir = " << out_dir << '\n';
    return os.str();
}

}  // namespace sadcoeff
