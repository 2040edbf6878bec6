#pragma once

// File formats: the COEF matrix container, the key = value run config, and
// small CSV / PPM writers.
//
// COEF layout (all little-endian):
//   bytes 0..3   magic "SDTC"
//   u32          version (1)
//   u32          rows
//   u32          dim
//   rows*dim     float32 payload, row-major

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace sadcoeff {

inline constexpr std::array<char, 4> kCoefMagic{'S', 'D', 'T', 'C'};
inline constexpr std::uint32_t kCoefVersion = 1;

struct CoefMatrix {
    std::uint32_t rows = 0;
    std::uint32_t dim = 0;
    std::vector<float> data;

    float at(std::size_t r, std::size_t c) const { return data[r * dim + c]; }
    Eigen::MatrixXd to_matrix() const;
    std::vector<double> row(std::size_t r) const;
    static CoefMatrix from_matrix(const Eigen::MatrixXd& m);
    static CoefMatrix from_values(std::uint32_t rows, std::uint32_t dim, std::span<const double> values);
};

std::vector<std::uint8_t> encode_coef(const CoefMatrix& m);
CoefMatrix decode_coef(std::span<const std::uint8_t> bytes);

void write_coef(const std::filesystem::path& path, const CoefMatrix& m);
CoefMatrix read_coef(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path);
// FNV-1a 64-bit of a file's bytes; used for reproducibility checks.
std::uint64_t file_checksum(const std::filesystem::path& path);

// Binary PPM (P6), 8-bit RGB, row-major top-to-bottom.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb;

    Image(int w, int h, std::array<std::uint8_t, 3> fill = {0, 0, 0});
    void set(int x, int y, std::array<std::uint8_t, 3> color);
    std::array<std::uint8_t, 3> get(int x, int y) const;
};

void write_ppm(const std::filesystem::path& path, const Image& image);
Image read_ppm(const std::filesystem::path& path);

// Formats a double with enough digits to round-trip.
std::string format_double(double v);

// ---- run configuration ------------------------------------------------------------

struct RunConfig {
    std::uint64_t seed = 1;
    double fps = 25.0;

    // corpus
    int num_styles = 46;
    int clips_per_style = 4;
    int frames_per_clip = 100;

    // ExpNet
    std::array<int, 4> expnet_widths{32, 64, 128, 256};
    double expnet_lr = 2e-5;
    int expnet_steps = 2000;
    int expnet_batch = 32;
    double lambda_distill = 2.0;
    double lambda_read = 0.01;
    double lambda_lks = 0.01;
    double lambda_eye = 200.0;

    // PoseVAE
    std::array<int, 4> posevae_widths{32, 64, 128, 256};
    double posevae_lr = 1e-4;
    int posevae_steps = 3000;
    int posevae_batch = 32;
    int latent_dim = 64;
    int hidden_dim = 256;
    double lambda_mse = 1.0;
    double lambda_kl = 1.0;
    double lambda_gan = 0.7;

    // MappingNet
    int mapper_channels = 128;
    double mapper_lr = 2e-4;
    int mapper_steps = 2000;
    int mapper_batch = 32;
    int num_keypoints = 15;
    double lambda_l1 = 20.0;

    // metrics
    double beat_sigma = 0.1;

    // bookkeeping
    int log_every = 50;
    int checkpoint_every = 0;  // 0: final checkpoint only
    std::string corpus_dir = "corpus";
    std::string out_dir = "out";

    std::string to_text() const;
};

// Parses `key = value` lines (`#` starts a comment). Unknown keys and
// out-of-range values raise FormatError naming the line.
RunConfig parse_config(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path);
// Throws FormatError if any field is outside its documented range.
void validate_config(const RunConfig& cfg);

}  // namespace sadcoeff
