#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fsr/error.hpp"
#include "fsr/image.hpp"

namespace fsr {

namespace detail {

inline void skip_pgm_separators(std::istream& in) {
    for (;;) {
        int c = in.peek();
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else if (c != EOF && std::isspace(c)) {
            in.get();
        } else {
            return;
        }
    }
}

inline long read_pgm_int(std::istream& in) {
    skip_pgm_separators(in);
    long v = 0;
    bool any = false;
    while (std::isdigit(in.peek())) {
        v = v * 10 + (in.get() - '0');
        any = true;
    }
    if (!any) throw Error(Error::Kind::Format, "malformed PGM header: expected integer");
    return v;
}

inline std::filesystem::path sidecar_path(const std::filesystem::path& p) {
    std::filesystem::path s = p;
    s.replace_extension(".json");
    return s;
}

}  // namespace detail

// Reads the optional "<name>.json" sidecar next to an image file.  Returns
// the pixel pitch if one is recorded there.
inline std::optional<double> read_sidecar_pitch(const std::string& path) {
    std::filesystem::path sc = detail::sidecar_path(path);
    if (!std::filesystem::exists(sc)) return std::nullopt;
    std::ifstream in(sc);
    if (!in) return std::nullopt;
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception&) {
        throw Error(Error::Kind::Format, "unreadable JSON sidecar: " + sc.string());
    }
    if (j.contains("pixel_pitch_nm")) return j["pixel_pitch_nm"].get<double>();
    return std::nullopt;
}

// Loads a binary PGM (P5, maxval 255 or 65535) or a raw-float image
// ("<name>.f32" plus its JSON sidecar).  Values are the raw stored numbers;
// pitch comes from the sidecar when present, else pitch_override, else 250 nm.
inline Image2D load_image(const std::string& path,
                          std::optional<double> pitch_override = std::nullopt) {
    std::filesystem::path p(path);
    if (!std::filesystem::exists(p))
        throw Error(Error::Kind::Io, "file not found: " + path);

    if (p.extension() == ".f32") {
        std::filesystem::path sc = detail::sidecar_path(p);
        if (!std::filesystem::exists(sc))
            throw Error(Error::Kind::Format, "raw-float image missing JSON sidecar: " + sc.string());
        nlohmann::json j;
        {
            std::ifstream in(sc);
            try {
                in >> j;
            } catch (const nlohmann::json::exception&) {
                throw Error(Error::Kind::Format, "unreadable JSON sidecar: " + sc.string());
            }
        }
        if (!j.contains("width") || !j.contains("height"))
            throw Error(Error::Kind::Format, "sidecar lacks width/height: " + sc.string());
        int w = j["width"].get<int>();
        int h = j["height"].get<int>();
        if (w <= 0 || h <= 0)
            throw Error(Error::Kind::Format, "sidecar has non-positive dimensions");
        double pitch = 250.0;
        if (j.contains("pixel_pitch_nm")) pitch = j["pixel_pitch_nm"].get<double>();
        if (pitch_override) pitch = *pitch_override;
        Image2D img(w, h, pitch, SourceDepth::F32);
        std::ifstream in(p, std::ios::binary);
        std::vector<float> buf(img.size());
        in.read(reinterpret_cast<char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(float)));
        if (in.gcount() != static_cast<std::streamsize>(buf.size() * sizeof(float)))
            throw Error(Error::Kind::Format, "raw-float payload shorter than width*height: " + path);
        for (size_t i = 0; i < buf.size(); ++i) {
            double v = buf[i];
            if (!std::isfinite(v) || v < 0.0)
                throw Error(Error::Kind::Range,
                            "raw-float image contains negative or non-finite values: " + path);
            img.values[i] = v;
        }
        return img;
    }

    std::ifstream in(p, std::ios::binary);
    char magic[2] = {0, 0};
    in.read(magic, 2);
    if (in.gcount() != 2 || magic[0] != 'P' || magic[1] != '5')
        throw Error(Error::Kind::Format, "not a binary PGM (P5) file: " + path);
    long w = detail::read_pgm_int(in);
    long h = detail::read_pgm_int(in);
    long maxval = detail::read_pgm_int(in);
    if (w <= 0 || h <= 0)
        throw Error(Error::Kind::Format, "PGM dimensions must be positive");
    if (maxval != 255 && maxval != 65535)
        throw Error(Error::Kind::Depth, "unsupported PGM maxval (need 255 or 65535): " +
                                            std::to_string(maxval));
    int c = in.get();
    if (c == EOF || !std::isspace(c))
        throw Error(Error::Kind::Format, "malformed PGM header: missing separator before payload");

    double pitch = 250.0;
    if (auto sp = read_sidecar_pitch(path)) pitch = *sp;
    if (pitch_override) pitch = *pitch_override;

    Image2D img(static_cast<int>(w), static_cast<int>(h), pitch,
                maxval == 255 ? SourceDepth::U8 : SourceDepth::U16);
    size_t n = img.size();
    if (maxval == 255) {
        std::vector<uint8_t> buf(n);
        in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
        if (in.gcount() != static_cast<std::streamsize>(n))
            throw Error(Error::Kind::Format, "PGM payload shorter than declared size");
        for (size_t i = 0; i < n; ++i) img.values[i] = buf[i];
    } else {
        std::vector<uint8_t> buf(n * 2);
        in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * 2));
        if (in.gcount() != static_cast<std::streamsize>(n * 2))
            throw Error(Error::Kind::Format, "PGM payload shorter than declared size");
        for (size_t i = 0; i < n; ++i)
            img.values[i] = static_cast<double>((buf[2 * i] << 8) | buf[2 * i + 1]);
    }
    return img;
}

// Saves as PGM (U8/U16, big-endian 16-bit words) or raw-float + sidecar.
// Integer depths round half away from zero and refuse out-of-range values.
inline void save_image(const Image2D& img, const std::string& path, SourceDepth depth,
                       std::optional<int> z_index = std::nullopt) {
    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());

    if (depth == SourceDepth::F32) {
        std::vector<float> buf(img.size());
        for (size_t i = 0; i < img.size(); ++i) {
            double v = img.values[i];
            if (!std::isfinite(v) || v < 0.0)
                throw Error(Error::Kind::Range,
                            "raw-float format stores non-negative finite intensities only");
            buf[i] = static_cast<float>(v);
        }
        std::ofstream out(p, std::ios::binary);
        if (!out) throw Error(Error::Kind::Io, "cannot open for writing: " + path);
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size() * sizeof(float)));
        if (!out) throw Error(Error::Kind::Io, "write failed: " + path);
        nlohmann::json j;
        j["width"] = img.width;
        j["height"] = img.height;
        j["pixel_pitch_nm"] = img.pixel_pitch_nm;
        if (z_index) j["z_index"] = *z_index;
        std::ofstream sc(detail::sidecar_path(p));
        if (!sc) throw Error(Error::Kind::Io, "cannot write sidecar for: " + path);
        sc << j.dump(2) << "\n";
        return;
    }

    long maxval = depth == SourceDepth::U8 ? 255 : 65535;
    std::vector<long> rounded(img.size());
    for (size_t i = 0; i < img.size(); ++i) {
        double r = round_half_away_from_zero(img.values[i]);
        if (r < 0 || r > static_cast<double>(maxval))
            throw Error(Error::Kind::Range,
                        "value " + std::to_string(img.values[i]) +
                            " outside [0, " + std::to_string(maxval) + "] after rounding");
        rounded[i] = static_cast<long>(r);
    }
    std::ofstream out(p, std::ios::binary);
    if (!out) throw Error(Error::Kind::Io, "cannot open for writing: " + path);
    out << "P5\n" << img.width << " " << img.height << "\n" << maxval << "\n";
    if (depth == SourceDepth::U8) {
        std::vector<uint8_t> buf(img.size());
        for (size_t i = 0; i < img.size(); ++i) buf[i] = static_cast<uint8_t>(rounded[i]);
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size()));
    } else {
        std::vector<uint8_t> buf(img.size() * 2);
        for (size_t i = 0; i < img.size(); ++i) {
            buf[2 * i] = static_cast<uint8_t>(rounded[i] >> 8);
            buf[2 * i + 1] = static_cast<uint8_t>(rounded[i] & 0xff);
        }
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size()));
    }
    if (!out) throw Error(Error::Kind::Io, "write failed: " + path);
}

}  // namespace fsr
