#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fsr/error.hpp"
#include "fsr/image.hpp"
#include "fsr/image_io.hpp"

namespace fsr {

struct ImageStack {
    std::vector<Image2D> slices;  // ordered by z
    double z_step_nm = 0.0;
};

inline void validate_stack(const ImageStack& s) {
    if (s.slices.empty()) throw Error(Error::Kind::Stack, "stack must contain at least one slice");
    if (!(s.z_step_nm > 0.0)) throw Error(Error::Kind::Stack, "stack z step must be positive");
    const Image2D& first = s.slices.front();
    for (const Image2D& sl : s.slices) {
        if (sl.width != first.width || sl.height != first.height)
            throw Error(Error::Kind::Stack, "stack slices must share dimensions");
        if (sl.pixel_pitch_nm != first.pixel_pitch_nm)
            throw Error(Error::Kind::Stack, "stack slices must share pixel pitch");
    }
}

// Writes slice_####.f32 (+ sidecars carrying z_index) and stack.json
// {z_step_nm, slices: [paths]} into out_dir.
inline ImageStack stack_result(const std::vector<Image2D>& slices, double z_step_nm,
                               const std::string& out_dir) {
    ImageStack stack;
    stack.slices = slices;
    stack.z_step_nm = z_step_nm;
    validate_stack(stack);
    std::filesystem::create_directories(out_dir);
    nlohmann::json j;
    j["z_step_nm"] = z_step_nm;
    j["slices"] = nlohmann::json::array();
    for (size_t z = 0; z < stack.slices.size(); ++z) {
        char name[32];
        std::snprintf(name, sizeof(name), "slice_%04zu.f32", z);
        save_image(stack.slices[z], (std::filesystem::path(out_dir) / name).string(),
                   SourceDepth::F32, static_cast<int>(z));
        j["slices"].push_back(name);
    }
    std::ofstream out(std::filesystem::path(out_dir) / "stack.json");
    if (!out) throw Error(Error::Kind::Io, "cannot write stack manifest in " + out_dir);
    out << j.dump(2) << "\n";
    return stack;
}

inline ImageStack load_stack(const std::string& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw Error(Error::Kind::Io, "cannot open stack manifest: " + manifest_path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error(Error::Kind::Format, "malformed stack manifest: " + std::string(e.what()));
    }
    ImageStack stack;
    try {
        stack.z_step_nm = j.at("z_step_nm").get<double>();
        std::filesystem::path dir = std::filesystem::path(manifest_path).parent_path();
        for (const auto& s : j.at("slices"))
            stack.slices.push_back(load_image((dir / s.get<std::string>()).string()));
    } catch (const nlohmann::json::exception& e) {
        throw Error(Error::Kind::Format, "stack manifest missing fields: " + std::string(e.what()));
    }
    validate_stack(stack);
    return stack;
}

// Per-pixel maximum over z.
inline Image2D max_intensity_projection(const ImageStack& stack) {
    validate_stack(stack);
    Image2D out = stack.slices.front();
    for (size_t z = 1; z < stack.slices.size(); ++z) {
        const Image2D& sl = stack.slices[z];
        for (size_t i = 0; i < out.values.size(); ++i)
            out.values[i] = std::max(out.values[i], sl.values[i]);
    }
    return out;
}

}  // namespace fsr
