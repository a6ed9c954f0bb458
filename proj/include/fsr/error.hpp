#pragma once

#include <stdexcept>
#include <string>

namespace fsr {

// Single exception type for all library failures.  `kind` gives callers a
// stable category to branch on; `what()` carries the human-readable detail.
class Error : public std::runtime_error {
public:
    enum class Kind {
        Format,     // malformed or unsupported file contents
        Io,         // filesystem / stream failures
        Range,      // value outside its documented domain
        Size,       // image/tensor extent constraint violated
        Depth,      // bit-depth or wavelet-depth constraint violated
        Grid,       // pixel-grid / pitch mismatch between images
        Param,      // invalid parameter combination
        Shape,      // tensor shape mismatch
        Pyramid,    // network depth incompatible with tile size
        Pairing,    // dataset image/label mismatch
        Stack,      // stack manifest inconsistency
        Index,      // out-of-range index into a collection
        NoPeak,     // profile has no usable peak
        DegenerateHistogram, // constant image where a split is required
        Config,     // bad configuration file
    };

    Error(Kind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

    static const char* kind_name(Kind k) {
        switch (k) {
            case Kind::Format: return "Format";
            case Kind::Io: return "Io";
            case Kind::Range: return "Range";
            case Kind::Size: return "Size";
            case Kind::Depth: return "Depth";
            case Kind::Grid: return "Grid";
            case Kind::Param: return "Param";
            case Kind::Shape: return "Shape";
            case Kind::Pyramid: return "Pyramid";
            case Kind::Pairing: return "Pairing";
            case Kind::Stack: return "Stack";
            case Kind::Index: return "Index";
            case Kind::NoPeak: return "NoPeak";
            case Kind::DegenerateHistogram: return "DegenerateHistogram";
            case Kind::Config: return "Config";
        }
        return "Unknown";
    }

private:
    Kind kind_;
};

}  // namespace fsr
