#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace dgm
{
    enum class ErrorKind
    {
        InvalidRotation,
        InvalidScale,
        OutOfDomain,
        UnsupportedResolution,
        EmptyInput,
        AdjointMismatch,
        NotDifferentiable,
        DegenerateMesh,
        SizeMismatch,
        TooLarge,
        GridMismatch,
        InvalidArgument,
        MalformedHeader,
        MissingProperty,
        TruncatedBody,
        FileNotFound,
        IoError,
        ConfigError,
    };

    inline std::string_view to_string(ErrorKind kind)
    {
        switch (kind)
        {
            case ErrorKind::InvalidRotation: return "InvalidRotation";
            case ErrorKind::InvalidScale: return "InvalidScale";
            case ErrorKind::OutOfDomain: return "OutOfDomain";
            case ErrorKind::UnsupportedResolution: return "UnsupportedResolution";
            case ErrorKind::EmptyInput: return "EmptyInput";
            case ErrorKind::AdjointMismatch: return "AdjointMismatch";
            case ErrorKind::NotDifferentiable: return "NotDifferentiable";
            case ErrorKind::DegenerateMesh: return "DegenerateMesh";
            case ErrorKind::SizeMismatch: return "SizeMismatch";
            case ErrorKind::TooLarge: return "TooLarge";
            case ErrorKind::GridMismatch: return "GridMismatch";
            case ErrorKind::InvalidArgument: return "InvalidArgument";
            case ErrorKind::MalformedHeader: return "MalformedHeader";
            case ErrorKind::MissingProperty: return "MissingProperty";
            case ErrorKind::TruncatedBody: return "TruncatedBody";
            case ErrorKind::FileNotFound: return "FileNotFound";
            case ErrorKind::IoError: return "IoError";
            case ErrorKind::ConfigError: return "ConfigError";
        }
        return "Unknown";
    }

    /**
     * Single exception type for the library. `kind()` is stable and machine
     * readable; `index()` carries the offending element for per-point errors
     * and `offset()` the byte position for parse errors.
     */
    class Error : public std::runtime_error
    {
    public:
        Error(ErrorKind kind, const std::string & message,
              std::optional<std::uint64_t> index = std::nullopt,
              std::optional<std::uint64_t> offset = std::nullopt)
            : std::runtime_error(std::string(to_string(kind)) + ": " + message),
              kind_(kind), index_(index), offset_(offset)
        {
        }

        ErrorKind kind() const noexcept { return kind_; }
        std::optional<std::uint64_t> index() const noexcept { return index_; }
        std::optional<std::uint64_t> offset() const noexcept { return offset_; }

    private:
        ErrorKind kind_;
        std::optional<std::uint64_t> index_;
        std::optional<std::uint64_t> offset_;
    };
}
