#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cpl {

// Base of every domain error. name() is the stable identifier printed by the
// CLI on failure, so renaming a subclass is a wire-format change.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual const char* name() const noexcept { return "Error"; }
};

#define CPL_DEFINE_ERROR(Name)                                         \
    class Name : public Error {                                        \
    public:                                                            \
        using Error::Error;                                            \
        const char* name() const noexcept override { return #Name; }   \
    }

CPL_DEFINE_ERROR(DimensionError);
CPL_DEFINE_ERROR(DegenerateVectorError);
CPL_DEFINE_ERROR(NumericError);
CPL_DEFINE_ERROR(EmptyBatchError);
CPL_DEFINE_ERROR(RangeError);
CPL_DEFINE_ERROR(DeserializeError);
CPL_DEFINE_ERROR(NormalizationError);
CPL_DEFINE_ERROR(StateError);
CPL_DEFINE_ERROR(SchemaError);
CPL_DEFINE_ERROR(StratifyError);
CPL_DEFINE_ERROR(DegenerateInputError);
CPL_DEFINE_ERROR(EmptyCorpusError);
CPL_DEFINE_ERROR(ConfigError);
CPL_DEFINE_ERROR(VersionError);
CPL_DEFINE_ERROR(LookupError);
CPL_DEFINE_ERROR(IoError);

#undef CPL_DEFINE_ERROR

class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
    const char* name() const noexcept override { return "ParseError"; }
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class DivergenceError : public Error {
public:
    DivergenceError(std::size_t step, const std::string& what)
        : Error("step " + std::to_string(step) + ": " + what), step_(step) {}
    const char* name() const noexcept override { return "DivergenceError"; }
    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

} // namespace cpl
