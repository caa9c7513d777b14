#ifndef LDIT_ERRORS_HPP
#define LDIT_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace ldit {

// Error taxonomy. Validation-type errors map to CLI exit code 1,
// runtime-type errors to exit code 2.
enum class ErrorKind {
    Validation,  // bad arguments, invariant violations, capacity
    Dimension,   // tensor shape mismatch
    Parse,       // malformed input files / config
    Numeric,     // non-finite values where totality is declared
    Generation,  // procedural generation could not satisfy constraints
    Io           // filesystem failures
};

class LditError : public std::runtime_error {
public:
    LditError(ErrorKind kind, const std::string& msg)
        : std::runtime_error(msg), kind_(kind) {}

    ErrorKind kind() const { return kind_; }

    bool is_validation_class() const {
        return kind_ == ErrorKind::Validation || kind_ == ErrorKind::Dimension ||
               kind_ == ErrorKind::Parse;
    }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void throw_validation(const std::string& msg) {
    throw LditError(ErrorKind::Validation, msg);
}
[[noreturn]] inline void throw_dimension(const std::string& msg) {
    throw LditError(ErrorKind::Dimension, msg);
}
[[noreturn]] inline void throw_parse(const std::string& msg) {
    throw LditError(ErrorKind::Parse, msg);
}
[[noreturn]] inline void throw_numeric(const std::string& msg) {
    throw LditError(ErrorKind::Numeric, msg);
}
[[noreturn]] inline void throw_generation(const std::string& msg) {
    throw LditError(ErrorKind::Generation, msg);
}
[[noreturn]] inline void throw_io(const std::string& msg) {
    throw LditError(ErrorKind::Io, msg);
}

}  // namespace ldit

#endif  // LDIT_ERRORS_HPP
