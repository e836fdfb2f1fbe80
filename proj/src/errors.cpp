#include "lorax/errors.hpp"

namespace lorax {

const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Config: return "configuration error";
        case ErrorKind::Input: return "input error";
        case ErrorKind::State: return "state error";
        case ErrorKind::Data: return "data error";
        case ErrorKind::Parse: return "parse error";
        case ErrorKind::UndefinedMetric: return "undefined metric";
        case ErrorKind::Numeric: return "numeric error";
    }
    return "error";
}

Error::Error(ErrorKind kind, const std::string& what)
    : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

ParseError::ParseError(const std::string& file, const std::string& field, const std::string& what)
    : Error(ErrorKind::Parse, file + ": field '" + field + "': " + what), file_(file), field_(field) {}

int exit_code_for(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Config: return kExitConfig;
        case ErrorKind::Data:
        case ErrorKind::Parse: return kExitData;
        default: return kExitRuntime;
    }
}

}  // namespace lorax
