#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dqf {

// Broad failure classes; the CLI maps them onto process exit codes.
enum class ErrorClass {
    usage,      // bad flags, bad config, misuse of an API contract
    data,       // corrupt or inconsistent input files
    numerical,  // divergence, non-convergence, degenerate numerics
};

class Error : public std::runtime_error {
   public:
    Error(ErrorClass cls, const std::string& what) : std::runtime_error(what), cls_(cls) {}
    ErrorClass error_class() const noexcept { return cls_; }

   private:
    ErrorClass cls_;
};

#define DQF_DEFINE_ERROR(Name, Class)                                              \
    class Name : public Error {                                                    \
       public:                                                                     \
        explicit Name(const std::string& what) : Error(ErrorClass::Class, what) {} \
    }

DQF_DEFINE_ERROR(DimensionError, usage);
DQF_DEFINE_ERROR(ContractError, usage);
DQF_DEFINE_ERROR(RegistryError, usage);
DQF_DEFINE_ERROR(ConfigError, usage);
DQF_DEFINE_ERROR(MaskedPairError, usage);
DQF_DEFINE_ERROR(VocabError, data);
DQF_DEFINE_ERROR(IngestionError, data);
DQF_DEFINE_ERROR(IntegrityError, data);
DQF_DEFINE_ERROR(VersionError, data);
DQF_DEFINE_ERROR(MissingBlobError, data);
DQF_DEFINE_ERROR(DegenerateRowError, numerical);
DQF_DEFINE_ERROR(NumericalError, numerical);
DQF_DEFINE_ERROR(BasisError, numerical);

#undef DQF_DEFINE_ERROR

// Raised when a state or gradient stops being finite. `step` is the Euler
// step or optimizer step at which it was detected.
class DivergenceError : public Error {
   public:
    DivergenceError(const std::string& what, std::size_t step)
        : Error(ErrorClass::numerical, what + " (step " + std::to_string(step) + ")"), step_(step) {}
    std::size_t step() const noexcept { return step_; }

   private:
    std::size_t step_;
};

inline int exit_code(ErrorClass cls) {
    switch (cls) {
        case ErrorClass::usage:
            return 1;
        case ErrorClass::data:
            return 2;
        case ErrorClass::numerical:
            return 3;
    }
    return 2;
}

}  // namespace dqf
