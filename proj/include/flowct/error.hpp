#pragma once

#include <stdexcept>
#include <string>

namespace flowct {

// Base of every error raised by the library. The CLI maps the concrete
// subclasses onto its exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class DomainError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

// Missing/corrupt files, bad headers, unpaired cases.
class DataError : public Error {
public:
    using Error::Error;
};

// Non-finite values during training or integration.
class NumericalError : public Error {
public:
    using Error::Error;
};

} // namespace flowct
