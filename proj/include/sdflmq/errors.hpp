#pragma once

#include <stdexcept>
#include <string>

namespace sdflmq {

// Base class for all errors thrown by the framework.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid argument or malformed domain value (bad topic, bad filter, bad config value).
class ValidationError : public Error {
public:
    using Error::Error;
};

// Broker unusable (shut down, not connected).
class TransportError : public Error {
public:
    using Error::Error;
};

// Input bytes not parseable as the expected wire format.
class ParseError : public Error {
public:
    using Error::Error;
};

// Data present but inconsistent (conflicting chunk, corrupt compressed stream).
class IntegrityError : public Error {
public:
    using Error::Error;
};

// Payload exceeds a configured limit.
class SizeError : public Error {
public:
    using Error::Error;
};

// Function binding conflicts (duplicate name on one endpoint).
class BindingError : public Error {
public:
    using Error::Error;
};

// Model parameter schema mismatch.
class SchemaError : public Error {
public:
    using Error::Error;
};

// Aggregation over incompatible or empty update sets.
class AggregationError : public Error {
public:
    using Error::Error;
};

// Local training diverged (NaN/Inf loss).
class TrainingError : public Error {
public:
    using Error::Error;
};

// Operation not legal in the current session/role state.
class StateError : public Error {
public:
    using Error::Error;
};

// Unknown policy name or inconsistent configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Peer unreachable (request timed out, no broker adapter).
class ConnectivityError : public Error {
public:
    using Error::Error;
};

// Blocking wait exceeded its deadline.
class TimeoutError : public Error {
public:
    using Error::Error;
};

// Session ended while an operation was waiting on it.
class SessionTerminatedError : public Error {
public:
    using Error::Error;
};

// Peer sent a message that violates the protocol (bad round, bad schema).
class ProtocolError : public Error {
public:
    using Error::Error;
};

} // namespace sdflmq
