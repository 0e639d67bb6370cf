#pragma once

#include <cassert>
#include <optional>
#include <utility>
#include <variant>

namespace blindtrust {

// vTPM command response codes.
enum class TpmError {
    SessionSlotsExhausted,
    BadIndex,
    BadHandleRange,
    IndexCollision,
    NvUndefined,
    NvUnwritten,
    NvMismatch,
    BadParent,
    WrongParent,
    UnknownHandle,
    NoSecret,
    TicketMismatch,
    BadSignature,
    BadSelection,
    PolicyMismatch,
    PolicyUnsatisfied,
    CommandCodeMismatch,
    CpHashMismatch,
    RestrictedKeyRefusal,
    WrongSessionKind,
};

const char* tpmErrorName(TpmError e);

// Value-or-error carrier; the modern shape of a TPM response code plus
// response parameters.
template <typename T, typename E>
class Expected {
public:
    Expected(T value) : v_(std::in_place_index<0>, std::move(value)) {}
    Expected(E error) : v_(std::in_place_index<1>, error) {}

    bool ok() const { return v_.index() == 0; }
    explicit operator bool() const { return ok(); }

    const T& value() const& {
        assert(ok());
        return std::get<0>(v_);
    }
    T& value() & {
        assert(ok());
        return std::get<0>(v_);
    }
    T&& take() {
        assert(ok());
        return std::move(std::get<0>(v_));
    }
    E error() const {
        assert(!ok());
        return std::get<1>(v_);
    }

private:
    std::variant<T, E> v_;
};

template <typename E>
class Expected<void, E> {
public:
    Expected() = default;
    Expected(E error) : e_(error) {}

    bool ok() const { return !e_.has_value(); }
    explicit operator bool() const { return ok(); }
    E error() const {
        assert(!ok());
        return *e_;
    }

private:
    std::optional<E> e_;
};

template <typename T>
using TpmResult = Expected<T, TpmError>;

}  // namespace blindtrust
