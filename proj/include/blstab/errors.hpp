#pragma once

#include <stdexcept>
#include <string>

namespace blstab {

/// Base class for all failures raised by the library. CLI maps these to
/// exit code 70 (internal numeric failure) unless a more specific code applies.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

/// Shooting found no connecting orbit within tolerance.
struct NoConnection : NumericError {
    double residual;
    NoConnection(const std::string& what, double res)
        : NumericError(what), residual(res) {}
};

/// Log-linear tail fit rejected (window too short or R^2 too low).
struct FitFailed : NumericError {
    using NumericError::NumericError;
};

/// Adaptive integrator gave up (step size underflow / repeated rejection).
struct StiffnessFailure : NumericError {
    using NumericError::NumericError;
};

/// First-order reduction is singular: |det b2^11| or |det A*| below tolerance.
struct SingularReduction : NumericError {
    using NumericError::NumericError;
};

/// Limiting matrix has an eigenvalue on (or numerically at) the imaginary
/// axis, so the stable/unstable splitting is not defined at this frequency.
struct CenterEigenvalue : NumericError {
    double min_abs_real;
    CenterEigenvalue(const std::string& what, double m)
        : NumericError(what), min_abs_real(m) {}
};

/// Subspace dimensions failed the k+ + dim(Phi0) = n + r bookkeeping.
struct DimensionMismatch : NumericError {
    using NumericError::NumericError;
};

/// |D| fell below threshold on the contour after maximal refinement.
struct ZeroOnContour : NumericError {
    using NumericError::NumericError;
};

/// Boundary/initial data incompatible (e.g. h(0) != trace of U0).
struct CompatibilityViolation : NumericError {
    using NumericError::NumericError;
};

/// Evolution norm exceeded the blow-up guard.
struct BlowUp : NumericError {
    double norm;
    BlowUp(const std::string& what, double n) : NumericError(what), norm(n) {}
};

/// Explicit stage violated its stability bound mid-run.
struct StepRejected : NumericError {
    using NumericError::NumericError;
};

/// Grid or direction sampling below the minimum the check needs.
struct InsufficientSampling : NumericError {
    using NumericError::NumericError;
};

/// Gronwall audit: no (C, theta) pair within the cap satisfies the estimate.
struct NoFeasiblePair : NumericError {
    using NumericError::NumericError;
};

/// Compensator search topped out at theta2 <= 0: dissipation cannot be
/// restored by any skew matrix (genuine-coupling violation witness).
struct Infeasible : NumericError {
    double theta2;
    Infeasible(const std::string& what, double t) : NumericError(what), theta2(t) {}
};

} // namespace blstab
