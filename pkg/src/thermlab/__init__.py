"""thermlab: a finite-difference laboratory for a coupled thermistor model.

Solves the coupled pair

    -div(|Du|^(p(x)-2) Du) = f,      p(x) = sigma(theta(x)),
    -Lap(theta) = lambda(theta) |Du|^(p(x)),

on the unit square by a relaxed outer fixed point around a regularized
variable-exponent inner solver, and runs oscillation-decay experiments
(harmonic replacement, dyadic paraboloid cascade, log-Lipschitz modulus)
on the computed temperature field.
"""

__version__ = "0.1.0"
