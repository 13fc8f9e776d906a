"""Control barrier function synthesis from hard constraint functions."""

from ._core import (
    Candidate,
    ConfigError,
    FitResult,
    IntegrityError,
    QpSolution,
    System,
    fnv1a_hex,
    format_real,
    load_fit,
    run,
    solve_qp,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NOT_CONVERGED = 3
EXIT_INTEGRITY = 4
EXIT_INFEASIBLE_FIT = 5

__all__ = [
    "Candidate",
    "ConfigError",
    "FitResult",
    "IntegrityError",
    "QpSolution",
    "System",
    "fnv1a_hex",
    "format_real",
    "load_fit",
    "run",
    "solve_qp",
    "EXIT_OK",
    "EXIT_USAGE",
    "EXIT_NOT_CONVERGED",
    "EXIT_INTEGRITY",
    "EXIT_INFEASIBLE_FIT",
]
