"""Affine projection adaptive filtering: simulation, steady-state theory and
noise/error correlation analysis."""

__version__ = "0.1.0"

from .apa import (  # noqa: E402
    ApaState,
    DegenerateRegressorError,
    ErrorTrace,
    FilterConfig,
    StepSchedule,
    apa_update,
    iterate_filter,
    run_filter,
    step_size,
)
from .montecarlo import (  # noqa: E402
    CorrEstimate,
    EnsembleConfig,
    SteadyStateEstimate,
    compare_to_theory,
    run_ensemble,
    steady_state_average,
)
from .signals import SignalModel, arma22, autocorrelation, gen_noise, gen_process  # noqa: E402
from .theory import TheoryReport, theory_report  # noqa: E402

__all__ = [
    "ApaState", "DegenerateRegressorError", "ErrorTrace", "FilterConfig", "StepSchedule",
    "apa_update", "iterate_filter", "run_filter", "step_size",
    "CorrEstimate", "EnsembleConfig", "SteadyStateEstimate", "compare_to_theory",
    "run_ensemble", "steady_state_average",
    "SignalModel", "arma22", "autocorrelation", "gen_noise", "gen_process",
    "TheoryReport", "theory_report",
]
