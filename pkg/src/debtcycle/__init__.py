"""Debt-recycling model: mean and second-moment dynamics, outcome
classification, Monte Carlo ensembles and phase diagrams."""

from .errors import (DebtCycleError, DegenerateSpectrum, EmptyContour, Inconclusive, InvalidParameters,
                     NoHittingData, SameClassAtBracket)
from .mean import MeanSolution, mean_at, recurrence_mean, solve_mean
from .model import (BASELINE_INIT, InitialState, ModelParams, ShockDraw, State, baseline_params, draw_shocks,
                    step)
from .moments import (MomentSolution, build_moment_system, closed_form_moments, recurrence_moments,
                      validate_mbar)
from .montecarlo import EnsembleConfig, EnsembleStats, HittingSummary, empirical_hitting, run_ensemble
from .outcome import (Outcome, OutcomeKind, QuadrantLabel, classify, first_root, fluctuation_flip_check,
                      quadrant, threshold, threshold_s)
from .phase import GridSpec, PhaseCell, PhaseTable, contour, render, slice_scan, sweep

__version__ = "0.1.0"
