"""Predictive, SLO-aware autoscaling for model-serving clusters.

Modules: :mod:`trace` (workload traces), :mod:`profiler` (latency
distributions), :mod:`forecaster` (trend + Fourier forecasts),
:mod:`compensator` (forecast error correction), :mod:`estimator` (flavor
choice and VM counts), :mod:`provisioner` (VM life cycle), :mod:`simulator`
(trace replay) and :mod:`cli`.
"""

__version__ = "0.1.0"
