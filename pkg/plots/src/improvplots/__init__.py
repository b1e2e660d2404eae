"""Offline figure generation from self-improvement run reports.

Reads the run directory's JSON contract (report.json, series.json,
aggregate.json) and renders success-count histograms, multi-round curves
with seed error bands, ablation bars, and dispersion comparisons. Every
figure is accompanied by a sidecar CSV holding the exact plotted series, so
figures stay auditable independent of rendering-library behavior.
"""

__version__ = "0.1.0"
