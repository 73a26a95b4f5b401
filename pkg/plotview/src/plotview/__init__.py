"""Offline figure renderer for training artifacts.

Consumes the delimited outputs of the training CLI — ``train_log.csv``
(per-task evaluation metrics over training steps) and ``qgrid.csv``
(per-task value surfaces over an action grid) — and renders deterministic
PNG figures: learning-curve panels with mean and min-max band across seeds,
and contour tiles with the policy-mean action marked.
"""

__version__ = "0.1.0"
