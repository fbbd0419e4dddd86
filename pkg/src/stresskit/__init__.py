"""Progressive perturbation stress testing and subgroup metrics for image
classifiers.

The pipeline: a manifest of images with per-class labels and demographic
attributes is scored by an external model process, first untouched and then
under a graded suite of appearance perturbations; per-class, per-subgroup
metrics (AUC, F1, TPR/FPR at a frozen threshold, calibration error) are
tabulated, summarized for monotone degradation and subgroup disparity, and
rendered as deterministic CSV/SVG reports.
"""

__version__ = "0.1.0"
