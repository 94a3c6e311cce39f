"""fairaudit: audit observational datasets for group unfairness.

Estimates the average treatment effect of a binary sensitive attribute
with a battery of estimators (unmatched, regression-adjusted, inverse
weighting, and trimmed optimal-transport matching), reports confidence
intervals and a fairness verdict, quantifies robustness to hidden
confounding, and checks covariate balance.
"""

__version__ = "0.1.0"
