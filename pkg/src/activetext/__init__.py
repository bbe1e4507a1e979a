"""Train binary text classifiers with minimal labeling effort.

Pool-based sequential sampling around a smoothed log-likelihood-ratio
classifier with logistic calibration, plus an experiment harness, a
labeling service, and a CLI.
"""

__version__ = "0.1.0"
