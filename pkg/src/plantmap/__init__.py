"""Plant counting and plantation-row detection from overhead RGB patches.

Confidence-map regression with a multi-stage two-branch network, plus
the surrounding pipeline: ground-truth rendering, training, peak and
skeleton extraction, georeferencing, synthetic scenes, and metrics.
"""

__version__ = "0.1.0"
