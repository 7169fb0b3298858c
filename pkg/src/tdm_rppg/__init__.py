"""Remote heart-rate estimation with temporal derivative modules and a shift-tolerant loss.

Pure numpy/scipy: a small reverse-mode autodiff engine, the network, the
losses, signal processing, synthetic data, dataset loaders, training and
evaluation.
"""

__version__ = "0.1.0"
