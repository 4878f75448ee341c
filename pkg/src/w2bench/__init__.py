"""Benchmarking toolkit for continuous quadratic-cost optimal transport.

Builds pairs of continuous measures whose optimal transport map is known
analytically (gradients of convex potentials), trains a zoo of dual-form
neural solvers against them, and scores every solver with L2-UVP and
cosine-similarity metrics.
"""

__version__ = "0.1.0"
