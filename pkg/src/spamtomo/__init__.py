"""SPAM tomography on qubits: gauge structure and correlated-error witnesses.

Modules
-------
bloch_core
    Bloch-vector states and two-outcome detectors, with a 2x2 matrix check.
gauge
    The 12-parameter affine gauge group and its decompositions.
spam_data
    Count tables, expectation-value estimates, binomial simulation, file I/O.
partial_det
    Partial determinants, nonsingular partial determinants, error bars, tests.
noise_models
    Gaussian and causal correlated-error models.
tomography
    State/detector tomography as gauge fixing; factorization up to gauge.
kernels
    Small-block kernels, compiled when available.
"""
__version__ = "0.1.0"
