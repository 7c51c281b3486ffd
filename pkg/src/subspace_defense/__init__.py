"""Subspace-projection adversarial defense at desk scale.

Modules: ``matcore`` (Jacobi SVD, seeded streams), ``spectral`` (spectra and
clean-subspace projection), ``hsic`` (unbiased HSIC and its gradient), ``net``
(extractor + projection layers + classifier with exact backprop), ``attack``
(PGD), ``train`` (training variants and sweeps) and the harness
(``data``, ``config``, ``checkpoint``, ``experiments``, ``cli``).
"""

__version__ = "0.1.0"
