"""Risk-regularized quantile-regression action-value iteration.

Submodules: ``risk`` (losses, KDE, CVaR), ``qnet`` (network and optimizer),
``env`` (reach-avoid arena), ``replay``, ``agent`` (training and evaluation),
``tabular`` (exact operator checks) and ``cli``.
"""
__version__ = "0.1.0"
