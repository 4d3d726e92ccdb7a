"""Neuro-symbolic diagnosis: a perception model whose class logits are
adjusted by differentiable, human-readable clinical rules.

Submodules: ``dsl`` (rule language), ``autodiff`` and ``program`` (rule
evaluation and gradients), ``reasoner`` (logit adjustment), ``perception``,
``optim``, ``trainer``, ``data``/``sim`` (cohorts), ``evalstats``, ``report``
and ``cli``. Hot loops live in ``kernels`` with a numba and a numpy backend;
set ``NSAD_DISABLE_NUMBA=1`` to force numpy.
"""

__version__ = "0.1.0"
