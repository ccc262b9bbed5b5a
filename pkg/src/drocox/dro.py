r"""Chi-square DRO dual objective and its one-dimensional dual variable.

For a minimum subpopulation probability ``alpha`` the worst-case risk over the
chi-square ball of radius ``r_max = (1/alpha - 1)^2`` equals

.. math::

    \inf_\eta \; C \sqrt{\tfrac1n \sum_i [\ell_i - \eta]_+^2} + \eta,
    \qquad C = \sqrt{2 r_{\max} + 1}.

The constant ``C`` corresponds to the divergence
``D(Q || P) = 1/2 * E_P[(dQ/dP - 1)^2]``: on a discrete support the dual
value equals ``max E_Q[loss]`` subject to ``sum (q - p)^2 / p <= C^2 - 1``.

The objective is convex in ``eta``; :func:`solve_eta` minimizes it by
bisection on the sign of its derivative.
"""

from dataclasses import dataclass

import numpy as np

from .coxloss import split_losses
from .exceptions import ConfigError, ContractError, SolverError

__all__ = [
    "DroConfig",
    "EtaSolution",
    "dro_constants",
    "dro_loss",
    "dro_loss_grad",
    "solve_eta",
    "split_dro_loss",
    "worst_case_weights",
]


def dro_constants(alpha):
    """Return ``(r_max, C)`` for minimum subpopulation probability `alpha`."""
    if not (0 < alpha <= 1):
        raise ConfigError(f"alpha must lie in (0, 1], got {alpha}")
    r_max = (1.0 / alpha - 1.0) ** 2
    return r_max, float(np.sqrt(2.0 * r_max + 1.0))


@dataclass(frozen=True)
class DroConfig:
    alpha: float
    eta_tolerance: float = 1e-8
    max_bracket_expansions: int = 200

    def __post_init__(self):
        dro_constants(self.alpha)
        if not self.eta_tolerance > 0:
            raise ConfigError("eta_tolerance must be positive")

    @property
    def r_max(self):
        return dro_constants(self.alpha)[0]

    @property
    def C(self):
        return dro_constants(self.alpha)[1]


@dataclass(frozen=True)
class EtaSolution:
    """Minimizer of the dual objective over ``eta``.

    ``attained`` is False only for ``C == 1``, where the infimum (the plain
    mean loss) is approached as ``eta -> -inf``; ``eta`` is then ``-inf``.
    """

    eta: float
    objective: float
    attained: bool = True


def dro_loss(losses, eta, C):
    """``C * sqrt(mean([losses - eta]_+^2)) + eta`` over all entries."""
    losses = np.asarray(losses, dtype=float)
    if losses.size == 0:
        raise ContractError("need at least one loss")
    excess = np.maximum(losses - eta, 0.0)
    return float(C * np.sqrt(np.mean(excess * excess)) + eta)


def dro_loss_grad(losses, eta, C):
    """Partial derivatives of :func:`dro_loss` with respect to each loss at
    fixed `eta`: ``C * [l_i - eta]_+ / (n * sqrt(mean([l - eta]_+^2)))``.

    Defined as zero when no loss exceeds `eta`.
    """
    losses = np.asarray(losses, dtype=float)
    excess = np.maximum(losses - eta, 0.0)
    rms = np.sqrt(np.mean(excess * excess))
    if rms == 0.0:
        return np.zeros_like(losses)
    return C * excess / (losses.size * rms)


def _slope(losses, eta, C):
    excess = np.maximum(losses - eta, 0.0)
    return 1.0 - C * np.mean(excess) / np.sqrt(np.mean(excess * excess))


def solve_eta(losses, C, tol=None, max_bracket_expansions=200):
    """Minimize :func:`dro_loss` over ``eta``.

    Parameters
    ----------
    losses : array_like
        Individual losses (censored records included as zeros).
    C : float
        Dual constant, at least 1.
    tol : float, optional
        Absolute tolerance on ``eta``; defaults to
        ``1e-8 * max(1, max(losses) - min(losses))``.
    max_bracket_expansions : int
        Cap on the number of times the lower bracket is pushed down.

    Returns
    -------
    EtaSolution

    Notes
    -----
    The derivative from the left at ``max(losses)`` is ``1 - C sqrt(k/n)``
    with ``k`` the number of maximal losses. When it is negative the
    minimizer sits on that kink; otherwise the root of the derivative lies
    below the maximum and is bracketed by pushing the lower end down
    geometrically until the derivative turns negative.
    """
    losses = np.asarray(losses, dtype=float).reshape(-1)
    if losses.size == 0:
        raise ContractError("need at least one loss")
    if not np.all(np.isfinite(losses)):
        raise SolverError("losses must be finite")
    if C < 1:
        raise ConfigError("C must be at least 1")
    if C == 1:
        return EtaSolution(-np.inf, float(np.mean(losses)), attained=False)

    hi = float(losses.max())
    lo_loss = float(losses.min())
    span = max(1.0, hi - lo_loss)
    if tol is None:
        tol = 1e-8 * span
    k = np.count_nonzero(losses == hi)
    if 1.0 - C * np.sqrt(k / losses.size) <= 0.0:
        return EtaSolution(hi, hi)

    step = span
    lo = lo_loss - step
    expansions = 0
    while _slope(losses, lo, C) >= 0.0:
        expansions += 1
        if expansions > max_bracket_expansions:
            raise SolverError("could not bracket the dual variable")
        step *= 2.0
        lo = lo_loss - step

    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if _slope(losses, mid, C) < 0.0:
            lo = mid
        else:
            hi = mid
    eta = 0.5 * (lo + hi)
    return EtaSolution(eta, dro_loss(losses, eta, C))


def split_dro_loss(scores, time, event, D1, D2, eta, C):
    """Dual objective over `D1`, each loss computed against the reference
    set `D2`, averaged over ``|D1|`` terms."""
    if len(D1) == 0:
        raise ContractError("D1 must be nonempty")
    return dro_loss(split_losses(scores, time, event, D1, D2), eta, C)


def worst_case_weights(losses, eta, C=None):
    """Normalized worst-case reweighting ``[l_i - eta]_+ / sum_j [l_j - eta]_+``.

    Records with loss at or below `eta` receive zero weight. `C` does not
    affect the normalized weights and is accepted for symmetry.
    """
    excess = np.maximum(np.asarray(losses, dtype=float) - eta, 0.0)
    total = excess.sum()
    if total <= 0:
        raise ContractError("no loss exceeds eta; worst-case weights are degenerate")
    return excess / total
