"""Set-to-set distances between agent-embedding collections.

The workhorse is a debiased entropic-regularized optimal-transport divergence
(Sinkhorn divergence): ``S(X, Y) = OT_eps(X, Y) - OT_eps(X, X)/2 - OT_eps(Y, Y)/2``
with cost ``|x - y|^p / p`` and ``eps = blur**p``.  Point sets carry implicit
uniform weights, so sets of different sizes compare natively and row order
never matters.  Everything is computed in float64 torch, with autograd
support for the training path, and duals are solved in the log domain with an
annealed epsilon schedule:

* the schedule is derived per problem (not per batch), so a pair's value does
  not depend on what else was batched with it;
* updates are symmetric (Jacobi with averaging), so swapping X and Y changes
  the result only at rounding level;
* after convergence one Gauss-Seidel sweep makes the row marginals exact, so
  the reported dual value sits at a stationary point and the truncation error
  of early stopping enters only at second order.

``exact_ot`` is an independent small-instance oracle: a linear assignment for
equal sizes, a generic LP otherwise.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import torch
from scipy.optimize import linear_sum_assignment, linprog

from .errors import DimensionMismatch, SinkhornConvergenceWarning, SizeLimit

EXACT_OT_MAX_POINTS = 16


@dataclass(frozen=True)
class SinkhornConfig:
    p: float = 2.0
    blur: float = 0.05
    max_iters: int = 200
    tol: float = 1e-6
    debiased: bool = True
    scaling: float = 0.5    # blur ratio between annealing stages

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("p must be >= 1")
        if self.blur <= 0 or self.tol <= 0:
            raise ValueError("blur and tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not 0 < self.scaling < 1:
            raise ValueError("scaling must be in (0, 1)")

    @property
    def eps(self) -> float:
        return self.blur ** self.p


DEFAULT_CONFIG = SinkhornConfig()


def _as_points(x, name="points") -> torch.Tensor:
    t = x if isinstance(x, torch.Tensor) else torch.as_tensor(np.asarray(x))
    t = t.to(torch.float64)
    if t.ndim != 2 or t.shape[0] < 1:
        raise DimensionMismatch(f"{name} must be [n, H] with n >= 1, got {tuple(t.shape)}")
    if not torch.isfinite(t).all():
        raise DimensionMismatch(f"{name} contains non-finite entries")
    return t


def _pairwise_cost(x: torch.Tensor, y: torch.Tensor, p: float) -> torch.Tensor:
    """``|x_i - y_j|^p / p`` for batched ``[..., n, D]`` inputs.

    Squared distances are formed without a square root so that p=2 gradients
    stay finite at coincident points.
    """
    diff = x.unsqueeze(-2) - y.unsqueeze(-3)
    sq = (diff * diff).sum(-1)
    if p == 2:
        return sq / 2.0
    return sq.clamp_min(0.0) ** (p / 2.0) / p


def cost_matrix(x, y, p: float = 2.0):
    """Ground-cost matrix between two point sets; numpy in, numpy out."""
    xt, yt = _as_points(x, "X"), _as_points(y, "Y")
    if xt.shape[1] != yt.shape[1]:
        raise DimensionMismatch(
            f"embedding dims differ: {xt.shape[1]} vs {yt.shape[1]}"
        )
    out = _pairwise_cost(xt, yt, p)
    if isinstance(x, torch.Tensor) or isinstance(y, torch.Tensor):
        return out
    return out.numpy()


def _pad_sets(sets: list[torch.Tensor]):
    """Stack variable-size point sets into ``[P, N, D]`` plus a log-weight mask."""
    n_max = max(s.shape[0] for s in sets)
    dim = sets[0].shape[1]
    padded = torch.zeros(len(sets), n_max, dim, dtype=torch.float64)
    log_w = torch.full((len(sets), n_max), -torch.inf, dtype=torch.float64)
    for k, s in enumerate(sets):
        if s.shape[1] != dim:
            raise DimensionMismatch(f"embedding dims differ: {s.shape[1]} vs {dim}")
        padded[k, : s.shape[0]] = s
        log_w[k, : s.shape[0]] = -np.log(s.shape[0])
    return padded, log_w


def _ot_dual_batch(x, log_a, y, log_b, config: SinkhornConfig):
    """Entropic OT dual values for a batch of padded problems, ``[P]``.

    The warning for non-convergence is emitted by the public wrappers so that
    they can report how many problems were affected.
    """
    p, eps_target = config.p, config.eps
    cost = _pairwise_cost(x, y, p)                      # [P, N, M]
    valid = (log_a.unsqueeze(2) + log_b.unsqueeze(1)).isfinite()

    with torch.no_grad():
        start = cost.detach().masked_fill(~valid, -torch.inf)
        start = start.amax(dim=(1, 2)).clamp_min(eps_target)
    eps = start                                          # [P], annealed per problem
    eps_factor = config.scaling ** p

    f = torch.zeros_like(log_a)
    g = torch.zeros_like(log_b)
    a_mask = log_a.isfinite()
    b_mask = log_b.isfinite()

    def softmin(potential, other_log_w, c, eps_col, dim):
        # -eps * logsumexp over one axis, with padded slots at -inf.
        e = eps_col.unsqueeze(1).unsqueeze(2)
        if dim == 2:
            arg = other_log_w.unsqueeze(1) + (potential.unsqueeze(1) - c) / e
        else:
            arg = other_log_w.unsqueeze(2) + (potential.unsqueeze(2) - c) / e
        return -eps_col.unsqueeze(1) * torch.logsumexp(arg, dim=dim)

    residual = torch.full_like(eps, torch.inf)
    for _ in range(config.max_iters):
        ft = softmin(g, log_b, cost, eps, dim=2)
        gt = softmin(f, log_a, cost, eps, dim=1)
        with torch.no_grad():
            df = (ft - f).masked_fill(~a_mask, 0.0).abs().amax(dim=1)
            dg = (gt - g).masked_fill(~b_mask, 0.0).abs().amax(dim=1)
            residual = torch.maximum(df, dg)
        f = torch.where(a_mask, (f + ft) / 2.0, torch.zeros_like(f))
        g = torch.where(b_mask, (g + gt) / 2.0, torch.zeros_like(g))
        at_target = eps <= eps_target
        if bool((at_target & (residual < config.tol)).all()):
            eps = torch.full_like(eps, eps_target)
            break
        eps = torch.where(at_target, eps, (eps * eps_factor).clamp_min(eps_target))
    converged = residual < config.tol

    # One Gauss-Seidel sweep, ending on f, makes the row marginals exact.
    g = softmin(f, log_a, cost, eps, dim=1)
    g = torch.where(b_mask, g, torch.zeros_like(g))
    f = softmin(g, log_b, cost, eps, dim=2)
    f = torch.where(a_mask, f, torch.zeros_like(f))

    a = torch.where(a_mask, log_a.exp(), torch.zeros_like(log_a))
    b = torch.where(b_mask, log_b.exp(), torch.zeros_like(log_b))
    values = (a * f).sum(dim=1) + (b * g).sum(dim=1)
    return values, converged, residual


def _warn_unconverged(converged, residual):
    bad = (~converged).sum().item()
    if bad:
        warnings.warn(
            SinkhornConvergenceWarning(
                f"{bad} problem(s) did not reach tolerance; "
                f"worst residual {residual.max().item():.3e}"
            ),
            stacklevel=3,
        )


def _divergence_from_batches(cross_pairs, self_sets, config):
    """Assemble debiased divergences from one batched dual solve.

    ``cross_pairs`` is a list of (i, j) indices into ``self_sets``.
    Returns a tensor of divergences aligned with ``cross_pairs``.
    """
    problems = [(self_sets[i], self_sets[j]) for i, j in cross_pairs]
    if config.debiased:
        problems += [(s, s) for s in self_sets]
    xs, log_a = _pad_sets([a for a, _ in problems])
    ys, log_b = _pad_sets([b for _, b in problems])
    values, converged, residual = _ot_dual_batch(xs, log_a, ys, log_b, config)
    _warn_unconverged(converged, residual)
    n_cross = len(cross_pairs)
    cross = values[:n_cross]
    if not config.debiased:
        return cross
    selves = values[n_cross:]
    i_idx = torch.tensor([i for i, _ in cross_pairs])
    j_idx = torch.tensor([j for _, j in cross_pairs])
    return cross - selves[i_idx] / 2.0 - selves[j_idx] / 2.0


def sinkhorn_divergence(x, y, config: SinkhornConfig | None = None):
    """Debiased entropic OT divergence between two point sets.

    Symmetric, non-negative, zero iff the sets coincide as weighted point
    multisets, and differentiable in the point coordinates.  Returns a float
    for array inputs and a 0-dim tensor (with graph) for tensor inputs.
    """
    config = config or DEFAULT_CONFIG
    xt, yt = _as_points(x, "X"), _as_points(y, "Y")
    if xt.shape[1] != yt.shape[1]:
        raise DimensionMismatch(f"embedding dims differ: {xt.shape[1]} vs {yt.shape[1]}")
    value = _divergence_from_batches([(0, 1)], [xt, yt], config)[0]
    if isinstance(x, torch.Tensor) or isinstance(y, torch.Tensor):
        return value
    return float(value)


def sinkhorn_divergence_pairs(xs, ys, config: SinkhornConfig | None = None) -> torch.Tensor:
    """Divergences between corresponding entries of two equal-length set lists."""
    config = config or DEFAULT_CONFIG
    if len(xs) != len(ys):
        raise DimensionMismatch("xs and ys must have equal length")
    sets = [_as_points(s) for s in xs] + [_as_points(s) for s in ys]
    pairs = [(k, len(xs) + k) for k in range(len(xs))]
    return _divergence_from_batches(pairs, sets, config)


def sinkhorn_divergence_matrix(xs, ys=None, config: SinkhornConfig | None = None) -> torch.Tensor:
    """All-pairs divergence matrix.

    With ``ys=None`` computes the symmetric matrix among ``xs`` (exact zeros
    on the diagonal when debiased).
    """
    config = config or DEFAULT_CONFIG
    xs_t = [_as_points(s) for s in xs]
    if ys is None:
        n = len(xs_t)
        pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
        out = torch.zeros(n, n, dtype=torch.float64)
        if pairs:
            vals = _divergence_from_batches(pairs, xs_t, config)
            for (i, j), v in zip(pairs, vals):
                out[i, j] = v
                out[j, i] = v
        if not config.debiased:
            diag = _divergence_from_batches([(i, i) for i in range(n)], xs_t, config)
            out[range(n), range(n)] = diag
        return out
    ys_t = [_as_points(s) for s in ys]
    sets = xs_t + ys_t
    pairs = [(i, len(xs_t) + j) for i in range(len(xs_t)) for j in range(len(ys_t))]
    vals = _divergence_from_batches(pairs, sets, config)
    return vals.reshape(len(xs_t), len(ys_t))


def exact_ot(x, y, p: float = 2.0) -> float:
    """Exact optimal-transport cost with uniform marginals and cost ``|.|^p / p``.

    Independent verification oracle: linear assignment when the sets have
    equal size, otherwise a generic LP.  Limited to small instances.
    """
    xt, yt = _as_points(x, "X"), _as_points(y, "Y")
    n, m = xt.shape[0], yt.shape[0]
    if n > EXACT_OT_MAX_POINTS or m > EXACT_OT_MAX_POINTS:
        raise SizeLimit(f"exact_ot supports at most {EXACT_OT_MAX_POINTS} points per set")
    if xt.shape[1] != yt.shape[1]:
        raise DimensionMismatch(f"embedding dims differ: {xt.shape[1]} vs {yt.shape[1]}")
    cost = _pairwise_cost(xt, yt, p).numpy()
    if n == m:
        rows, cols = linear_sum_assignment(cost)
        return float(cost[rows, cols].sum() / n)

    # Uniform-marginal LP over the transport plan.
    a_eq = np.zeros((n + m, n * m))
    b_eq = np.concatenate([np.full(n, 1.0 / n), np.full(m, 1.0 / m)])
    for i in range(n):
        a_eq[i, i * m : (i + 1) * m] = 1.0
    for j in range(m):
        a_eq[n + j, j::m] = 1.0
    res = linprog(cost.ravel(), A_eq=a_eq[:-1], b_eq=b_eq[:-1], bounds=(0, None),
                  method="highs")
    if not res.success:
        raise RuntimeError(f"LP solver failed: {res.message}")
    return float(res.fun)
