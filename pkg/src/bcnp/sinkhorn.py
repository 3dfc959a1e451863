"""Permutation machinery: log-space Sinkhorn normalization, Gumbel-Sinkhorn
sampling, exact linear assignment, and a brute-force oracle.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import torch
from scipy.optimize import linear_sum_assignment

from .errors import ValidationError


@dataclass(frozen=True)
class GumbelSinkhornConfig:
    temperature: float = 1.0
    max_iterations: int = 1000
    convergence_tol: float = 1e-6
    noise_scale: float = 1.0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValidationError("temperature must be > 0")
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be >= 1")
        if self.convergence_tol <= 0:
            raise ValidationError("convergence_tol must be > 0")


DEFAULT_GS_CONFIG = GumbelSinkhornConfig()


class SinkhornResult(NamedTuple):
    matrix: torch.Tensor
    iterations: int
    converged: torch.Tensor  # bool, one flag per matrix in the batch


def _as_square_tensor(values, name: str) -> torch.Tensor:
    t = torch.as_tensor(values)
    if not t.is_floating_point():
        t = t.to(torch.get_default_dtype())
    if t.ndim < 2 or t.shape[-1] != t.shape[-2]:
        raise ValidationError(f"{name} must have square trailing dims, got {tuple(t.shape)}")
    return t


def _stable_logsumexp(z: torch.Tensor, dim: int) -> torch.Tensor:
    # Summing the exponentials in sorted order makes the reduction invariant
    # to permutations of the input along `dim`, so row-permuted inputs
    # normalize to bit-identical row-permuted outputs.
    m = z.amax(dim=dim, keepdim=True)
    e = torch.sort((z - m).exp(), dim=dim).values
    return m + e.sum(dim=dim, keepdim=True).log()


def _plain_logsumexp(z: torch.Tensor, dim: int) -> torch.Tensor:
    return torch.logsumexp(z, dim=dim, keepdim=True)


# Log-range above which balancing switches to temperature continuation.
# Plain alternating normalization converges impractically slowly on matrices
# with log-scale spreads in the hundreds (e.g. logits divided by a tiny
# temperature); halving-schedule continuation reaches the same balanced
# matrix in far fewer normalization rounds.
_CONTINUATION_RANGE = 64.0
_PHASE_TOL = 1e-2


def _deviation(z: torch.Tensor) -> torch.Tensor:
    p = z.exp()
    row_dev = (p.sum(dim=-1) - 1.0).abs().amax(dim=-1)
    col_dev = (p.sum(dim=-2) - 1.0).abs().amax(dim=-1)
    return torch.maximum(row_dev, col_dev)


def sinkhorn_normalize(
    logits, config: GumbelSinkhornConfig = DEFAULT_GS_CONFIG, stable: bool = True
) -> SinkhornResult:
    """Normalize exp(logits) to a doubly stochastic matrix.

    Alternates row and column normalization in log space until every row and
    column sum is within ``config.convergence_tol`` of 1, or
    ``config.max_iterations`` normalization rounds have been spent (then
    ``converged`` reports which matrices made it).  Accepts a single matrix
    or a batch with leading dims.

    ``stable=True`` (the default) sums exponentials in sorted order so that
    row-permuted inputs produce bit-identical row-permuted outputs; the
    training loop turns it off because gradient quality does not depend on
    reduction order and the plain reduction is substantially cheaper.
    """
    z = _as_square_tensor(logits, "logits")
    if not torch.isfinite(z).all():
        raise ValidationError("logits must be finite")
    logsumexp = _stable_logsumexp if stable else _plain_logsumexp
    tol = config.convergence_tol
    budget = config.max_iterations
    spread = float((z.amax() - z.amin()).detach())
    phases = 0
    if spread > _CONTINUATION_RANGE:
        phases = math.ceil(math.log2(spread / _CONTINUATION_RANGE))
        z = z * (0.5**phases)

    iterations = 0
    converged = torch.zeros(z.shape[:-2], dtype=torch.bool, device=z.device)
    for phase in range(phases, -1, -1):
        phase_tol = tol if phase == 0 else max(tol, _PHASE_TOL)
        while iterations < budget:
            iterations += 1
            z = z - logsumexp(z, dim=-1)
            z = z - logsumexp(z, dim=-2)
            done = _deviation(z) <= phase_tol
            if phase == 0:
                converged = done
            if bool(done.all()):
                break
        if iterations >= budget and phase > 0:
            # budget exhausted mid-continuation: bring the state back to the
            # requested temperature before reporting it
            z = z * float(2**phase)
            converged = _deviation(z) <= tol
            break
        if phase > 0:
            # z = alpha*M + potentials; doubling z doubles alpha while keeping
            # the accumulated potentials as a warm start for the next phase
            z = z * 2.0
        if iterations >= budget:
            break
    return SinkhornResult(z.exp(), iterations, converged)


def _np_square(theta, name: str) -> np.ndarray:
    m = np.asarray(theta, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValidationError(f"{name} must be a square matrix, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise ValidationError(f"{name} must be finite")
    return m


def _assignment_value(theta: np.ndarray, cols: np.ndarray) -> float:
    return math.fsum(theta[i, c] for i, c in enumerate(cols))


def _max_value(sub: np.ndarray) -> float:
    n = sub.shape[0]
    if n == 0:
        return 0.0
    if n == 1:
        return float(sub[0, 0])
    if n == 2:
        return max(sub[0, 0] + sub[1, 1], sub[0, 1] + sub[1, 0])
    rows, cols = linear_sum_assignment(sub, maximize=True)
    return math.fsum(sub[r, c] for r, c in zip(rows, cols))


def _optimal_duals(theta: np.ndarray, assignment: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Feasible duals (u_i + v_j >= theta_ij, tight on the assignment) obtained
    # by Bellman-Ford on the difference constraints v_{a(i)} - v_j <=
    # theta[i, a(i)] - theta[i, j]; alternative optima use only tight edges.
    n = theta.shape[0]
    row_of_col = np.empty(n, dtype=int)
    row_of_col[assignment] = np.arange(n)
    v = np.zeros(n)
    matched = theta[row_of_col, np.arange(n)]  # theta[i, a(i)] indexed by column a(i)
    negated = -theta[row_of_col, :]
    for _ in range(n):
        cand = matched + (negated + v).min(axis=1)
        new_v = np.minimum(v, cand)
        if np.array_equal(new_v, v):
            break
        v = new_v
    u = theta[np.arange(n), assignment] - v[assignment]
    return u, v


def hungarian(theta) -> np.ndarray:
    """Exact maximizer of the Frobenius inner product <Q, theta> over
    permutation matrices, with ties broken toward the lexicographically
    smallest assignment (row 0 gets the smallest feasible column, then row 1,
    and so on)."""
    m = _np_square(theta, "theta")
    n = m.shape[0]
    rows, cols = linear_sum_assignment(m, maximize=True)
    assignment = cols.copy()
    opt = _assignment_value(m, assignment)
    tol = 1e-9 * max(1.0, abs(opt))
    u, v = _optimal_duals(m, assignment)

    m_rows = m.tolist()
    u_list = u.tolist()
    v_list = v.tolist()
    remaining = list(range(n))
    fixed_sum = 0.0
    result = np.zeros((n, n), dtype=np.uint8)
    for i in range(n):
        current = int(assignment[i])
        chosen = current
        row = m_rows[i]
        bound = u_list[i] - tol
        for j in remaining:
            if j >= current:
                break
            # only tight edges (zero reduced cost) can participate in an
            # alternative optimum, so generic inputs skip the verification
            if row[j] < bound + v_list[j]:
                continue
            rest = [c for c in remaining if c != j]
            sub = m[np.ix_(range(i + 1, n), rest)]
            value = fixed_sum + row[j] + _max_value(sub)
            if value >= opt - tol:
                chosen = j
                if i + 1 < n:
                    sub_rows, sub_cols = linear_sum_assignment(sub, maximize=True)
                    for r, c in zip(sub_rows, sub_cols):
                        assignment[i + 1 + r] = rest[c]
                break
        remaining.remove(chosen)
        fixed_sum += row[chosen]
        result[i, chosen] = 1
    return result


def brute_force_assignment(theta) -> np.ndarray:
    """Enumerate all D! permutations (D <= 8) and return the maximizer of
    <Q, theta>, keeping the lexicographically smallest assignment on ties."""
    m = _np_square(theta, "theta")
    n = m.shape[0]
    if n > 8:
        raise ValidationError(f"brute_force_assignment supports D <= 8, got {n}")
    best_value = -math.inf
    best_cols = None
    for cols in itertools.permutations(range(n)):
        value = math.fsum(m[i, c] for i, c in enumerate(cols))
        if value > best_value:
            best_value = value
            best_cols = cols
    result = np.zeros((n, n), dtype=np.uint8)
    for i, c in enumerate(best_cols):
        result[i, c] = 1
    return result


def assignment_objective(theta, q) -> float:
    """Frobenius inner product <Q, theta> evaluated with exact summation."""
    m = _np_square(theta, "theta")
    rows, cols = np.nonzero(np.asarray(q))
    return math.fsum(m[r, c] for r, c in zip(rows, cols))


def sample_gumbel(
    shape, generator: torch.Generator | None = None, dtype=None
) -> torch.Tensor:
    """iid standard Gumbel noise."""
    u = torch.rand(shape, generator=generator, dtype=dtype)
    u = u.clamp(1e-12, 1.0 - 1e-12)
    return -torch.log(-torch.log(u))


_SMALL_ASSIGNMENT_DIM = 3


def _permutation_stack(d: int) -> np.ndarray:
    matrices = np.zeros((math.factorial(d), d, d))
    for p, cols in enumerate(itertools.permutations(range(d))):
        for i, c in enumerate(cols):
            matrices[p, i, c] = 1.0
    return matrices


def batched_hungarian(matrices: np.ndarray) -> np.ndarray:
    """Exact assignment for a stack of matrices, elementwise equal to
    ``hungarian`` on every slice.  Small dimensions take a vectorized
    enumeration (lexicographic order, first maximum = the same tie-break)."""
    matrices = np.asarray(matrices, dtype=np.float64)
    d = matrices.shape[-1]
    if d <= _SMALL_ASSIGNMENT_DIM:
        perms = _permutation_stack(d)
        objectives = np.einsum("pij,mij->mp", perms, matrices)
        best = objectives.argmax(axis=1)  # first max = lexicographically smallest
        return perms[best].astype(np.uint8)
    return np.stack([hungarian(m) for m in matrices])


def gumbel_sinkhorn_sample(
    theta,
    config: GumbelSinkhornConfig = DEFAULT_GS_CONFIG,
    generator: torch.Generator | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """One draw from the Gumbel-Sinkhorn distribution over permutations.

    Perturbs ``theta / temperature`` with Gumbel noise, then returns
    ``(soft, hard)``: the doubly stochastic Sinkhorn normalization and the
    exact assignment of the same perturbed matrix.  The pair supports the
    straight-through contract (hard value forward, soft gradient backward).
    """
    soft, hard = gumbel_sinkhorn_batch(theta, 1, config, generator)
    return soft[0], hard[0]


def gumbel_sinkhorn_batch(
    theta,
    num_samples: int,
    config: GumbelSinkhornConfig = DEFAULT_GS_CONFIG,
    generator: torch.Generator | None = None,
    hard_only: bool = False,
) -> tuple[torch.Tensor | None, torch.Tensor]:
    """``num_samples`` iid Gumbel-Sinkhorn draws for a single logit matrix.

    Returns ``(soft, hard)`` with shapes (S, D, D); ``soft`` is None when
    ``hard_only`` is set (the Sinkhorn pass is skipped, noise draws are
    identical either way).
    """
    t = _as_square_tensor(theta, "theta")
    if t.ndim != 2:
        raise ValidationError("theta must be a single D x D matrix")
    if not torch.isfinite(t).all():
        raise ValidationError("theta must be finite")
    if num_samples < 1:
        raise ValidationError("num_samples must be >= 1")
    noise = sample_gumbel((num_samples, *t.shape), generator, dtype=t.dtype)
    perturbed = t.unsqueeze(0) / config.temperature + config.noise_scale * noise
    soft = None if hard_only else sinkhorn_normalize(perturbed, config).matrix
    hard_np = batched_hungarian(perturbed.detach().cpu().numpy())
    hard = torch.from_numpy(hard_np).to(dtype=t.dtype, device=t.device)
    return soft, hard
