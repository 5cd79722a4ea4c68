"""Level-dependent quasi-birth-death processes via the R-matrix recursion."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .distribution import TruncatedDistribution
from .model import ReactionNetwork
from .numlin import assemble_Qr
from .statespace import LevelStructure, Truncation

NEG_TOL = 1e-12


class LevelStructureError(ValueError):
    pass


class QbdSolveError(ArithmeticError):
    pass


@dataclass
class QbdBlocks:
    """Dense level blocks: ``Q[l]`` within level l, ``up[l]`` from l to l+1, ``down[l]`` from l to l-1."""

    Q: list
    up: list  # up[l] for l = 0..L-2
    down: list  # down[l] for l = 1..L-1, down[0] is None
    levels: list  # state indices per level
    truncation: Truncation

    @property
    def n_levels(self) -> int:
        return len(self.Q)

    def assemble(self) -> np.ndarray:
        """Reassemble the full matrix in the truncation's index order."""
        n = len(self.truncation)
        M = np.zeros((n, n))
        for l, idx in enumerate(self.levels):
            M[np.ix_(idx, idx)] = self.Q[l]
            if l + 1 < self.n_levels:
                M[np.ix_(idx, self.levels[l + 1])] = self.up[l]
            if l > 0:
                M[np.ix_(idx, self.levels[l - 1])] = self.down[l]
        return M


@dataclass
class RMatrixSequence:
    R: dict  # R[l] for l = 1..L-1
    terminal: str = "R^L = 0"


def extract_blocks(net: ReactionNetwork, T: Truncation, levels: LevelStructure) -> QbdBlocks:
    Q = assemble_Qr(net, T).tocoo()
    lev = levels.level_of
    gap = np.abs(lev[Q.row] - lev[Q.col])
    if np.any(gap > 1):
        k = int(np.argmax(gap > 1))
        raise LevelStructureError(
            f"rate between {T.state(Q.row[k])} and {T.state(Q.col[k])} skips {int(gap[k])} levels"
        )
    Qd = Q.tocsr()
    L = len(levels.levels)
    if any(len(ix) == 0 for ix in levels.levels):
        raise LevelStructureError("empty level inside the truncation")
    blocks, up, down = [], [], [None]
    for l, idx in enumerate(levels.levels):
        blocks.append(Qd[idx][:, idx].toarray())
        if l + 1 < L:
            up.append(Qd[idx][:, levels.levels[l + 1]].toarray())
        if l > 0:
            down.append(Qd[idx][:, levels.levels[l - 1]].toarray())
    return QbdBlocks(blocks, up, down, [np.asarray(ix) for ix in levels.levels], T)


def r_matrix_recursion(blocks: QbdBlocks, L: Optional[int] = None) -> RMatrixSequence:
    """``R^l = -Q^{l-1}_+ (Q^l + R^{l+1} Q^{l+1}_-)^{-1}`` for l = L-1..1, seeded with ``R^L = 0``."""
    L = blocks.n_levels if L is None else L
    if L < 2:
        raise LevelStructureError("the recursion needs at least two levels")
    if L > blocks.n_levels:
        raise LevelStructureError("level cut-off exceeds the number of levels")
    R = {}
    nxt = None
    for l in range(L - 1, 0, -1):
        M = blocks.Q[l].copy()
        if nxt is not None:
            M += nxt @ blocks.down[l + 1]
        try:
            lu = sla.lu_factor(M, check_finite=True)
        except (ValueError, sla.LinAlgError) as exc:
            raise QbdSolveError(f"level {l} block is not invertible: {exc}") from None
        if np.abs(np.diag(lu[0])).min() < 1e-14 * max(np.abs(M).max(), 1e-300):
            raise QbdSolveError(f"level {l} block is singular")
        # X M = -up  <=>  M^T X^T = -up^T
        Rl = -sla.lu_solve(lu, blocks.up[l - 1].T, trans=1).T
        scale = max(np.abs(Rl).max(initial=0.0), 1.0)
        if np.any(Rl < -NEG_TOL * scale):
            raise QbdSolveError(f"R^{l} has a significantly negative entry {Rl.min():.3g}")
        Rl[Rl < 0] = 0.0
        R[l] = Rl
        nxt = Rl
    return RMatrixSequence(R)


def ldqbdp_solve(blocks: QbdBlocks, rs: RMatrixSequence) -> TruncatedDistribution:
    """Level-0 equations plus normalization, then ``pi_l = rho_0 R^1 ... R^l``."""
    L = len(rs.R) + 1
    if L < 2:
        raise LevelStructureError("the recursion needs at least two levels")
    n0 = blocks.Q[0].shape[0]
    gammas = [np.eye(n0)]
    for l in range(1, L):
        gammas.append(gammas[-1] @ rs.R[l])
    ones_sum = sum(G.sum(axis=1) for G in gammas)
    A = np.hstack([blocks.Q[0] + rs.R[1] @ blocks.down[1], ones_sum[:, None]])
    rhs = np.zeros(n0 + 1)
    rhs[-1] = 1.0
    # rho A = rhs  <=>  A^T rho^T = rhs^T, solved by least squares (QR/SVD)
    rho, _, rank, sv = np.linalg.lstsq(A.T, rhs, rcond=None)
    if rank < n0:
        raise QbdSolveError("level-0 system is rank deficient: the chain is probably reducible on the truncation")
    total = float(rho @ ones_sum)
    if not np.isfinite(total) or total == 0.0:
        raise QbdSolveError("level-0 solution has no mass")
    # the truncated recursion leaves the level-0 equations slightly inconsistent;
    # keep the least-squares direction and enforce normalization exactly
    rho = rho / total
    values = np.zeros(len(blocks.truncation))
    for l in range(L):
        values[blocks.levels[l]] = rho @ gammas[l]
    scale = max(np.abs(values).max(), 1.0)
    if np.any(values < -1e-10 * scale):
        raise QbdSolveError(f"negative probability {values.min():.3g} from the level solve")
    values[values < 0] = 0.0
    resid = float(np.abs(rho @ A[:, :n0]).max())
    return TruncatedDistribution(blocks.truncation, values,
                                 {"scheme": "ldqbdp", "levels": L, "level0_residual": resid, "singular_values": sv.tolist(),
                                  "rigor": "heuristic: no computable error bound"})


def exact_bdp_rmatrices(birth, death, L: int) -> RMatrixSequence:
    """The limiting R values ``a_plus(l-1)/a_minus(l)`` of a birth-death process (1x1 blocks)."""
    l = np.arange(1, L)
    vals = birth(l - 1) / death(l)
    return RMatrixSequence({int(k): np.array([[v]]) for k, v in zip(l, vals)}, terminal="exact")
