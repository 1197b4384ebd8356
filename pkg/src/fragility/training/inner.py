"""Inner convex problems solved at a fixed fragility ``k``.

Every variant is posed as a smooth nonlinear program and handed to SLSQP:
nonsmooth hinge-type losses go through an epigraph ``s_n >= rho(margin)`` over
all competing classes, the pairwise dual-norm bounds become smooth or linear
inequalities, and an L1 penalty uses ``t >= |B|``.

The objective value returned is the *constraint function* of the outer
problem (everything left of ``<= 0``), recomputed from the weights alone
after the pairwise bounds are restored exactly.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp, softmax

from ..core.data import max_pairwise_dual_norm
from ..core.losses import LossKind, LossName, Regularizer, losses
from ..core.norms import NormKind, norm as vnorm


@dataclass
class InnerSolution:
    value: float  # constraint function minus tau
    weights: np.ndarray
    lam: float = 0.0
    iterations: int = 0
    success: bool = True
    message: str = ""
    x: np.ndarray | None = field(default=None, repr=False)


def kl_aggregate(v: np.ndarray, k: float) -> float:
    """``k * log mean exp(v / k)``; tends to ``max(v)`` as ``k -> 0``."""
    v = np.asarray(v, dtype=float)
    return float(k * (logsumexp(v / k) - math.log(v.size)))


def shrink_to_bound(B, bound: float, kind: NormKind) -> np.ndarray:
    """Contract columns toward their mean until every pairwise dual-norm gap is at most ``bound``.

    Pairwise differences scale by the contraction factor; scores shift by a
    common vector, which leaves all margins proportional.
    """
    B = np.asarray(B, dtype=float)
    gap = max_pairwise_dual_norm(B, kind)
    if gap <= bound:
        return B
    center = B.mean(axis=1, keepdims=True)
    t = max(bound, 0.0) / gap
    out = center + t * (B - center)
    # rounding guard
    while max_pairwise_dual_norm(out, kind) > bound and t > 0:
        t = np.nextafter(t, 0.0)
        out = center + t * (B - center)
    return out


def project_frobenius(B, radius: float) -> np.ndarray:
    """``B * min(1, radius / ||B||_F)``."""
    B = np.asarray(B, dtype=float)
    nrm = float(np.linalg.norm(B))
    if nrm <= radius:
        return B
    out = B * (radius / nrm)
    while np.linalg.norm(out) > radius:
        out = out * (1.0 - 1e-16)
    return out


class InnerProblem:
    """Fixed-``k`` subproblem of a fragility-minimizing trainer.

    ``mode`` is ``"erm"``, ``"kl"``, ``"wass"`` (pairwise dual-norm bounds)
    or ``"lip"`` (Frobenius bound). ``radius`` switches on the DRO variant,
    which adds a multiplier ``lam >= 0``.
    """

    def __init__(self, Phi, y, class_count: int, loss: LossKind, reg: Regularizer,
                 norm: NormKind = NormKind.TWO, mode: str = "kl", *, tau: float = 0.0,
                 gamma: float | None = None, radius: float | None = None,
                 lipschitz: tuple[float, float] | None = None, lambda_max: float = 1e4,
                 max_iter: int = 1000):
        self.Phi = np.asarray(Phi, dtype=float)
        self.y = np.asarray(y, dtype=np.int64)
        self.N, self.M = self.Phi.shape
        self.C = int(class_count)
        self.loss, self.reg, self.norm, self.mode = loss, reg, NormKind.parse(norm), mode
        self.tau = float(tau)
        self.radius = radius
        self.lipschitz = lipschitz
        self.lambda_max = float(lambda_max)
        self.max_iter = int(max_iter)
        if mode not in ("erm", "kl", "wass", "lip"):
            raise ValueError(f"unknown inner mode {mode!r}")
        if radius is not None and mode != "wass":
            raise ValueError("the DRO multiplier applies to the pairwise path only")
        if mode == "lip" and lipschitz is None:
            raise ValueError("Lipschitz path needs (omega1, omega2)")

        self.hinge = loss.is_hinge_type
        self.theta = loss.theta if self.hinge else 1.0
        self.phi_norms = vnorm(self.Phi, self.norm, axis=1)
        self.gamma = gamma
        self.pos_mean = 0.0
        if mode in ("wass", "lip"):
            if mode == "lip":
                w1, w2 = lipschitz
                scale = w2 / w1
            else:
                scale = 2.0 if self.hinge else 1.0
            g = 0.0 if gamma is None else gamma
            self.pos_mean = float(np.mean(np.maximum(scale * self.phi_norms - g, 0.0)))

        self.pairs = list(itertools.combinations(range(self.C), 2))
        self._build_layout()
        self._build_linear_maps()

    # ---- layout -----------------------------------------------------------
    def _build_layout(self):
        MC = self.M * self.C
        off = MC
        self.sl_b = slice(0, MC)
        n_s = self.N if self.hinge else 0
        self.sl_s = slice(off, off + n_s); off += n_s
        P = len(self.pairs)
        use_u = self.mode == "wass" and self.norm is NormKind.INF and P > 0  # dual is sum-abs
        n_u = P * self.M if use_u else 0
        self.sl_u = slice(off, off + n_u); off += n_u
        n_t = MC if (self.reg.active and self.reg.kind == "l1") else 0
        self.sl_t = slice(off, off + n_t); off += n_t
        n_l = 1 if self.radius is not None else 0
        self.sl_l = slice(off, off + n_l); off += n_l
        self.n_var = off

    def _build_linear_maps(self):
        M, C = self.M, self.C
        # margin rows: (beta_y - beta_c)^T phi_n for every competitor c != y_n
        if self.hinge and C >= 2:
            rows, sidx = [], []
            for n in range(self.N):
                for c in range(C):
                    if c == self.y[n]:
                        continue
                    a = np.zeros((M, C))
                    a[:, self.y[n]] += self.Phi[n]
                    a[:, c] -= self.Phi[n]
                    rows.append(a.ravel())
                    sidx.append(n)
            self.A = np.array(rows).reshape(-1, M * C)
            self.A_s = np.array(sidx, dtype=np.int64)
        else:
            self.A = np.zeros((0, M * C))
            self.A_s = np.zeros(0, dtype=np.int64)
        # pairwise difference maps: d_p = D_p b, each (M, M*C)
        self.D = []
        for i, j in self.pairs:
            Dp = np.zeros((M, M, C))
            Dp[np.arange(M), np.arange(M), i] = 1.0
            Dp[np.arange(M), np.arange(M), j] = -1.0
            self.D.append(Dp.reshape(M, M * C))

    # ---- pieces -----------------------------------------------------------
    def weights_of(self, x) -> np.ndarray:
        return np.asarray(x[self.sl_b]).reshape(self.M, self.C)

    def lam_of(self, x) -> float:
        return float(x[self.sl_l][0]) if self.radius is not None else 0.0

    def sample_losses(self, B) -> np.ndarray:
        return losses(self.loss, B, self.Phi, self.y)

    def pairwise_bound(self, k: float, lam: float = 0.0) -> float:
        return (k + lam) / self.theta

    def constraint_value(self, B, k: float, lam: float = 0.0) -> float:
        """Outer constraint function at ``(k, B, lam)`` minus ``tau``."""
        ell = self.sample_losses(B)
        R = self.reg.value(B)
        if self.mode == "kl":
            return kl_aggregate(ell, k) + R - self.tau
        if self.mode == "erm":
            return float(np.mean(ell)) + R - self.tau
        val = float(np.mean(ell)) + (k + lam) * self.pos_mean + R - self.tau
        if self.radius is not None:
            val += lam * self.radius
        return val

    def restore(self, B, k: float, lam: float = 0.0) -> np.ndarray:
        if self.mode == "wass":
            return shrink_to_bound(B, self.pairwise_bound(k, lam), self.norm)
        if self.mode == "lip":
            return project_frobenius(B, k / self.lipschitz[0])
        return np.asarray(B, dtype=float)

    # ---- SLSQP pieces -----------------------------------------------------
    def initial_point(self, B0=None, lam0: float = 0.0) -> np.ndarray:
        x = np.zeros(self.n_var)
        B0 = np.zeros((self.M, self.C)) if B0 is None else np.asarray(B0, dtype=float)
        x[self.sl_b] = B0.ravel()
        if self.hinge:
            x[self.sl_s] = self.sample_losses(B0) + 1e-12
        if self.sl_u.stop > self.sl_u.start:
            b = B0.ravel()
            x[self.sl_u] = np.concatenate([np.abs(Dp @ b) for Dp in self.D])
        if self.sl_t.stop > self.sl_t.start:
            x[self.sl_t] = np.abs(B0.ravel())
        if self.radius is not None:
            x[self.sl_l] = min(max(lam0, 0.0), self.lambda_max)
        return x

    def _objective(self, k: float):
        sl_b, sl_s, sl_t, sl_l = self.sl_b, self.sl_s, self.sl_t, self.sl_l
        N = self.N
        reg = self.reg
        Phi, y = self.Phi, self.y
        idx = np.arange(N)
        dro = self.radius is not None

        def fun_and_grad(x):
            g = np.zeros_like(x)
            b = x[sl_b]
            B = b.reshape(self.M, self.C)
            if self.hinge:
                ell = x[sl_s]
            else:
                S = Phi @ B
                lse = logsumexp(S, axis=1)
                ell = lse - S[idx, y]
            if self.mode == "kl":
                val = kl_aggregate(ell, k)
                w = softmax(ell / k)
            else:
                val = float(np.mean(ell))
                w = np.full(N, 1.0 / N)
            if self.hinge:
                g[sl_s] = w
            else:
                P = softmax(S, axis=1)
                P[idx, y] -= 1.0
                g[sl_b] += (Phi.T @ (w[:, None] * P)).ravel()
            if self.mode in ("wass", "lip"):
                lam = x[sl_l][0] if dro else 0.0
                val += (k + lam) * self.pos_mean
                if dro:
                    val += lam * self.radius
                    g[sl_l] = self.pos_mean + self.radius
            if reg.active:
                if reg.kind == "l2":
                    val += reg.alpha * float(b @ b)
                    g[sl_b] += 2.0 * reg.alpha * b
                else:
                    val += reg.alpha * float(np.sum(x[sl_t]))
                    g[sl_t] = reg.alpha
            return val, g

        return fun_and_grad

    def _constraints(self, k: float) -> list[dict]:
        cons = []
        nv = self.n_var
        sl_b, sl_s, sl_u, sl_t, sl_l = self.sl_b, self.sl_s, self.sl_u, self.sl_t, self.sl_l
        dro = self.radius is not None
        theta = self.theta

        if self.hinge and self.A.shape[0]:
            A, As = self.A, self.A_s
            R = A.shape[0]
            S_sel = np.zeros((R, nv))
            S_sel[np.arange(R), sl_s.start + As] = 1.0
            if self.loss.name is LossName.HINGE:
                J = S_sel.copy()
                J[:, sl_b] = A
                cons.append({"type": "ineq", "fun": lambda x: x[sl_s][As] - 1.0 + A @ x[sl_b],
                             "jac": lambda x, J=J: J})
                J0 = np.zeros((self.N, nv))
                J0[np.arange(self.N), sl_s.start + np.arange(self.N)] = 1.0
                cons.append({"type": "ineq", "fun": lambda x: x[sl_s].copy(),
                             "jac": lambda x, J0=J0: J0})
            else:
                rho, drho = self.loss.rho, self.loss.rho_prime

                def f_epi(x):
                    return x[sl_s][As] - rho(A @ x[sl_b])

                def j_epi(x):
                    J = S_sel.copy()
                    J[:, sl_b] = -drho(A @ x[sl_b])[:, None] * A
                    return J

                cons.append({"type": "ineq", "fun": f_epi, "jac": j_epi})

        if self.mode == "wass" and self.pairs:
            D = self.D

            def bound(x):
                lam = x[sl_l][0] if dro else 0.0
                return (k + lam) / theta

            if self.norm is NormKind.TWO:
                def f_pw(x):
                    c = bound(x)
                    b = x[sl_b]
                    return np.array([c * c - float((Dp @ b) @ (Dp @ b)) for Dp in D])

                def j_pw(x):
                    c = bound(x)
                    b = x[sl_b]
                    J = np.zeros((len(D), nv))
                    for p, Dp in enumerate(D):
                        J[p, sl_b] = -2.0 * (Dp @ b) @ Dp
                        if dro:
                            J[p, sl_l] = 2.0 * c / theta
                    return J

                cons.append({"type": "ineq", "fun": f_pw, "jac": j_pw})
            elif self.norm is NormKind.ONE:  # dual is max-abs: linear
                Dall = np.vstack(D)
                J = np.zeros((2 * Dall.shape[0], nv))
                J[: Dall.shape[0], sl_b] = -Dall
                J[Dall.shape[0]:, sl_b] = Dall
                if dro:
                    J[:, sl_l] = 1.0 / theta
                cons.append({"type": "ineq",
                             "fun": lambda x: np.concatenate([bound(x) - Dall @ x[sl_b],
                                                              bound(x) + Dall @ x[sl_b]]),
                             "jac": lambda x, J=J: J})
            else:  # dual is sum-abs: u >= |d|, sum(u) <= bound
                Dall = np.vstack(D)
                R = Dall.shape[0]
                J = np.zeros((2 * R, nv))
                J[:R, sl_u] = np.eye(R)
                J[:R, sl_b] = -Dall
                J[R:, sl_u] = np.eye(R)
                J[R:, sl_b] = Dall
                cons.append({"type": "ineq",
                             "fun": lambda x: np.concatenate([x[sl_u] - Dall @ x[sl_b],
                                                              x[sl_u] + Dall @ x[sl_b]]),
                             "jac": lambda x, J=J: J})
                P = len(D)
                Js = np.zeros((P, nv))
                for p in range(P):
                    Js[p, sl_u.start + p * self.M: sl_u.start + (p + 1) * self.M] = -1.0
                if dro:
                    Js[:, sl_l] = 1.0 / theta
                cons.append({"type": "ineq",
                             "fun": lambda x: bound(x) - x[sl_u].reshape(P, self.M).sum(axis=1),
                             "jac": lambda x, Js=Js: Js})

        if self.mode == "lip":
            r = k / self.lipschitz[0]

            def f_lip(x):
                b = x[sl_b]
                return np.array([r * r - float(b @ b)])

            def j_lip(x):
                J = np.zeros((1, nv))
                J[0, sl_b] = -2.0 * x[sl_b]
                return J

            cons.append({"type": "ineq", "fun": f_lip, "jac": j_lip})

        if sl_t.stop > sl_t.start:
            MC = self.M * self.C
            J = np.zeros((2 * MC, nv))
            J[:MC, sl_t] = np.eye(MC)
            J[:MC, sl_b] = -np.eye(MC)
            J[MC:, sl_t] = np.eye(MC)
            J[MC:, sl_b] = np.eye(MC)
            cons.append({"type": "ineq",
                         "fun": lambda x: np.concatenate([x[sl_t] - x[sl_b], x[sl_t] + x[sl_b]]),
                         "jac": lambda x, J=J: J})
        return cons

    def _bounds(self, lam_cap: float | None = None):
        if self.radius is None:
            return None
        bnds = [(None, None)] * self.n_var
        bnds[self.sl_l.start] = (0.0, self.lambda_max if lam_cap is None else lam_cap)
        return bnds

    def solve(self, k: float, B0=None, lam0: float = 0.0) -> InnerSolution:
        """Minimize the constraint function at fixed ``k`` starting from ``B0``.

        With a DRO radius the multiplier is also pinned at zero in a second
        solve; a large radius makes the joint problem badly scaled, and the
        pinned problem is the plain one.
        """
        if self.mode != "erm" and not k > 0:
            raise ValueError("k must be positive")
        x0 = self.initial_point(B0, lam0)
        sol = self._solve_from(k, x0, None)
        if self.radius is not None:
            pinned = self._solve_from(k, self.initial_point(B0, 0.0), 0.0)
            if pinned.value < sol.value:
                sol = pinned
        return sol

    def _solve_from(self, k: float, x0, lam_cap) -> InnerSolution:
        fg = self._objective(k)
        cache = {}

        def fun(x):
            key = x.tobytes()
            if key not in cache:
                cache.clear()
                cache[key] = fg(x)
            return cache[key][0]

        def jac(x):
            fun(x)
            return cache[x.tobytes()][1]

        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = minimize(fun, x0, jac=jac, method="SLSQP", bounds=self._bounds(lam_cap),
                           constraints=self._constraints(k),
                           options={"maxiter": self.max_iter, "ftol": 1e-12})
        x = res.x
        lam = self.lam_of(x)
        if self.radius is not None:
            lam = min(max(lam, 0.0), self.lambda_max if lam_cap is None else lam_cap)
        B = self.restore(self.weights_of(x), k, lam)
        val = self.constraint_value(B, k, lam)
        sol = InnerSolution(val, B, lam, int(res.nit), bool(res.success), str(res.message), x)
        # a failed solve may still beat the start point; never return worse than it
        B_start = self.restore(self.weights_of(x0), k, self.lam_of(x0))
        v_start = self.constraint_value(B_start, k, self.lam_of(x0))
        if not np.isfinite(val) or v_start < val:
            sol = InnerSolution(v_start, B_start, self.lam_of(x0), int(res.nit), False,
                                "kept start point: " + str(res.message), x0)
        return sol
