"""Posterior potential, adjoint gradient, and sensitivity Jacobian.

The parameter vector stacks the Fourier block (length 2p+1) and the nodal
log-admittance block (length q).  One assembly and one factorization per
evaluation are shared by forward, adjoint, and all sensitivity solves.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import fem
from .geometry import (BoundaryShape, InvalidShapeError,
                       admittance_alpha_entries_from, fourier_basis,
                       pushforward_alpha_entries_from)
from .mesh import SlabMesh
from .priors import AlphaPrior, BetaPrior
from .fem import _EDGE_PHI, _EDGE_W


@dataclass
class PotentialEvaluation:
    J: float
    misfit: float
    prior: float
    obs: np.ndarray | None = None
    state: fem.ForwardState | None = None
    gradient: np.ndarray | None = None


class Problem:
    """Inverse problem context on a fixed inversion mesh.

    Exposes potential / gradient / Jacobian of
    J(m) = 0.5 |y - G(m)|^2 / delta_e^2 + prior potential.
    """

    def __init__(self, mesh: SlabMesh, p: int, alpha_prior: AlphaPrior,
                 beta_prior: BetaPrior, data: np.ndarray, noise_std: float,
                 sensor_x1: np.ndarray, n_loads: int, sigma: float = 1.0):
        self.ws = fem.FemWorkspace(mesh)
        self.mesh = mesh
        self.trace = self.ws.trace
        self.p = p
        self.n_alpha = 2 * p + 1
        self.q = self.trace.n_nodes
        self.n = self.n_alpha + self.q
        self.alpha_prior = alpha_prior
        self.beta_prior = beta_prior
        self.data = np.asarray(data, dtype=float)
        self.noise_std = float(noise_std)
        self.inv_noise_var = 1.0 / self.noise_std ** 2
        self.sensor_x1 = np.asarray(sensor_x1, dtype=float)
        self.n_loads = int(n_loads)
        self.sigma = float(sigma)
        self.B = fem.bottom_interpolator(self.ws, self.sensor_x1)
        self.m_obs = self.sensor_x1.size * self.n_loads
        if self.data.shape != (self.m_obs,):
            raise ValueError("data length does not match sensors x loads")
        self.loads = fem.all_loads(self.ws, self.n_loads)
        # quadrature bookkeeping for gradient/Jacobian boundary terms
        self.top_squad, self.top_len = self.ws.top_squad, self.ws.top_len
        # Fourier basis cached at the fixed quadrature points, so each
        # evaluation of f and df reduces to a matrix-vector product
        self.Vq, self.dVq = fourier_basis(p, mesh.L, self.ws.quad_pts[..., 0])
        self.Vt, self.dVt = fourier_basis(p, mesh.L, self.top_squad)
        # shape-independent pieces of the volume alpha-derivative sums:
        # the s11 derivative is the basis itself and the s12 derivative is
        # -x2 * basis', so their quadrature-weighted sums are constant
        x2q = self.ws.quad_pts[..., 1]
        wg = np.broadcast_to(self.ws.areas[:, None] / 3.0, x2q.shape)
        self.D11c = np.einsum("tg,tgi->ti", wg, self.Vq)
        self.D12c = -np.einsum("tg,tgi->ti", wg * x2q, self.dVq)
        self._Vq_flat = self.Vq.reshape(-1, self.n_alpha)
        self._dVq_flat = self.dVq.reshape(-1, self.n_alpha)

    # -- parameter layout ---------------------------------------------------

    def split(self, m: np.ndarray):
        m = np.asarray(m, dtype=float)
        if m.shape != (self.n,):
            raise ValueError(f"parameter vector must have length {self.n}")
        return m[:self.n_alpha], m[self.n_alpha:]

    def join(self, alpha: np.ndarray, beta: np.ndarray) -> np.ndarray:
        return np.concatenate([alpha, beta])

    @property
    def prior_mean(self) -> np.ndarray:
        return self.join(self.alpha_prior.mean, self.beta_prior.mean)

    @property
    def prior_precision(self) -> np.ndarray:
        P = np.zeros((self.n, self.n))
        P[:self.n_alpha, :self.n_alpha] = np.diag(self.alpha_prior.precision_diag)
        P[self.n_alpha:, self.n_alpha:] = self.beta_prior.precision
        return P

    def shape_of(self, alpha: np.ndarray) -> BoundaryShape:
        return BoundaryShape(alpha=alpha, L=self.mesh.L, H=self.mesh.H)

    # -- forward machinery --------------------------------------------------

    def _shape_eval(self, alpha: np.ndarray):
        """(f, df) at the volume and top-edge quadrature points."""
        return ((1.0 + self.Vq @ alpha, self.dVq @ alpha),
                (1.0 + self.Vt @ alpha, self.dVt @ alpha))

    def forward(self, m: np.ndarray) -> tuple[fem.ForwardState, np.ndarray]:
        """Assemble, solve all loads, observe.  Raises InvalidShapeError."""
        alpha, beta = self.split(m)
        if not np.all(np.isfinite(alpha)):
            raise InvalidShapeError("non-finite Fourier coefficients")
        system = fem.assemble(self.ws, self.shape_of(alpha), beta, sigma=self.sigma,
                              shape_eval=self._shape_eval(alpha))
        state = fem.ForwardState(solutions=system.solve(self.loads), system=system)
        obs = (self.B @ state.solutions).T.ravel()
        return state, obs

    def _prior_terms(self, m: np.ndarray) -> float:
        alpha, beta = self.split(m)
        return self.alpha_prior.potential(alpha) + self.beta_prior.potential(beta)

    def potential(self, m: np.ndarray) -> PotentialEvaluation:
        try:
            state, obs = self.forward(m)
        except InvalidShapeError:
            return PotentialEvaluation(J=np.inf, misfit=np.inf, prior=np.nan)
        r = self.data - obs
        misfit = 0.5 * self.inv_noise_var * float(r @ r)
        prior = self._prior_terms(m)
        return PotentialEvaluation(J=misfit + prior, misfit=misfit, prior=prior,
                                   obs=obs, state=state)

    def potential_value(self, m: np.ndarray) -> float:
        return self.potential(m).J

    # -- adjoint gradient ---------------------------------------------------

    def _adjoint_solutions(self, state: fem.ForwardState, obs: np.ndarray) -> np.ndarray:
        r = (self.data - obs).reshape(self.n_loads, -1)  # (loads, sensors)
        rhs = self.inv_noise_var * (self.B.T @ r.T)      # (N, loads)
        return state.system.solve(rhs)

    def _edge_uv(self, U: np.ndarray, V: np.ndarray) -> np.ndarray:
        """sum_k u_k v_k at top-edge quadrature points, shape (E, 2)."""
        u_nod = U[self.ws.top_edges]   # (E, 2, loads)
        v_nod = V[self.ws.top_edges]
        uq = np.einsum("enk,gn->egk", u_nod, _EDGE_PHI)
        vq = np.einsum("enk,gn->egk", v_nod, _EDGE_PHI)
        return np.sum(uq * vq, axis=2)

    def gradient(self, m: np.ndarray,
                 evaluation: PotentialEvaluation | None = None) -> np.ndarray:
        """Full gradient of J via one adjoint solve per load."""
        ev = evaluation if evaluation is not None else self.potential(m)
        if not np.isfinite(ev.J):
            raise InvalidShapeError("cannot differentiate at an invalid shape")
        alpha, beta = self.split(m)
        (f_vol, df_vol), (_, df_top) = self._shape_eval(alpha)
        U = ev.state.solutions
        V = self._adjoint_solutions(ev.state, ev.obs)

        # volume term: sum over loads of grad(u) (x) grad(v) per triangle
        gu = np.einsum("tai,tak->tik", self.ws.grads, U[self.mesh.triangles])
        gv = np.einsum("tai,tak->tik", self.ws.grads, V[self.mesh.triangles])
        P11 = np.sum(gu[:, 0] * gv[:, 0], axis=1)
        P12 = np.sum(gu[:, 0] * gv[:, 1] + gu[:, 1] * gv[:, 0], axis=1)
        P22 = np.sum(gu[:, 1] * gv[:, 1], axis=1)

        # s22 alpha-derivative splits into coefficients of basis and basis':
        # a * basis + b * basis' with a, b scalar fields at the quad points
        x2q = self.ws.quad_pts[..., 1]
        a = -(1.0 + x2q ** 2 * df_vol ** 2) / f_vol ** 2
        b = 2.0 * x2q ** 2 * df_vol / f_vol
        w22 = (P22 * self.ws.areas / 3.0)[:, None]
        g_alpha = self.sigma * (P11 @ self.D11c + P12 @ self.D12c
                                + (w22 * a).ravel() @ self._Vq_flat
                                + (w22 * b).ravel() @ self._dVq_flat)

        # boundary terms at top-edge quadrature points
        uv = self._edge_uv(U, V)                               # (E, 2)
        wq = _EDGE_W[None, :] * self.top_len[:, None]          # (E, 2)
        beta_q = fem.interp_trace(self.trace, beta, self.top_squad)
        dfac = admittance_alpha_entries_from(df_top, self.dVt, self.mesh.H)
        g_alpha += np.einsum("eg,eg,egi->i", wq * uv, np.exp(beta_q), dfac)

        fac = np.sqrt(1.0 + df_top ** 2 * self.mesh.H ** 2)
        bq = wq * uv * np.exp(beta_q) * fac                    # (E, 2)
        g_beta_nodes = np.zeros(self.mesh.n_nodes)
        np.add.at(g_beta_nodes, self.ws.top_edges.ravel(), (bq @ _EDGE_PHI).ravel())
        g_beta = g_beta_nodes[self.trace.parent_nodes]

        g_alpha += self.alpha_prior.precision_diag * (alpha - self.alpha_prior.mean)
        g_beta += self.beta_prior.precision @ (beta - self.beta_prior.mean)
        return np.concatenate([g_alpha, g_beta])

    def potential_and_gradient(self, m: np.ndarray):
        """(J, grad) with grad None when the shape is invalid (MALA target)."""
        ev = self.potential(m)
        if not np.isfinite(ev.J):
            return np.inf, None
        return ev.J, self.gradient(m, evaluation=ev)

    # -- sensitivity Jacobian -----------------------------------------------

    def jacobian(self, m: np.ndarray,
                 evaluation: PotentialEvaluation | None = None) -> np.ndarray:
        """Dense (m_obs, n) Jacobian of the observation map via the direct
        (sensitivity) method, reusing the forward factorization."""
        ev = evaluation if evaluation is not None else self.potential(m)
        if not np.isfinite(ev.J):
            raise InvalidShapeError("cannot linearize at an invalid shape")
        alpha, beta = self.split(m)
        (f_vol, df_vol), (_, df_top) = self._shape_eval(alpha)
        U = ev.state.solutions  # (N, loads)
        system = ev.state.system
        n_nodes = self.mesh.n_nodes
        tri = self.mesh.triangles

        gu = np.einsum("tai,tak->tik", self.ws.grads, U[tri])  # (T, 2, loads)
        x2q = self.ws.quad_pts[..., 1]
        d11, d12, d22 = pushforward_alpha_entries_from(f_vol, df_vol,
                                                       self.Vq, self.dVq, x2q)
        w = self.ws.areas[:, None] / 3.0
        D11 = self.sigma * np.sum(w[..., None] * d11, axis=1)
        D12 = self.sigma * np.sum(w[..., None] * d12, axis=1)
        D22 = self.sigma * np.sum(w[..., None] * d22, axis=1)

        wq = _EDGE_W[None, :] * self.top_len[:, None]
        beta_q = fem.interp_trace(self.trace, beta, self.top_squad)
        fac = np.sqrt(1.0 + df_top ** 2 * self.mesh.H ** 2)
        dfac = admittance_alpha_entries_from(df_top, self.dVt, self.mesh.H)
        u_edge = np.einsum("enk,gn->egk", U[self.ws.top_edges], _EDGE_PHI)  # (E,2,loads)

        rhs = np.zeros((n_nodes, self.n * self.n_loads))

        for i in range(self.n_alpha):
            # -(dA/dalpha_i) u : volume + boundary parts
            Si = np.empty((tri.shape[0], 2, 2))
            Si[:, 0, 0] = D11[:, i]
            Si[:, 0, 1] = Si[:, 1, 0] = D12[:, i]
            Si[:, 1, 1] = D22[:, i]
            r_loc = -np.einsum("tai,tij,tjk->tak", self.ws.grads, Si, gu)
            block = np.zeros((n_nodes, self.n_loads))
            np.add.at(block, tri.ravel(),
                      r_loc.reshape(-1, self.n_loads))
            bnd = -(wq * np.exp(beta_q) * dfac[..., i])[..., None] * u_edge  # (E,2,loads)
            np.add.at(block, self.ws.top_edges.ravel(),
                      np.einsum("egk,ga->eak", bnd, _EDGE_PHI).reshape(-1, self.n_loads))
            rhs[:, i * self.n_loads:(i + 1) * self.n_loads] = block

        # beta directions: dA/dbeta_j has the extra hat-function factor phi_j
        cq = wq * np.exp(beta_q) * fac                           # (E, 2)
        # contribution of edge e, gauss g to direction j (local) and test a (local)
        contrib = np.einsum("eg,egk,gj,ga->ejak", cq, u_edge, _EDGE_PHI, _EDGE_PHI)
        beta_block = np.zeros((self.q, n_nodes, self.n_loads))
        trace_idx = self.ws.node_to_trace[self.ws.top_edges]     # (E, 2)
        e_idx = np.broadcast_to(trace_idx[:, :, None], contrib.shape[:3])
        a_idx = np.broadcast_to(self.ws.top_edges[:, None, :], contrib.shape[:3])
        np.add.at(beta_block, (e_idx.ravel(), a_idx.ravel()),
                  contrib.reshape(-1, self.n_loads))
        for j in range(self.q):
            col = self.n_alpha + j
            rhs[:, col * self.n_loads:(col + 1) * self.n_loads] = -beta_block[j]

        dU = system.solve(rhs)  # (N, n * loads)
        obs_cols = self.B @ dU  # (sensors, n * loads)
        G = np.empty((self.m_obs, self.n))
        for c in range(self.n):
            cols = obs_cols[:, c * self.n_loads:(c + 1) * self.n_loads]
            G[:, c] = cols.T.ravel()  # load-major like the data
        return G

    def linearize(self, m: np.ndarray):
        """(J, predicted observations, Jacobian) in one evaluation."""
        ev = self.potential(m)
        if not np.isfinite(ev.J):
            return np.inf, None, None
        return ev.J, ev.obs, self.jacobian(m, evaluation=ev)


@dataclass
class LinearGaussianProblem:
    """Linear surrogate y = G m + e with Gaussian prior; same duck-typed
    surface as Problem where the optimizer needs it."""

    G: np.ndarray
    data: np.ndarray
    noise_std: float
    prior_mean: np.ndarray
    prior_precision: np.ndarray

    def __post_init__(self):
        self.n = self.prior_mean.size
        self.inv_noise_var = 1.0 / self.noise_std ** 2

    def potential_value(self, m: np.ndarray) -> float:
        r = self.data - self.G @ m
        d = m - self.prior_mean
        return 0.5 * self.inv_noise_var * float(r @ r) + 0.5 * float(d @ self.prior_precision @ d)

    def gradient(self, m: np.ndarray) -> np.ndarray:
        return (self.inv_noise_var * self.G.T @ (self.G @ m - self.data)
                + self.prior_precision @ (m - self.prior_mean))

    def potential_and_gradient(self, m: np.ndarray):
        return self.potential_value(m), self.gradient(m)

    def linearize(self, m: np.ndarray):
        return self.potential_value(m), self.G @ m, self.G

    def exact_posterior(self):
        """Analytic Gaussian conditioning (mean, covariance)."""
        H = self.inv_noise_var * self.G.T @ self.G + self.prior_precision
        cov = sla.inv(H)
        mean = cov @ (self.inv_noise_var * self.G.T @ self.data
                      + self.prior_precision @ self.prior_mean)
        return mean, cov
