"""P1 finite element solver for the transformed Poisson problem on the slab.

Volume terms use a 3-point (degree-2 exact) barycentric Gauss rule, edge
terms a 2-point Gauss rule.  Dirichlet side conditions are imposed by
elimination so the reduced system stays symmetric positive definite; one
sparse LU factorization is shared by all loads, adjoint solves and
sensitivity solves.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import InvalidShapeError, pushforward_entries_from
from .mesh import SlabMesh, TraceMesh, trace_of_top, triangle_areas


class SolverError(Exception):
    """Factorization or solve failure."""


# 2-point Gauss rule on [-1, 1]
_EDGE_XI = np.array([-1.0, 1.0]) / np.sqrt(3.0)
_EDGE_W = np.array([0.5, 0.5])  # weights on the unit-length reference edge
# P1 hat values at the two edge quadrature points: (2 gauss, 2 local nodes)
_EDGE_PHI = np.column_stack([(1.0 - _EDGE_XI) / 2.0, (1.0 + _EDGE_XI) / 2.0])


class FemWorkspace:
    """Precomputed geometry shared by all assemblies on one mesh."""

    def __init__(self, mesh: SlabMesh):
        self.mesh = mesh
        p = mesh.nodes[mesh.triangles]  # (T, 3, 2)
        self.areas = triangle_areas(mesh)
        if np.any(self.areas <= 0):
            raise SolverError("mesh contains non-positively-oriented triangles")
        # constant P1 gradients: grad_a = rot(edge opposite a) / (2 area)
        e0 = p[:, 2] - p[:, 1]
        e1 = p[:, 0] - p[:, 2]
        e2 = p[:, 1] - p[:, 0]
        rot = lambda v: np.column_stack([-v[:, 1], v[:, 0]])
        self.grads = np.stack([rot(e0), rot(e1), rot(e2)], axis=1)
        self.grads /= (2.0 * self.areas)[:, None, None]
        # edge-midpoint quadrature points, weight areas/3 each
        self.quad_pts = 0.5 * (p + np.roll(p, -1, axis=1))  # (T, 3, 2)
        # gradient outer products so a stiffness assembly is 3 multiply-adds
        gx, gy = self.grads[..., 0], self.grads[..., 1]
        self.K11 = gx[:, :, None] * gx[:, None, :]
        self.K12 = gx[:, :, None] * gy[:, None, :] + gy[:, :, None] * gx[:, None, :]
        self.K22 = gy[:, :, None] * gy[:, None, :]

        self.trace = trace_of_top(mesh)
        self.top_edges = self._sorted_edges(mesh.edge_groups["top"])
        self.bottom_edges = self._sorted_edges(mesh.edge_groups["bottom"])

        x1 = mesh.nodes[:, 0]
        self.dirichlet = np.flatnonzero((x1 == 0.0) | (x1 == mesh.L))
        free_mask = np.ones(mesh.n_nodes, dtype=bool)
        free_mask[self.dirichlet] = False
        self.free = np.flatnonzero(free_mask)
        self.full_to_free = -np.ones(mesh.n_nodes, dtype=np.int64)
        self.full_to_free[self.free] = np.arange(self.free.size)

        # map top-edge mesh nodes to trace indices
        self.node_to_trace = -np.ones(mesh.n_nodes, dtype=np.int64)
        self.node_to_trace[self.trace.parent_nodes] = np.arange(self.trace.n_nodes)

        # top-edge quadrature and the scatter pattern of the reduced system,
        # so repeated assemblies skip the full-matrix build and subsetting
        self.top_squad, self.top_len = self.edge_quad(self.top_edges)
        tri = mesh.triangles
        rows = np.concatenate([np.repeat(tri, 3, axis=1).ravel(),
                               np.repeat(self.top_edges, 2, axis=1).ravel()])
        cols = np.concatenate([np.tile(tri, (1, 3)).ravel(),
                               np.tile(self.top_edges, (1, 2)).ravel()])
        self.asm_keep = free_mask[rows] & free_mask[cols]
        self.asm_rows = self.full_to_free[rows[self.asm_keep]]
        self.asm_cols = self.full_to_free[cols[self.asm_keep]]

    def _sorted_edges(self, edges: np.ndarray) -> np.ndarray:
        # orient each edge so x1 increases, then order edges by x1
        x1 = self.mesh.nodes[:, 0]
        edges = edges.copy()
        flip = x1[edges[:, 0]] > x1[edges[:, 1]]
        edges[flip] = edges[flip][:, ::-1]
        return edges[np.argsort(x1[edges[:, 0]])]

    def edge_quad(self, edges: np.ndarray):
        """Quadrature x1-coordinates (E, 2) and reference lengths (E,) of edges."""
        x1 = self.mesh.nodes[:, 0]
        a, b = x1[edges[:, 0]], x1[edges[:, 1]]
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        return mid[:, None] + half[:, None] * _EDGE_XI[None, :], b - a


@dataclass
class AssembledSystem:
    """Reduced SPD system with its factorization."""

    A_free: sp.csr_matrix
    factor: spla.SuperLU
    ws: FemWorkspace
    shape: object
    beta: np.ndarray

    @property
    def n_free(self) -> int:
        return self.ws.free.size

    def solve(self, rhs_full: np.ndarray) -> np.ndarray:
        """Solve for full nodal vectors; Dirichlet entries of the result are zero.

        rhs_full may be (N,) or (N, k).
        """
        rhs = np.asarray(rhs_full, dtype=float)
        squeeze = rhs.ndim == 1
        rhs = rhs.reshape(rhs.shape[0], -1)
        u_free = self.factor.solve(rhs[self.ws.free])
        u = np.zeros_like(rhs)
        u[self.ws.free] = u_free
        return u[:, 0] if squeeze else u


@dataclass
class ForwardState:
    solutions: np.ndarray  # (N, n_loads)
    system: AssembledSystem


@dataclass
class Observation:
    y: np.ndarray  # load-major, length n_loads * n_sensors
    sensor_x1: np.ndarray
    n_loads: int


def _volume_matrix(ws: FemWorkspace, s11, s12, s22) -> sp.coo_matrix:
    """Stiffness from tensor entries evaluated at the quadrature points (T, 3)."""
    w = ws.areas[:, None] / 3.0
    S = np.empty((ws.areas.size, 2, 2))
    S[:, 0, 0] = np.sum(w * s11, axis=1)
    S[:, 0, 1] = S[:, 1, 0] = np.sum(w * s12, axis=1)
    S[:, 1, 1] = np.sum(w * s22, axis=1)
    k_loc = np.einsum("tai,tij,tbj->tab", ws.grads, S, ws.grads)
    tri = ws.mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    n = ws.mesh.n_nodes
    return sp.coo_matrix((k_loc.ravel(), (rows, cols)), shape=(n, n))


def _edge_mass_matrix(edges: np.ndarray, coeff_quad: np.ndarray,
                      lengths: np.ndarray, n_nodes: int) -> sp.coo_matrix:
    """Boundary mass sum_g w_g * c_g * phi_a phi_b on the given edges.

    coeff_quad: coefficient values at the 2 Gauss points of each edge (E, 2);
    lengths: physical edge lengths (E,).
    """
    wq = coeff_quad * (_EDGE_W[None, :] * lengths[:, None])  # (E, 2)
    m_loc = np.einsum("eg,ga,gb->eab", wq, _EDGE_PHI, _EDGE_PHI)
    rows = np.repeat(edges, 2, axis=1).ravel()
    cols = np.tile(edges, (1, 2)).ravel()
    return sp.coo_matrix((m_loc.ravel(), (rows, cols)), shape=(n_nodes, n_nodes))


def interp_trace(trace: TraceMesh, values: np.ndarray, s):
    """P1 interpolation of trace-nodal values at arc-coordinates s."""
    return np.interp(s, trace.s, values)


def robin_coefficient(ws: FemWorkspace, shape, beta_trace: TraceMesh,
                      beta: np.ndarray, squad: np.ndarray) -> np.ndarray:
    """exp(beta(s)) * sqrt(1 + (df/ds)^2 H^2) at top-edge quadrature points."""
    _, df = shape.eval(squad)
    fac = np.sqrt(1.0 + df ** 2 * ws.mesh.H ** 2)
    return np.exp(interp_trace(beta_trace, beta, squad)) * fac


def assemble(mesh_or_ws, shape, beta: np.ndarray, sigma: float = 1.0,
             beta_trace: TraceMesh | None = None,
             shape_eval=None) -> AssembledSystem:
    """Assemble the transformed Poisson system for a shape and Robin field.

    beta holds nodal log-admittance values on beta_trace (defaults to this
    mesh's own top trace).  sigma is a constant scalar conductivity.
    shape_eval, when given, is ((f, df) at the volume quadrature points,
    (f, df) at the top-edge quadrature points) precomputed by the caller;
    this skips shape.eval and the dense positivity sampling.
    """
    ws = mesh_or_ws if isinstance(mesh_or_ws, FemWorkspace) else FemWorkspace(mesh_or_ws)
    if beta_trace is None:
        beta_trace = ws.trace
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (beta_trace.n_nodes,):
        raise ValueError("beta length does not match its trace mesh")

    if shape_eval is None:
        if hasattr(shape, "validate"):
            shape.validate()
        f_vol, df_vol = shape.eval(ws.quad_pts[..., 0])
        f_top, df_top = shape.eval(ws.top_squad)
    else:
        (f_vol, df_vol), (f_top, df_top) = shape_eval
        if np.any(f_top <= 0.0):
            raise InvalidShapeError("height profile f is not positive on the top edge")
    s11, s12, s22 = pushforward_entries_from(f_vol, df_vol, ws.quad_pts[..., 1])

    w = sigma * ws.areas / 3.0
    S11 = w * np.sum(s11, axis=1)
    S12 = w * np.sum(s12, axis=1)
    S22 = w * np.sum(s22, axis=1)
    k_loc = (S11[:, None, None] * ws.K11 + S12[:, None, None] * ws.K12
             + S22[:, None, None] * ws.K22)

    fac = np.sqrt(1.0 + df_top ** 2 * ws.mesh.H ** 2)
    coeff = np.exp(interp_trace(beta_trace, beta, ws.top_squad)) * fac
    wq = coeff * (_EDGE_W[None, :] * ws.top_len[:, None])
    m_loc = np.einsum("eg,ga,gb->eab", wq, _EDGE_PHI, _EDGE_PHI)

    data = np.concatenate([k_loc.ravel(), m_loc.ravel()])[ws.asm_keep]
    nf = ws.free.size
    A_free = sp.csc_matrix((data, (ws.asm_rows, ws.asm_cols)), shape=(nf, nf))
    # the local matrices are exactly symmetric but duplicate summation order
    # is not; restore bitwise symmetry for the factorization
    A_free = ((A_free + A_free.T) * 0.5).tocsc()
    try:
        factor = spla.splu(A_free)
    except RuntimeError as exc:  # pragma: no cover - SPD by construction
        raise SolverError(f"sparse factorization failed: {exc}") from exc
    return AssembledSystem(A_free=A_free.tocsr(), factor=factor, ws=ws,
                           shape=shape, beta=beta)


def neumann_load(mesh_or_ws, k: int) -> np.ndarray:
    """Load vector for the bottom-edge current sin(2 pi k s / L).

    Dirichlet entries are zeroed.
    """
    ws = mesh_or_ws if isinstance(mesh_or_ws, FemWorkspace) else FemWorkspace(mesh_or_ws)
    squad, lengths = ws.edge_quad(ws.bottom_edges)
    g = np.sin(2.0 * np.pi * k * squad / ws.mesh.L)
    wq = g * (_EDGE_W[None, :] * lengths[:, None])
    f_loc = wq @ _EDGE_PHI  # (E, 2)
    F = np.zeros(ws.mesh.n_nodes)
    np.add.at(F, ws.bottom_edges.ravel(), f_loc.ravel())
    F[ws.dirichlet] = 0.0
    return F


def all_loads(ws: FemWorkspace, n_loads: int) -> np.ndarray:
    return np.column_stack([neumann_load(ws, k) for k in range(1, n_loads + 1)])


def solve_all(system: AssembledSystem, n_loads: int) -> ForwardState:
    """Solve the assembled system for load patterns k = 1..n_loads."""
    if n_loads < 1:
        raise ValueError("n_loads must be >= 1")
    F = all_loads(system.ws, n_loads)
    U = system.solve(F)
    if not np.all(np.isfinite(U)):
        raise SolverError("non-finite forward solution")
    return ForwardState(solutions=U, system=system)


def bottom_interpolator(ws: FemWorkspace, sensor_x1: np.ndarray) -> sp.csr_matrix:
    """Sparse operator mapping a full nodal vector to bottom-edge sensor values."""
    sensor_x1 = np.asarray(sensor_x1, dtype=float)
    if np.any(sensor_x1 < 0.0) or np.any(sensor_x1 > ws.mesh.L):
        raise ValueError("sensor locations must lie in [0, L]")
    bottom_nodes = np.unique(ws.bottom_edges)
    order = np.argsort(ws.mesh.nodes[bottom_nodes, 0])
    bottom_nodes = bottom_nodes[order]
    xs = ws.mesh.nodes[bottom_nodes, 0]
    seg = np.clip(np.searchsorted(xs, sensor_x1, side="right") - 1, 0, xs.size - 2)
    t = (sensor_x1 - xs[seg]) / (xs[seg + 1] - xs[seg])
    rows = np.repeat(np.arange(sensor_x1.size), 2)
    cols = np.column_stack([bottom_nodes[seg], bottom_nodes[seg + 1]]).ravel()
    vals = np.column_stack([1.0 - t, t]).ravel()
    return sp.csr_matrix((vals, (rows, cols)), shape=(sensor_x1.size, ws.mesh.n_nodes))


def observe(state: ForwardState, sensor_x1) -> Observation:
    """Interpolate each load's solution along the bottom edge (load-major)."""
    sensor_x1 = np.asarray(sensor_x1, dtype=float)
    B = bottom_interpolator(state.system.ws, sensor_x1)
    y = (B @ state.solutions).T.ravel()
    return Observation(y=y, sensor_x1=sensor_x1, n_loads=state.solutions.shape[1])


def solve_deformed(mesh: SlabMesh, shape, beta: np.ndarray, n_loads: int,
                   sensor_x1, beta_trace: TraceMesh | None = None) -> Observation:
    """Direct solve on the physically deformed domain (verification path).

    The structured slab mesh is stretched vertically so that node row j sits
    at height H * f(x1) * j / ny, and the isotropic problem is assembled on
    that geometry with exp(beta) on the (slanted) top edge.
    """
    nodes = mesh.nodes.copy()
    f, _ = shape.eval(nodes[:, 0])
    nodes[:, 1] *= f
    deformed = SlabMesh(nodes=nodes, triangles=mesh.triangles,
                        edge_groups=mesh.edge_groups, L=mesh.L, H=mesh.H,
                        nx=mesh.nx, ny=mesh.ny)
    ws = FemWorkspace(deformed)
    if beta_trace is None:
        beta_trace = ws.trace  # same x1 arc-parameterisation as the reference trace
    beta = np.asarray(beta, dtype=float)

    ones = np.ones_like(ws.quad_pts[..., 0])
    A = _volume_matrix(ws, ones, np.zeros_like(ones), ones)

    squad, _ = ws.edge_quad(ws.top_edges)
    pa = deformed.nodes[ws.top_edges[:, 0]]
    pb = deformed.nodes[ws.top_edges[:, 1]]
    lengths = np.hypot(pb[:, 0] - pa[:, 0], pb[:, 1] - pa[:, 1])
    coeff = np.exp(interp_trace(beta_trace, beta, squad))
    A = (A + _edge_mass_matrix(ws.top_edges, coeff, lengths, deformed.n_nodes)).tocsr()

    A_free = A[ws.free][:, ws.free].tocsc()
    factor = spla.splu(A_free)
    system = AssembledSystem(A_free=A_free.tocsr(), factor=factor, ws=ws,
                             shape=shape, beta=beta)
    state = solve_all(system, n_loads)
    return observe(state, sensor_x1)
