"""Experiment orchestration: configuration, inverse-crime-free synthetic data
generation, MAP/Laplace and MCMC runs, and result export."""
from __future__ import annotations

import dataclasses
import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import fem, mala, optimize
from .geometry import BoundaryShape, SampledProfile, fourier_basis
from .inverse import Problem
from .mesh import build_slab_mesh, trace_of_top
from .priors import build_alpha_prior, build_beta_prior


class ConfigError(Exception):
    """Invalid or inconsistent experiment configuration."""


@dataclass
class MeshSpec:
    nx: int
    ny: int


@dataclass
class GNSettings:
    max_iters: int = 100
    grad_reduction: float = 1e5
    c1: float = 1e-4
    c2: float = 0.9


@dataclass
class MalaSettings:
    burn_in: int = 10_000
    max_steps: int = 400_000
    check_interval: int = 5_000
    mcse_threshold: float = 0.1
    target_accept: float = 0.574
    adapt_exponent: float = 0.6
    refresh_every: int = 100
    tau_init: float = 0.1
    n_chains: int = 1


@dataclass
class ExperimentConfig:
    L: float = 1.0
    H: float = 0.05
    n_loads: int = 8
    n_sensors: int = 32
    fine_mesh: MeshSpec = field(default_factory=lambda: MeshSpec(nx=229, ny=10))
    inversion_mesh: MeshSpec = field(default_factory=lambda: MeshSpec(nx=77, ny=7))
    truth_profile: str = "example1"
    truth_params: dict = field(default_factory=dict)
    p: int = 7
    sigma_alpha2: float = 0.01
    s_alpha: float = -1.0
    delta_beta2: float = 50.0
    corr_l: float = 10.0
    noise_percent: float = 1.0
    noise_range_per_load: bool = False
    seed: int = 0
    output_dir: str = "out"
    gn: GNSettings = field(default_factory=GNSettings)
    mala: MalaSettings = field(default_factory=MalaSettings)

    def __post_init__(self):
        if self.L <= 0 or self.H <= 0:
            raise ConfigError("L and H must be positive")
        if self.n_loads < 1 or self.n_sensors < 1:
            raise ConfigError("need at least one load and one sensor")

    def sensor_x1(self) -> np.ndarray:
        # equally spaced with half-spacing end offsets (avoids grounded corners)
        return (np.arange(self.n_sensors) + 0.5) * self.L / self.n_sensors

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        def build(tp, data):
            names = {f.name: f for f in dataclasses.fields(tp)}
            unknown = set(data) - set(names)
            if unknown:
                raise ConfigError(f"unknown config keys: {sorted(unknown)}")
            kwargs = {}
            for key, val in data.items():
                f = names[key]
                if dataclasses.is_dataclass(f.type) or f.type in (MeshSpec, GNSettings, MalaSettings):
                    kwargs[key] = val
                else:
                    kwargs[key] = val
            for key in ("fine_mesh", "inversion_mesh"):
                if key in kwargs and isinstance(kwargs[key], dict):
                    kwargs[key] = MeshSpec(**kwargs[key])
            if "gn" in kwargs and isinstance(kwargs["gn"], dict):
                kwargs["gn"] = GNSettings(**kwargs["gn"])
            if "mala" in kwargs and isinstance(kwargs["mala"], dict):
                kwargs["mala"] = MalaSettings(**kwargs["mala"])
            return tp(**kwargs)

        try:
            return build(cls, d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json_file(cls, path: str) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def atomic_write(path: str, text: str):
    """Write-temp-then-rename so readers never see partial files."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)))
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


# -- truth profiles ----------------------------------------------------------

def _gaussian_bump(x, center, width):
    return np.exp(-0.5 * ((x - center) / width) ** 2)


def _smooth_cavity(x, center, halfwidth, steepness):
    """Flat-bottomed dip built from two sigmoids; 0 outside, ~1 inside."""
    s = lambda z: 1.0 / (1.0 + np.exp(-z))
    return s((x - center + halfwidth) / steepness) * s((center + halfwidth - x) / steepness)


def truth_profiles(name: str, params: dict | None = None, L: float = 1.0,
                   n_grid: int = 4096, rng: np.random.Generator | None = None):
    """Analytic truth profiles (boundary height f and log-admittance beta).

    Returns (boundary_profile, beta_fn) where boundary_profile has an
    eval(x) -> (f, df) method and beta_fn maps arc-coordinates to values.
    example2 adds white noise to both curves and needs an rng.
    """
    params = dict(params or {})
    x = np.linspace(0.0, L, n_grid + 1)

    if name == "example1":
        depth = params.get("depth", 0.2)
        center = params.get("center", 0.5)
        width = params.get("width", 0.12)
        fvals = 1.0 - depth * _gaussian_bump(x, center, width)
        beta_fn = lambda s: (params.get("beta_base", 1.0)
                             - params.get("beta_dip", 2.0)
                             * _gaussian_bump(np.asarray(s), params.get("beta_center", 0.6),
                                              params.get("beta_width", 0.15)))
        return SampledProfile(x=x, values=fvals), beta_fn

    if name == "example2":
        if rng is None:
            raise ValueError("example2 truth needs an rng for its white noise")
        noise_f = params.get("noise_f", 0.01)
        noise_beta = params.get("noise_beta", 0.05)
        fvals = (1.0 - params.get("dip_depth", 0.25)
                 * _gaussian_bump(x, params.get("dip_center", 0.3), params.get("dip_width", 0.15))
                 + params.get("bump_height", 0.15)
                 * _gaussian_bump(x, params.get("bump_center", 0.8), params.get("bump_width", 0.06)))
        fvals = fvals + noise_f * rng.standard_normal(x.size)
        beta_smooth = (params.get("beta_base", 0.5)
                       - 1.5 * _gaussian_bump(x, 0.35, 0.18)
                       + 1.0 * _gaussian_bump(x, 0.75, 0.1))
        beta_vals = beta_smooth + noise_beta * rng.standard_normal(x.size)
        beta_fn = lambda s: np.interp(np.asarray(s), x, beta_vals)
        return SampledProfile(x=x, values=fvals), beta_fn

    if name == "example3":
        centers = params.get("centers", (0.2, 0.5, 0.8))
        depths = params.get("depths", (0.35, 0.45, 0.4))
        halfwidths = params.get("halfwidths", (0.05, 0.06, 0.05))
        steepness = params.get("steepness", 0.008)
        fvals = np.ones_like(x)
        beta_vals = np.full_like(x, params.get("beta_base", 1.0))
        for c, d, hw in zip(centers, depths, halfwidths):
            cav = _smooth_cavity(x, c, hw, steepness)
            fvals = fvals - d * cav
            beta_vals = beta_vals - params.get("beta_drop", 2.5) * cav
        beta_fn = lambda s: np.interp(np.asarray(s), x, beta_vals)
        return SampledProfile(x=x, values=fvals), beta_fn

    if name == "custom":
        fvals = np.interp(x, params["f_x"], params["f_values"])
        bx, bv = np.asarray(params["beta_x"]), np.asarray(params["beta_values"])
        beta_fn = lambda s: np.interp(np.asarray(s), bx, bv)
        return SampledProfile(x=x, values=fvals), beta_fn

    raise ValueError(f"unknown truth profile {name!r}")


# -- synthetic data ----------------------------------------------------------

@dataclass
class SyntheticDataset:
    y: np.ndarray
    y_noiseless: np.ndarray
    delta_e: float
    seed: int
    sensor_x1: np.ndarray
    n_loads: int
    truth_f: np.ndarray        # f sampled at the fine trace nodes
    truth_beta: np.ndarray     # beta at the fine trace nodes
    truth_s: np.ndarray        # fine trace arc-coordinates
    fine_mesh: dict            # metadata of the generating mesh

    def to_files(self, json_path: str, csv_path: str):
        header = {
            "delta_e": self.delta_e, "seed": self.seed,
            "n_loads": self.n_loads,
            "sensor_x1": self.sensor_x1.tolist(),
            "truth_s": self.truth_s.tolist(),
            "truth_f": self.truth_f.tolist(),
            "truth_beta": self.truth_beta.tolist(),
            "fine_mesh": self.fine_mesh,
            "csv": os.path.basename(csv_path),
        }
        atomic_write(json_path, json.dumps(header, indent=2))
        lines = ["y,y_noiseless"]
        lines += [f"{float(a)!r},{float(b)!r}" for a, b in zip(self.y, self.y_noiseless)]
        atomic_write(csv_path, "\n".join(lines) + "\n")

    @classmethod
    def from_files(cls, json_path: str) -> "SyntheticDataset":
        with open(json_path) as fh:
            header = json.load(fh)
        csv_path = os.path.join(os.path.dirname(json_path), header["csv"])
        payload = np.loadtxt(csv_path, delimiter=",", skiprows=1)
        return cls(y=payload[:, 0], y_noiseless=payload[:, 1],
                   delta_e=header["delta_e"], seed=header["seed"],
                   sensor_x1=np.asarray(header["sensor_x1"]),
                   n_loads=header["n_loads"],
                   truth_f=np.asarray(header["truth_f"]),
                   truth_beta=np.asarray(header["truth_beta"]),
                   truth_s=np.asarray(header["truth_s"]),
                   fine_mesh=header["fine_mesh"])


def generate_data(config: ExperimentConfig) -> SyntheticDataset:
    """Solve the forward problem with the truth profiles on the fine mesh and
    add Gaussian noise scaled to the stated percentage of the data range."""
    fine = config.fine_mesh
    inv = config.inversion_mesh
    n_fine = (fine.nx + 1) * (fine.ny + 1)
    n_inv = (inv.nx + 1) * (inv.ny + 1)
    if n_fine < 3 * n_inv:
        raise ConfigError("fine mesh must have at least 3x the inversion mesh nodes")

    seeds = np.random.SeedSequence(config.seed).spawn(2)
    rng_truth = np.random.default_rng(seeds[0])
    rng_noise = np.random.default_rng(seeds[1])

    profile, beta_fn = truth_profiles(config.truth_profile, config.truth_params,
                                      L=config.L, rng=rng_truth)
    mesh = build_slab_mesh(config.L, config.H, fine.nx, fine.ny)
    trace = trace_of_top(mesh)
    beta_true = np.asarray(beta_fn(trace.s), dtype=float)

    system = fem.assemble(mesh, profile, beta_true)
    state = fem.solve_all(system, config.n_loads)
    obs = fem.observe(state, config.sensor_x1())
    y0 = obs.y

    if config.noise_range_per_load:
        per = y0.reshape(config.n_loads, -1)
        rng_span = float(np.mean(per.max(axis=1) - per.min(axis=1)))
    else:
        rng_span = float(y0.max() - y0.min())
    delta_e = rng_span * config.noise_percent / 100.0
    y = y0 + delta_e * rng_noise.standard_normal(y0.size)

    f_true, _ = profile.eval(trace.s)
    return SyntheticDataset(y=y, y_noiseless=y0, delta_e=delta_e, seed=config.seed,
                            sensor_x1=config.sensor_x1(), n_loads=config.n_loads,
                            truth_f=f_true, truth_beta=beta_true, truth_s=trace.s,
                            fine_mesh={"nx": fine.nx, "ny": fine.ny, "n_nodes": n_fine,
                                       "n_trace": trace.n_nodes})


# -- inference runs ----------------------------------------------------------

def build_problem(config: ExperimentConfig, dataset: SyntheticDataset) -> Problem:
    mesh = build_slab_mesh(config.L, config.H, config.inversion_mesh.nx,
                           config.inversion_mesh.ny)
    trace = trace_of_top(mesh)
    alpha_prior = build_alpha_prior(config.p, config.sigma_alpha2, config.s_alpha)
    beta_prior = build_beta_prior(trace, config.delta_beta2, config.corr_l)
    return Problem(mesh=mesh, p=config.p, alpha_prior=alpha_prior,
                   beta_prior=beta_prior, data=dataset.y,
                   noise_std=dataset.delta_e, sensor_x1=dataset.sensor_x1,
                   n_loads=dataset.n_loads)


@dataclass
class MapResult:
    m_map: np.ndarray
    report: optimize.GaussNewtonReport
    laplace: optimize.LaplaceApproximation
    problem: Problem


def boundary_heights(problem: Problem, alpha: np.ndarray) -> np.ndarray:
    """Physical boundary height H * f(s) at the trace nodes."""
    shape = problem.shape_of(alpha)
    f, _ = shape.eval(problem.trace.s)
    return problem.mesh.H * f


def run_map(config: ExperimentConfig, dataset: SyntheticDataset,
            problem: Problem | None = None) -> MapResult:
    """Gauss-Newton MAP estimate plus Laplace approximation; writes a JSON
    report and CSV envelope tables to the output directory."""
    problem = problem or build_problem(config, dataset)
    opts = optimize.GaussNewtonOptions(max_iters=config.gn.max_iters,
                                       grad_reduction=config.gn.grad_reduction,
                                       c1=config.gn.c1, c2=config.gn.c2)
    m_map, report = gauss_newton_from_prior_mean(problem, opts)
    lap = optimize.laplace(problem, m_map)

    alpha_map, beta_map = problem.split(m_map)
    std = lap.marginal_std
    # pointwise boundary-height std from the alpha covariance block
    vals, _ = fourier_basis(problem.p, problem.mesh.L, problem.trace.s)
    cov_aa = lap.covariance[:problem.n_alpha, :problem.n_alpha]
    bnd_std = problem.mesh.H * np.sqrt(np.einsum("si,ij,sj->s", vals, cov_aa, vals))
    bnd_map = boundary_heights(problem, alpha_map)

    out = config.output_dir
    rep = {
        "m_map": m_map.tolist(),
        "alpha_map": alpha_map.tolist(),
        "beta_map": beta_map.tolist(),
        "marginal_std": std.tolist(),
        "gauss_newton": report.to_dict(),
        "n_parameters": problem.n,
        "inversion_mesh": {"nx": config.inversion_mesh.nx, "ny": config.inversion_mesh.ny,
                           "n_nodes": problem.mesh.n_nodes,
                           "n_trace": problem.trace.n_nodes},
    }
    atomic_write(os.path.join(out, "map_report.json"), json.dumps(rep, indent=2))

    def envelope_csv(s, center, sigma):
        lines = ["s,center," + ",".join(f"lo{k},hi{k}" for k in (1, 2, 3))]
        for i in range(len(s)):
            row = [repr(float(s[i])), repr(float(center[i]))]
            for k in (1, 2, 3):
                row += [repr(float(center[i] - k * sigma[i])),
                        repr(float(center[i] + k * sigma[i]))]
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"

    atomic_write(os.path.join(out, "boundary_envelope_laplace.csv"),
                 envelope_csv(problem.trace.s, bnd_map, bnd_std))
    atomic_write(os.path.join(out, "robin_envelope_laplace.csv"),
                 envelope_csv(problem.trace.s, beta_map, std[problem.n_alpha:]))
    return MapResult(m_map=m_map, report=report, laplace=lap, problem=problem)


def gauss_newton_from_prior_mean(problem: Problem, opts: optimize.GaussNewtonOptions):
    return optimize.gauss_newton(problem, problem.prior_mean, opts)


@dataclass
class McmcResult:
    chain: mala.ChainOutput
    cm: np.ndarray
    summary: dict


def chain_csv(problem: Problem, output: mala.ChainOutput) -> str:
    names = [f"alpha_{i}" for i in range(problem.n_alpha)]
    names += [f"beta_{j + 1}" for j in range(problem.q)]
    lines = [",".join(names + ["J", "accepted"])]
    for row, J, acc in zip(output.samples, output.J_trace, output.accept_flags):
        lines.append(",".join([repr(float(v)) for v in row]
                              + [repr(float(J)), str(int(acc))]))
    return "\n".join(lines) + "\n"


def run_mcmc(config: ExperimentConfig, dataset: SyntheticDataset,
             map_result: MapResult) -> McmcResult:
    """MALA from the MAP estimate with the Laplace covariance as the initial
    proposal; writes the chain CSV and a summary JSON."""
    problem = map_result.problem
    rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(3)[2])
    target = problem.potential_and_gradient
    ms = config.mala
    output = mala.run_chain(map_result.m_map, map_result.laplace.covariance,
                            target, rng, burn_in=ms.burn_in, max_steps=ms.max_steps,
                            check_interval=ms.check_interval,
                            mcse_threshold=ms.mcse_threshold, tau_init=ms.tau_init,
                            target_accept=ms.target_accept,
                            adapt_exponent=ms.adapt_exponent,
                            refresh_every=ms.refresh_every)

    cm = output.samples.mean(axis=0)
    std = output.samples.std(axis=0, ddof=1)
    hw = mala.mcse_halfwidth(output.samples)
    skew_beta = stats.skew(output.samples[:, problem.n_alpha:], axis=0)

    # pointwise credible envelopes for the boundary height and Robin field
    vals, _ = fourier_basis(problem.p, problem.mesh.L, problem.trace.s)
    heights = problem.mesh.H * (1.0 + output.samples[:, :problem.n_alpha] @ vals.T)
    levels = {"68": (16.0, 84.0), "95": (2.5, 97.5), "99.7": (0.15, 99.85)}
    bnd_env = {k: np.percentile(heights, v, axis=0).tolist() for k, v in levels.items()}
    beta_samples = output.samples[:, problem.n_alpha:]
    rob_env = {k: np.percentile(beta_samples, v, axis=0).tolist() for k, v in levels.items()}

    out = config.output_dir
    atomic_write(os.path.join(out, "chain.csv"), chain_csv(problem, output))
    summary = {
        "converged": output.converged,
        "n_recorded": output.n_recorded,
        "burn_in": output.n_burn_in,
        "acceptance_rate": output.acceptance_rate,
        "acceptance_rate_trace": output.acceptance_rate_trace,
        "final_tau": output.final_tau,
        "cm": cm.tolist(),
        "posterior_std": std.tolist(),
        "mcse": output.mcse.tolist() if output.mcse is not None else None,
        "mcse_halfwidth_over_std": (hw / std).tolist(),
        "beta_skewness": skew_beta.tolist(),
        "trace_s": problem.trace.s.tolist(),
        "boundary_envelopes": bnd_env,
        "robin_envelopes": rob_env,
    }
    atomic_write(os.path.join(out, "mcmc_summary.json"), json.dumps(summary, indent=2))
    return McmcResult(chain=output, cm=cm, summary=summary)


def diagnose(chain_paths: list, n_alpha: int | None = None) -> dict:
    """Gelman-Rubin and MCSE tables from saved chain CSV files."""
    chains = []
    for path in chain_paths:
        data = np.loadtxt(path, delimiter=",", skiprows=1)
        chains.append(data[:, :-2])  # drop J and accepted columns
    length = min(c.shape[0] for c in chains)
    chains = [c[:length] for c in chains]
    result = {"n_chains": len(chains), "length": length}
    if len(chains) >= 2:
        result["gelman_rubin"] = mala.gelman_rubin(chains).tolist()
    result["mcse"] = [mala.mcse_batch_means(c).tolist() for c in chains]
    return result
