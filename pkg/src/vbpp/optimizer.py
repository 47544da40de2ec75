"""Parameter packing, inducing-point placement and the fit driver.

All parameters are optimised jointly through an augmented vector
[log gamma, log alpha_1..R, u_bar, m, vech(L), (omega)], with positivity of
gamma, alpha and the diagonal of L maintained by log transforms and the
inducing points (when optimised) confined to the domain by a sine map.
Optimisation is limited-memory quasi-Newton (L-BFGS-B on the negated bound).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky, solve_triangular
from scipy.optimize import minimize

from .core import (
    InducingPoints,
    Model,
    VariationalState,
    elbo_and_gradient,
)
from .kernel import HyperParams, gram
from .pointdata import Domain, EventSet, domain_measure


class FitError(RuntimeError):
    """Raised when the optimiser cannot make progress."""


@dataclass(frozen=True)
class MapPrior:
    """Independent prior on Theta only: log-normal on gamma and each alpha_r,
    normal on u_bar.  The variational parameters m, L never receive a prior."""

    log_gamma_mean: float
    log_alpha_mean: np.ndarray
    u_bar_mean: float
    u_bar_sd: float
    log_sd: float = 1.0

    def log_density_and_grad(self, log_gamma, log_alpha, u_bar):
        """log p(Theta) and its gradient w.r.t. (log gamma, log alpha, u_bar).

        Densities are over Theta; the -log theta Jacobian of the log-normal
        appears as a constant -1 in the log-space gradient.
        """
        la = np.asarray(log_alpha)
        rg = (log_gamma - self.log_gamma_mean) / self.log_sd
        ra = (la - self.log_alpha_mean) / self.log_sd
        ru = (u_bar - self.u_bar_mean) / self.u_bar_sd
        logp = -0.5 * (rg**2 + float(ra @ ra) + ru**2) - log_gamma - float(la.sum())
        d_lg = -rg / self.log_sd - 1.0
        d_la = -ra / self.log_sd - 1.0
        d_ub = -ru / self.u_bar_sd
        return logp, d_lg, d_la, d_ub


@dataclass(frozen=True)
class FitConfig:
    """Configuration of a single fit run."""

    max_iters: int = 500
    grad_tol: float = 1e-5
    optimize_z: bool = False
    use_map: bool = False
    map_prior: MapPrior | None = None
    seed: int = 0
    init_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not (self.grad_tol > 0):
            raise ValueError("grad_tol must be positive")


def z_from_omega(omega, d: Domain) -> np.ndarray:
    """Map unconstrained angles to points: mid + half_extent * sin(omega).

    omega = 0 gives the domain midpoint, +-pi/2 the upper/lower boundary;
    any real input lands inside the closed domain.
    """
    omega = np.asarray(omega, dtype=float)
    if omega.ndim == 1:
        omega = omega[:, None]
    mid = 0.5 * (d.lo + d.hi)
    half = 0.5 * (d.hi - d.lo)
    return mid[None, :] + half[None, :] * np.sin(omega)


def omega_from_z(Z, d: Domain) -> np.ndarray:
    """Angles in [-pi/2, pi/2] mapping back to Z (inverse of z_from_omega)."""
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    mid = 0.5 * (d.lo + d.hi)
    half = 0.5 * (d.hi - d.lo)
    return np.arcsin(np.clip((Z - mid[None, :]) / half[None, :], -1.0, 1.0))


def regular_grid(d: Domain, per_dim: int | list[int]) -> np.ndarray:
    """Per-dimension grids at cell midpoints, Cartesian product across dims.

    Midpoints sit half a cell away from the boundary, so no two grid points
    coincide with domain corners or each other.
    """
    counts = np.broadcast_to(np.asarray(per_dim, dtype=int), (d.dims,))
    axes = []
    for r in range(d.dims):
        w = d.extent[r] / counts[r]
        axes.append(d.lo[r] + w * (np.arange(counts[r]) + 0.5))
    return np.array([pt for pt in itertools.product(*axes)])


# ----------------------------------------------------------------------
# Packing
# ----------------------------------------------------------------------

def pack(model: Model, cfg: FitConfig) -> np.ndarray:
    """Augmented parameter vector [log gamma, log alpha, u_bar, m,
    vech(L) with log diagonal, (omega if cfg.optimize_z)]."""
    h = model.hyper
    M = model.num_inducing
    L = model.var_state.L.copy()
    L[np.diag_indices_from(L)] = np.log(np.diag(L))
    parts = [
        [np.log(h.gamma)],
        np.log(h.alpha),
        [h.u_bar],
        model.var_state.m,
        L[np.tril_indices(M)],
    ]
    if cfg.optimize_z:
        omega = model.inducing.omega
        if omega is None:
            omega = omega_from_z(model.inducing.Z, model.domain)
        parts.append(omega.reshape(-1))
    return np.concatenate([np.asarray(p, dtype=float).reshape(-1) for p in parts])


def unpack(y: np.ndarray, domain: Domain, M: int, cfg: FitConfig,
           fixed_z: np.ndarray | None = None, fit_metadata: dict | None = None) -> Model:
    """Inverse of :func:`pack`; requires the fixed inducing points when
    cfg.optimize_z is false."""
    R = domain.dims
    y = np.asarray(y, dtype=float)
    i = 0
    log_gamma = y[i]; i += 1
    log_alpha = y[i:i + R]; i += R
    u_bar = y[i]; i += 1
    m = y[i:i + M]; i += M
    n_tril = M * (M + 1) // 2
    L = np.zeros((M, M))
    L[np.tril_indices(M)] = y[i:i + n_tril]; i += n_tril
    L[np.diag_indices_from(L)] = np.exp(np.diag(L))
    if cfg.optimize_z:
        omega = y[i:i + M * R].reshape(M, R); i += M * R
        inducing = InducingPoints(Z=z_from_omega(omega, domain), omega=omega)
    else:
        if fixed_z is None:
            raise ValueError("fixed_z required when optimize_z is false")
        inducing = InducingPoints(Z=fixed_z)
    if i != y.size:
        raise ValueError(f"parameter vector has length {y.size}, expected {i}")
    return Model(
        hyper=HyperParams(gamma=np.exp(log_gamma), alpha=np.exp(log_alpha), u_bar=u_bar),
        inducing=inducing,
        var_state=VariationalState(m=m, L=L),
        domain=domain,
        fit_metadata=fit_metadata,
    )


# ----------------------------------------------------------------------
# Initialization
# ----------------------------------------------------------------------

def _initial_model(events: EventSet, d: Domain, Z: np.ndarray, cfg: FitConfig) -> Model:
    measure = domain_measure(d)
    n_eff = max(events.n, 1)              # keeps gamma positive for empty data
    ov = cfg.init_overrides
    gamma0 = float(ov.get("gamma", n_eff / measure))
    alpha0 = np.asarray(ov.get("alpha", (d.extent / 5.0) ** 2), dtype=float)
    u_bar0 = float(ov.get("u_bar", np.sqrt(events.n / measure)))
    hyper = HyperParams(gamma=gamma0, alpha=alpha0, u_bar=u_bar0)

    K = gram(Z, Z, hyper)
    K[np.diag_indices_from(K)] += 1e-8 * gamma0
    L0 = 0.1 * cholesky(K, lower=True)
    m0 = np.full(Z.shape[0], u_bar0)
    omega = omega_from_z(Z, d) if cfg.optimize_z else None
    return Model(
        hyper=hyper,
        inducing=InducingPoints(Z=Z, omega=omega),
        var_state=VariationalState(m=m0, L=L0),
        domain=d,
    )


def default_map_prior(init: Model) -> MapPrior:
    """Prior centred on the initialisation: log-normal(log init, 1) on gamma
    and alpha, Normal(init, (init + 1)^2) on u_bar."""
    return MapPrior(
        log_gamma_mean=np.log(init.hyper.gamma),
        log_alpha_mean=np.log(init.hyper.alpha),
        u_bar_mean=init.hyper.u_bar,
        u_bar_sd=abs(init.hyper.u_bar) + 1.0,
    )


# ----------------------------------------------------------------------
# Fit driver
# ----------------------------------------------------------------------

def _objective_factory(events, domain, M, cfg, fixed_z, prior):
    wrt = ("log_gamma", "log_alpha", "u_bar", "m", "L")
    if cfg.optimize_z:
        wrt = wrt + ("omega",)

    def negative_bound(y):
        try:
            model = unpack(y, domain, M, cfg, fixed_z=fixed_z)
            value, grads = elbo_and_gradient(model, events, wrt=wrt)
        except (np.linalg.LinAlgError, FloatingPointError):
            return 1e25, np.zeros_like(y)
        gvec = np.concatenate([
            np.atleast_1d(np.asarray(grads[name], dtype=float)).reshape(-1)
            for name in wrt
        ])
        if prior is not None:
            R = domain.dims
            logp, d_lg, d_la, d_ub = prior.log_density_and_grad(
                y[0], y[1:1 + R], y[1 + R])
            value += logp
            gvec = gvec.copy()
            gvec[0] += d_lg
            gvec[1:1 + R] += d_la
            gvec[1 + R] += d_ub
        if not np.isfinite(value):
            return 1e25, np.zeros_like(y)
        return -value, -gvec

    return negative_bound


def _whitened_coords(objective, C0: np.ndarray, M: int, R: int):
    """Change of variables m = C0 w, L = C0 W for the variational blocks.

    C0 is the Cholesky factor of the initial K_zz + jitter.  The bound is
    extremely stiff along near-null directions of K_zz when m and L are
    optimised directly (Kzz^{-1} m appears squared), which stalls the line
    search for dense inducing grids; the fixed linear preconditioner flattens
    those directions without changing the model parameterisation.

    Returns (wrapped_objective, to_canonical, from_canonical) where the two
    converters map whole parameter vectors and leave the hyperparameter head
    and any trailing omega block untouched.
    """
    head = 1 + R + 1
    tril = np.tril_indices(M)
    diag = np.diag_indices(M)
    n_tril = tril[0].size

    def to_canonical(yw):
        y = np.asarray(yw, dtype=float).copy()
        y[head:head + M] = C0 @ yw[head:head + M]
        W = np.zeros((M, M))
        W[tril] = yw[head + M:head + M + n_tril]
        W[diag] = np.exp(W[diag])
        L = C0 @ W
        packed = L.copy()
        packed[diag] = np.log(L[diag])
        y[head + M:head + M + n_tril] = packed[tril]
        return y, W, L

    def from_canonical(y):
        yw = np.asarray(y, dtype=float).copy()
        yw[head:head + M] = solve_triangular(C0, y[head:head + M], lower=True)
        L = np.zeros((M, M))
        L[tril] = y[head + M:head + M + n_tril]
        L[diag] = np.exp(L[diag])
        W = solve_triangular(C0, L, lower=True)
        packed = W.copy()
        packed[diag] = np.log(np.abs(W[diag]))
        yw[head + M:head + M + n_tril] = packed[tril]
        return yw

    def wrapped(yw):
        y, W, L = to_canonical(yw)
        f, g = objective(y)
        if f >= 1e20:
            return f, np.zeros_like(yw)
        gw = g.copy()
        gw[head:head + M] = C0.T @ g[head:head + M]
        GL = np.zeros((M, M))
        GL[tril] = g[head + M:head + M + n_tril]
        GL[diag] = GL[diag] / L[diag]          # undo the log-diagonal chain
        GW = C0.T @ GL
        GW[diag] = GW[diag] * W[diag]
        gw[head + M:head + M + n_tril] = GW[tril]
        return f, gw

    return wrapped, to_canonical, from_canonical


def fit(events: EventSet, d: Domain, inducing, cfg: FitConfig | None = None) -> Model:
    """Maximise the bound (plus optional log-prior) over the augmented vector.

    Parameters
    ----------
    events : EventSet
    d : Domain
    inducing : int or array
        Per-dimension grid count (total M = count^R) or explicit M x R
        locations.
    cfg : FitConfig

    Returns a model whose ``fit_metadata`` records the objective trace
    (non-decreasing across accepted iterations), iteration count and config.
    """
    cfg = cfg or FitConfig()
    if np.isscalar(inducing):
        Z = regular_grid(d, int(inducing))
    else:
        Z = np.asarray(inducing, dtype=float)
        if Z.ndim == 1:
            Z = Z[:, None]
    if events.n and events.points.shape[1] != d.dims:
        raise ValueError("event dimensionality does not match the domain")

    init = _initial_model(events, d, Z, cfg)
    prior = None
    if cfg.use_map or cfg.map_prior is not None:
        prior = cfg.map_prior or default_map_prior(init)

    M = Z.shape[0]
    fixed_z = None if cfg.optimize_z else Z
    objective = _objective_factory(events, d, M, cfg, fixed_z, prior)

    K0 = gram(Z, Z, init.hyper)
    K0[np.diag_indices_from(K0)] += 1e-8 * init.hyper.gamma
    wobj, to_canonical, from_canonical = _whitened_coords(
        objective, cholesky(K0, lower=True), M, d.dims)
    y0 = from_canonical(pack(init, cfg))

    trace = [-wobj(y0)[0]]

    def record(yk):
        trace.append(-wobj(yk)[0])

    result = minimize(
        wobj, y0, jac=True, method="L-BFGS-B", callback=record,
        options={"maxiter": cfg.max_iters, "gtol": cfg.grad_tol,
                 "ftol": 1e-14, "maxcor": 20, "maxls": 50},
    )
    if not np.isfinite(result.fun):
        raise FitError(f"optimiser failed: {result.message}")

    metadata = {
        "elbo": float(-result.fun) if prior is None else None,
        "objective": float(-result.fun),
        "iterations": int(result.nit),
        "converged": bool(result.success),
        "message": str(result.message),
        "trace": [float(t) for t in trace],
        "config": {
            "max_iters": cfg.max_iters,
            "grad_tol": cfg.grad_tol,
            "optimize_z": cfg.optimize_z,
            "map": prior is not None,
            "seed": cfg.seed,
        },
    }
    model = unpack(to_canonical(result.x)[0], d, M, cfg,
                   fixed_z=fixed_z, fit_metadata=metadata)
    if metadata["elbo"] is None:
        from .core import elbo as _elbo
        metadata["elbo"] = float(_elbo(model, events))
    return model
