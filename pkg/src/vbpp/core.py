"""Variational model state and the evidence lower bound with analytic gradient.

The intensity is lambda(x) = f(x)^2 with f a GP conditioned on inducing
values u at locations Z, u ~ N(1 u_bar, K_zz), and a Gaussian variational
distribution q(u) = N(m, S), S = L L^T.  The bound is

    L = -(int E[f]^2 + int Var[f]) + sum_n E[log f_n^2] - KL(q(u) || p(u)),

where both domain integrals are closed-form through the Psi matrix and the
per-event expectations go through the tabulated special function in
:mod:`vbpp.specfun`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from . import specfun
from .kernel import HyperParams, gram, sq_dists_per_dim, psi_matrix, psi_with_partials
from .pointdata import Domain, EventSet, domain_measure

JITTER_SCALE = 1e-8
VAR_FLOOR = 1e-12

GRAD_BLOCKS = ("log_gamma", "log_alpha", "u_bar", "m", "L", "omega")


class NumericalError(RuntimeError):
    """Raised when a required matrix factorisation fails."""


@dataclass(frozen=True)
class VariationalState:
    """Gaussian q(u) = N(m, S) parameterised by m and the Cholesky factor L."""

    m: np.ndarray
    L: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=float).reshape(-1)
        L = np.asarray(self.L, dtype=float)
        if L.shape != (m.size, m.size):
            raise ValueError("L must be M x M with M = len(m)")
        if not np.allclose(L, np.tril(L)):
            raise ValueError("L must be lower triangular")
        if not (np.diag(L) > 0).all():
            raise ValueError("L must have a strictly positive diagonal")
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "L", np.tril(L))
        self.m.setflags(write=False)
        self.L.setflags(write=False)

    @property
    def S(self) -> np.ndarray:
        return self.L @ self.L.T


@dataclass(frozen=True)
class InducingPoints:
    """Inducing locations Z, optionally backed by unconstrained angles omega.

    When ``omega`` is present, Z is exactly the image of omega under the sine
    map that confines each coordinate to the domain (see optimizer module).
    """

    Z: np.ndarray
    omega: np.ndarray | None = None

    def __post_init__(self):
        Z = np.asarray(self.Z, dtype=float)
        if Z.ndim == 1:
            Z = Z[:, None]
        object.__setattr__(self, "Z", Z)
        self.Z.setflags(write=False)
        if self.omega is not None:
            om = np.asarray(self.omega, dtype=float).reshape(Z.shape)
            object.__setattr__(self, "omega", om)
            self.omega.setflags(write=False)

    @property
    def count(self) -> int:
        return self.Z.shape[0]


@dataclass(frozen=True)
class Model:
    """Hyperparameters + inducing points + variational state over a domain.

    Kernel-derived factors (Cholesky of K_zz + jitter, Psi) are computed once
    at construction and shared by every downstream evaluation; the model is
    immutable, so they can never go stale.
    """

    hyper: HyperParams
    inducing: InducingPoints
    var_state: VariationalState
    domain: Domain
    fit_metadata: dict | None = None
    _chol: tuple = field(init=False, repr=False, compare=False, default=None)
    _psi: np.ndarray = field(init=False, repr=False, compare=False, default=None)

    def __post_init__(self):
        Z = self.inducing.Z
        if Z.shape[1] != self.domain.dims or self.hyper.dims != self.domain.dims:
            raise ValueError("inducing points, domain and hyperparameters disagree on R")
        if self.var_state.m.size != Z.shape[0]:
            raise ValueError("variational state size must match the number of inducing points")
        K = gram(Z, Z, self.hyper)
        K[np.diag_indices_from(K)] += JITTER_SCALE * self.hyper.gamma
        try:
            chol = cho_factor(K, lower=True)
        except np.linalg.LinAlgError as exc:  # pragma: no cover - jitter normally suffices
            raise NumericalError(f"Cholesky of K_zz failed: {exc}") from exc
        object.__setattr__(self, "_chol", chol)
        object.__setattr__(self, "_psi", psi_matrix(Z, self.hyper, self.domain))

    # -- cached factors -------------------------------------------------
    @property
    def kzz_chol(self):
        return self._chol

    @property
    def psi(self) -> np.ndarray:
        return self._psi

    def kzz_solve(self, rhs: np.ndarray) -> np.ndarray:
        return cho_solve(self._chol, rhs)

    @property
    def kzz_logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self._chol[0]))))

    @property
    def num_inducing(self) -> int:
        return self.inducing.count


# ----------------------------------------------------------------------
# q(f) marginals
# ----------------------------------------------------------------------

def qf_marginals(X, model: Model, collapse_s: bool = False):
    """Marginal mean and variance of q(f) at each row of X.

    With ``collapse_s`` the variational covariance S is replaced by zero
    (the tightened predictive regime), dropping the third variance term.
    Variances are floored at 1e-12.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.ndim == 1:
        X = X[:, None]
    A = gram(X, model.inducing.Z, model.hyper)        # N x M
    Abar = model.kzz_solve(A.T).T                     # rows a_n^T = k_n^T K^-1
    mu = Abar @ model.var_state.m
    var = model.hyper.gamma - np.einsum("nm,nm->n", Abar, A)
    if not collapse_s:
        AbarL = Abar @ model.var_state.L
        var = var + np.einsum("nm,nm->n", AbarL, AbarL)
    return mu, np.maximum(var, VAR_FLOOR)


def qf_marginal(x, model: Model):
    """Scalar (mu, var) of q(f) at a single point."""
    mu, var = qf_marginals(np.atleast_2d(np.asarray(x, dtype=float).reshape(1, -1)), model)
    return float(mu[0]), float(var[0])


# ----------------------------------------------------------------------
# Bound terms
# ----------------------------------------------------------------------

def kl_qu_pu(model: Model) -> float:
    """KL( N(m, S) || N(1 u_bar, K_zz) ), via Cholesky log-determinants."""
    m = model.var_state.m
    L = model.var_state.L
    S = model.var_state.S
    M = m.size
    d = model.hyper.u_bar - m
    q = model.kzz_solve(d)
    logdet_s = 2.0 * float(np.sum(np.log(np.diag(L))))
    tr = float(np.sum(model.kzz_solve(S) * np.eye(M)))
    kl = 0.5 * (tr + model.kzz_logdet - logdet_s - M + float(d @ q))
    return kl


def expected_log_f_sq(mu_n: float, var_n: float) -> float:
    """E[log f^2] for f ~ N(mu_n, var_n), through the lookup table."""
    var_n = max(float(var_n), VAR_FLOOR)
    val, _ = specfun.g_tilde(-mu_n**2 / (2.0 * var_n))
    return -val + np.log(var_n / 2.0) - specfun.EULER_MASCHERONI


def integral_terms(model: Model):
    """(int E[f]^2 dx, int Var[f] dx) over the domain, closed form via Psi."""
    m = model.var_state.m
    S = model.var_state.S
    psi = model.psi
    c = model.kzz_solve(m)
    kinv_psi = model.kzz_solve(psi)
    int_mean_sq = float(c @ psi @ c)
    int_var = (model.hyper.gamma * domain_measure(model.domain)
               - float(np.trace(kinv_psi))
               + float(np.sum(model.kzz_solve(S) * kinv_psi.T)))
    return int_mean_sq, int_var


def elbo(model: Model, events: EventSet) -> float:
    """The variational lower bound on log p(D | Theta)."""
    return _bound_value(model, events, include_kl=True)


def _bound_value(model: Model, events: EventSet, include_kl: bool,
                 collapse_s: bool = False) -> float:
    int_mean_sq, int_var = integral_terms(model) if not collapse_s \
        else _integral_terms_collapsed(model)
    total = -(int_mean_sq + int_var)
    if events.n:
        mu, var = qf_marginals(events.points, model, collapse_s=collapse_s)
        gval, _ = specfun.g_tilde_batch(-mu**2 / (2.0 * var))
        total += float(np.sum(-gval + np.log(var / 2.0) - specfun.EULER_MASCHERONI))
    if include_kl:
        total -= kl_qu_pu(model)
    return total


def _integral_terms_collapsed(model: Model):
    # S -> 0: the trace(K^-1 S K^-1 Psi) term vanishes.
    m = model.var_state.m
    psi = model.psi
    c = model.kzz_solve(m)
    int_mean_sq = float(c @ psi @ c)
    int_var = (model.hyper.gamma * domain_measure(model.domain)
               - float(np.trace(model.kzz_solve(psi))))
    return int_mean_sq, int_var


# ----------------------------------------------------------------------
# Analytic gradient
# ----------------------------------------------------------------------

def elbo_and_gradient(model: Model, events: EventSet, wrt=GRAD_BLOCKS):
    """Bound value and its analytic gradient for the selected blocks.

    ``wrt`` selects any subset of ("log_gamma", "log_alpha", "u_bar", "m",
    "L", "omega").  Positive parameters are differentiated in log space; the
    diagonal of L likewise.  The "L" block is returned as vech order (rows of
    the lower triangle).  "omega" requires the model's inducing points to
    carry angles and applies the chain rule through the sine map.

    Returns (value, dict of gradient blocks).
    """
    wrt = tuple(wrt)
    unknown = set(wrt) - set(GRAD_BLOCKS)
    if unknown:
        raise ValueError(f"unknown gradient blocks: {sorted(unknown)}")
    if wrt == GRAD_BLOCKS and model.inducing.omega is None:
        wrt = wrt[:-1]   # the default selection means "everything applicable"

    h = model.hyper
    dmn = model.domain
    Z = model.inducing.Z
    M, R = Z.shape
    m = model.var_state.m
    Lc = model.var_state.L
    S = Lc @ Lc.T
    gamma = h.gamma
    measure = domain_measure(dmn)

    need_hyper = bool({"log_gamma", "log_alpha", "omega"} & set(wrt))

    eye = np.eye(M)
    Kinv = model.kzz_solve(eye)
    K = gram(Z, Z, h)
    K[np.diag_indices_from(K)] += JITTER_SCALE * gamma
    if need_hyper and ("log_alpha" in wrt or "omega" in wrt):
        psi, dpsi_dlog_alpha, dpsi_dzi = psi_with_partials(Z, h, dmn)
    else:
        psi = model.psi
        dpsi_dlog_alpha = dpsi_dzi = None

    c = Kinv @ m
    kinv_psi = Kinv @ psi
    B = kinv_psi @ Kinv
    W = Kinv @ S @ Kinv
    v = kinv_psi @ c

    int_mean_sq = float(c @ psi @ c)
    int_var = gamma * measure - float(np.trace(kinv_psi)) + float(np.sum(W * psi))

    d = h.u_bar - m
    q = Kinv @ d
    logdet_s = 2.0 * float(np.sum(np.log(np.diag(Lc))))
    kl = 0.5 * (float(np.sum(Kinv * S)) + model.kzz_logdet - logdet_s - M + float(d @ q))

    N = events.n
    if N:
        X = events.points
        A = gram(X, Z, h)                    # N x M
        Abar = A @ Kinv
        mu = Abar @ m
        var_raw = gamma - np.einsum("nm,nm->n", Abar, A) \
            + np.einsum("nm,nm->n", Abar @ S, Abar)
        clamped = var_raw < VAR_FLOOR
        var = np.maximum(var_raw, VAR_FLOOR)
        zeta = -mu**2 / (2.0 * var)
        gval, gslope = specfun.g_tilde_batch(zeta)
        data_term = float(np.sum(-gval + np.log(var / 2.0) - specfun.EULER_MASCHERONI))
        e_mu = gslope * mu / var
        e_s = 1.0 / var - gslope * mu**2 / (2.0 * var**2)
        e_s = np.where(clamped, 0.0, e_s)    # floored variance is locally constant
    else:
        data_term = 0.0

    value = -(int_mean_sq + int_var) + data_term - kl

    grads: dict[str, np.ndarray | float] = {}

    if "m" in wrt:
        g_m = -2.0 * (B @ m) + q
        if N:
            g_m = g_m + Abar.T @ e_mu
        grads["m"] = g_m

    if "L" in wrt:
        try:
            Linv = solve_triangular(Lc, eye, lower=True)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"triangular solve with L failed: {exc}") from exc
        Sinv = Linv.T @ Linv
        Gs = -B - 0.5 * Kinv + 0.5 * Sinv
        if N:
            Gs = Gs + Abar.T @ (e_s[:, None] * Abar)
        gl = (Gs + Gs.T) @ Lc
        gl[np.diag_indices_from(gl)] *= np.diag(Lc)   # log-diagonal parameterisation
        grads["L"] = gl[np.tril_indices(M)]

    if "u_bar" in wrt:
        grads["u_bar"] = -float(np.sum(q))

    if need_hyper:
        # Raw partials of the bound w.r.t. the kernel structures.
        g_psi = -np.outer(c, c) + Kinv - W
        M1 = W @ psi @ Kinv
        Gk = (np.outer(v, c) + np.outer(c, v)) - B + (M1 + M1.T) \
            - 0.5 * (Kinv - W - np.outer(q, q))
        g_gamma_direct = -measure
        if N:
            Amu = Abar.T @ e_mu                    # sum_n e_mu_n a_n
            AsA = Abar.T @ (e_s[:, None] * Abar)
            What = A @ W                            # rows w_n^T
            AsW = Abar.T @ (e_s[:, None] * What)
            Gk = Gk - np.outer(Amu, c) + AsA - AsW - AsW.T
            GA = np.outer(e_mu, c) + e_s[:, None] * (-2.0 * Abar + 2.0 * What)
            g_gamma_direct += float(np.sum(e_s))
        else:
            GA = None

        if "log_gamma" in wrt:
            g = float(np.sum(Gk * K)) + 2.0 * float(np.sum(g_psi * psi)) \
                + g_gamma_direct * gamma
            if GA is not None:
                g += float(np.sum(GA * A))
            grads["log_gamma"] = g

        if "log_alpha" in wrt:
            sq_zz = sq_dists_per_dim(Z, Z)
            if N:
                sq_xz = sq_dists_per_dim(X, Z)
            ga = np.empty(R)
            for r in range(R):
                g = float(np.sum(Gk * (K * sq_zz[r] / (2.0 * h.alpha[r])))) \
                    + float(np.sum(g_psi * dpsi_dlog_alpha[r]))
                if GA is not None:
                    g += float(np.sum(GA * (A * sq_xz[r] / (2.0 * h.alpha[r]))))
                ga[r] = g
            grads["log_alpha"] = ga

        if "omega" in wrt:
            if model.inducing.omega is None:
                raise ValueError("omega gradient requested but inducing points carry no angles")
            gz = np.empty((M, R))
            Gk_sym = Gk + Gk.T
            g_psi_sym = g_psi + g_psi.T
            for r in range(R):
                delta = Z[:, r][:, None] - Z[:, r][None, :]
                gz[:, r] = np.sum(Gk_sym * K * (-delta / h.alpha[r]), axis=1)
                gz[:, r] += np.sum(g_psi_sym * dpsi_dzi[r], axis=1)
                if GA is not None:
                    gz[:, r] += np.sum(GA * A * (X[:, r][:, None] - Z[:, r][None, :])
                                       / h.alpha[r], axis=0)
            dz_domega = 0.5 * dmn.extent[None, :] * np.cos(model.inducing.omega)
            grads["omega"] = gz * dz_domega

    return value, grads


def elbo_gradient(model: Model, events: EventSet, wrt=GRAD_BLOCKS) -> np.ndarray:
    """Flat analytic gradient of the bound, blocks concatenated in the
    canonical order log_gamma, log_alpha, u_bar, m, vech(L), omega (restricted
    to the selection)."""
    _, grads = elbo_and_gradient(model, events, wrt=wrt)
    parts = []
    for name in GRAD_BLOCKS:
        if name in grads:
            parts.append(np.atleast_1d(np.asarray(grads[name], dtype=float)).reshape(-1))
    return np.concatenate(parts) if parts else np.empty(0)


# ----------------------------------------------------------------------
# Serialization
# ----------------------------------------------------------------------

def model_to_dict(model: Model) -> dict:
    M = model.num_inducing
    doc = {
        "domain": {"lo": model.domain.lo.tolist(), "hi": model.domain.hi.tolist()},
        "hyper": {
            "gamma": model.hyper.gamma,
            "alpha": model.hyper.alpha.tolist(),
            "u_bar": model.hyper.u_bar,
        },
        "Z": model.inducing.Z.tolist(),
        "m": model.var_state.m.tolist(),
        "L": model.var_state.L[np.tril_indices(M)].tolist(),
        "fit_metadata": model.fit_metadata,
    }
    if model.inducing.omega is not None:
        doc["omega"] = model.inducing.omega.tolist()
    return doc


def model_from_dict(doc: dict) -> Model:
    domain = Domain(lo=np.asarray(doc["domain"]["lo"]), hi=np.asarray(doc["domain"]["hi"]))
    hyper = HyperParams(gamma=doc["hyper"]["gamma"],
                        alpha=np.asarray(doc["hyper"]["alpha"]),
                        u_bar=doc["hyper"]["u_bar"])
    Z = np.asarray(doc["Z"], dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    omega = np.asarray(doc["omega"], dtype=float) if "omega" in doc else None
    M = Z.shape[0]
    L = np.zeros((M, M))
    L[np.tril_indices(M)] = np.asarray(doc["L"], dtype=float)
    return Model(
        hyper=hyper,
        inducing=InducingPoints(Z=Z, omega=omega),
        var_state=VariationalState(m=np.asarray(doc["m"], dtype=float), L=L),
        domain=domain,
        fit_metadata=doc.get("fit_metadata"),
    )


def save_model(model: Model, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path) -> Model:
    with open(path, "r", encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
