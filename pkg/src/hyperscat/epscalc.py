"""eps-derivative trace calculus on finite Hermitian families.

Implements the order-q Taylor-remainder combinators [T]_q and {T}_q through
two independent routes (one-sided stencils at eps = 0 and Gauss-Legendre
quadrature of the integral form), plus the exact operator identities used to
move spectral cutoffs around: Birman-Solomyak, Duhamel, the trace shift
trick, the Egorov remainder formula, the intertwining formula, and the k = 1
Leibniz decomposition of d/deps of f(H_eps) U_eps(t).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import numerics as nm
from .errors import DifferentiationFailure, InvalidArgument
from .functions import SmoothFunction

Array = np.ndarray


# ---------------------------------------------------------------------------
# bracket combinators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QBracketConfig:
    """Order and numerical knobs of the bracket combinators."""
    q: int
    fd_step: float = 0.02
    quad_nodes: int = 32
    stencil_accuracy: int = 6
    cheb_degree: int = 48
    route_tol: Optional[float] = 1e-6

    def __post_init__(self):
        if self.q < 1:
            raise InvalidArgument("bracket order q must be >= 1")
        if self.fd_step <= 0:
            raise InvalidArgument("fd_step must be positive")


@dataclass(frozen=True)
class BracketResult:
    """Both evaluation routes of a bracket/brace combinator and their gap."""
    stencil: Array
    quadrature: Array
    discrepancy: float
    form: str
    q: int

    @property
    def value(self):
        return self.stencil


def _stencil_derivatives(family, orders, cfg: QBracketConfig, derivative=None):
    """eps-derivatives at 0 for the requested orders, one-sided FD unless exact."""
    out = {}
    for j in orders:
        if j == 0:
            out[0] = np.asarray(family(0.0))
        elif derivative is not None:
            out[j] = np.asarray(derivative(0.0, j))
        else:
            out[j] = np.asarray(
                nm.one_sided_derivative(family, j, cfg.fd_step, cfg.stencil_accuracy))
    return out


def eps_bracket(family: Callable, cfg: QBracketConfig, form: str = "bracket",
                derivative: Optional[Callable] = None) -> BracketResult:
    """[T]_q (form='bracket') or {T}_q (form='brace') of a C^q family on [0, 1].

    family maps eps to a scalar or ndarray.  The bracket is evaluated twice:

    * stencil route: T(1) - sum_{j<q} (1/j!) d^j T(0), one-sided differences
      with step cfg.fd_step (exact derivative callable wins if provided);
    * quadrature route: (1/(q-1)!) int_0^1 (1-eps)^{q-1} d^q T(eps) deps, with
      node derivatives from `derivative` or a global Chebyshev interpolant.

    The brace replaces d^q by d^{q-1} in the integral; its second route feeds
    the eps-antiderivative of the family back through the bracket stencil,
    using the primitive identity [antiderivative]_q = {T}_q.
    """
    if form not in ("bracket", "brace"):
        raise InvalidArgument(f"unknown combinator form {form!r}")
    q = cfg.q
    cheb = None
    if derivative is None:
        cheb = nm.ChebFamily(family, cfg.cheb_degree)
        derivative_q = lambda e, j: cheb.derivative(e, j)
    else:
        derivative_q = derivative

    nodes, weights = nm.gauss_legendre(0.0, 1.0, cfg.quad_nodes)
    fact = float(np.prod(np.arange(1, q))) if q > 1 else 1.0

    def _taylor_tail(fam_fn, ders):
        val = np.asarray(fam_fn(1.0)) + 0.0
        for j in range(q):
            val = val - ders[j] / (float(np.prod(np.arange(1, j + 1))) if j else 1.0)
        return val

    if form == "bracket":
        ders = _stencil_derivatives(family, range(q), cfg, derivative)
        stencil = _taylor_tail(family, ders)
        quad = None
        for e, w in zip(nodes, weights):
            term = w * (1.0 - e) ** (q - 1) * np.asarray(derivative_q(e, q))
            quad = term if quad is None else quad + term
        quad = quad / fact
    else:
        quad = None
        for e, w in zip(nodes, weights):
            term = w * (1.0 - e) ** (q - 1) * np.asarray(derivative_q(e, q - 1))
            quad = term if quad is None else quad + term
        quad = quad / fact
        # primitive route: bracket stencil applied to the eps-antiderivative
        if cheb is None:
            cheb = nm.ChebFamily(family, cfg.cheb_degree)
        anti = cheb.antiderivative_family()
        stencil = _taylor_tail(anti, _stencil_derivatives(anti, range(q), cfg, None))

    disc = nm.relative_gap(stencil, quad)
    if cfg.route_tol is not None and disc > cfg.route_tol:
        raise DifferentiationFailure(
            f"{form} routes disagree: relative gap {disc:.3e} > {cfg.route_tol:.1e}")
    stencil = np.asarray(stencil)
    quad = np.asarray(quad)
    if stencil.ndim == 0:
        stencil, quad = stencil[()], quad[()]
    return BracketResult(stencil=stencil, quadrature=quad, discrepancy=disc,
                         form=form, q=q)


# ---------------------------------------------------------------------------
# operator families
# ---------------------------------------------------------------------------

def random_hermitian(rng, dim, scale=1.0):
    a = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return scale * 0.5 * (a + a.conj().T)


@dataclass
class OperatorFamily:
    """eps -> H_eps = H0 + eps V on C^dim, with semiclassical scale h.

    A nonlinear family can be supplied through `family`; it must agree with H0
    at eps = 0.  Spectral data are cached per eps.
    """
    h0: Array
    v: Array
    h: float = 1.0
    family: Optional[Callable] = None

    def __post_init__(self):
        self.h0 = np.asarray(self.h0, dtype=complex)
        self.v = np.asarray(self.v, dtype=complex)
        herm = max(np.max(np.abs(self.h0 - self.h0.conj().T)),
                   np.max(np.abs(self.v - self.v.conj().T)))
        if herm > 1e-12 * (1.0 + np.max(np.abs(self.h0))):
            raise InvalidArgument("H0 and V must be Hermitian")
        if not 0.0 < self.h <= 1.0:
            raise InvalidArgument("semiclassical scale h must lie in (0, 1]")
        if self.family is not None:
            gap = np.max(np.abs(np.asarray(self.family(0.0)) - self.h0))
            if gap > 1e-10 * (1.0 + np.max(np.abs(self.h0))):
                raise InvalidArgument("nonlinear family must return H0 at eps = 0")
        self._eig_cache = {}

    @property
    def dim(self):
        return self.h0.shape[0]

    def at(self, eps):
        if self.family is not None:
            return np.asarray(self.family(float(eps)), dtype=complex)
        return self.h0 + eps * self.v

    def eigh(self, eps):
        key = float(eps)
        if key not in self._eig_cache:
            self._eig_cache[key] = np.linalg.eigh(self.at(eps))
        return self._eig_cache[key]

    def apply_function(self, eps, fn: Callable):
        lam, vec = self.eigh(eps)
        return (vec * fn(lam)) @ vec.conj().T

    def propagator(self, eps, t):
        """U_eps(t) = exp(-i t H_eps / h)."""
        lam, vec = self.eigh(eps)
        return (vec * np.exp(-1j * t * lam / self.h)) @ vec.conj().T

    def trace_function(self, eps, fn: Callable):
        lam, _ = self.eigh(eps)
        return float(np.sum(fn(lam)).real)

    def derivative_function(self, eps, f: SmoothFunction):
        """Exact d/deps f(H_eps) for the affine family (Daleckii-Krein).

        Divided differences with eigenvalue clusters within 1e-10 (relative)
        merged and replaced by the limiting derivative value.
        """
        if self.family is not None:
            raise InvalidArgument("exact derivative available for affine families only")
        lam, vec = self.eigh(eps)
        scale = 1.0 + float(np.max(np.abs(lam)))
        dl = lam[:, None] - lam[None, :]
        fl = f(lam)
        num = fl[:, None] - fl[None, :]
        close = np.abs(dl) < 1e-10 * scale
        dd = np.where(close, 1.0, dl)
        loewner = np.where(close,
                           f.deriv(1)(0.5 * (lam[:, None] + lam[None, :])),
                           num / dd)
        vmat = vec.conj().T @ self.v @ vec
        return vec @ (loewner * vmat) @ vec.conj().T


# ---------------------------------------------------------------------------
# identity residuals
# ---------------------------------------------------------------------------

def birman_solomyak_residual(fam: OperatorFamily, f: SmoothFunction,
                             nodes: int = 64) -> float:
    """| tr(f(H1) - f(H0)) - int_0^1 tr(f'(H_s) V) ds | (exact identity)."""
    lhs = fam.trace_function(1.0, f.fn) - fam.trace_function(0.0, f.fn)
    s_nodes, s_w = nm.gauss_legendre(0.0, 1.0, nodes)
    fprime = f.deriv(1)
    rhs = 0.0
    for s, w in zip(s_nodes, s_w):
        lam, vec = fam.eigh(s)
        vdiag = np.real(np.einsum("ij,jk,ki->i", vec.conj().T, fam.v, vec))
        rhs += w * float(np.sum(fprime(lam) * vdiag))
    return abs(lhs - rhs)


def _matrix_eps_derivative(fun, eps, step=5e-3, accuracy=4):
    """4th-order FD in eps of a matrix-valued map, one-sided near 0 and 1."""
    half = (accuracy + 1) // 2
    if eps - half * step < 0.0:
        nodes = eps + step * np.arange(accuracy + 2)
    elif eps + half * step > 1.0:
        nodes = eps - step * np.arange(accuracy + 2)[::-1]
    else:
        nodes = eps + step * np.arange(-half, half + 1)
    w = nm.fd_weights(eps, nodes, 1)
    acc = None
    for wi, xi in zip(w, nodes):
        val = wi * fun(float(xi))
        acc = val if acc is None else acc + val
    return acc


def duhamel_residual(fam: OperatorFamily, t: float, eps: float = 0.0,
                     fd_step: float = 5e-3, nodes: int = 64) -> float:
    """Operator-norm residual of the propagator derivative formula.

    d/deps U_eps(t) = -(i/h) int_0^t U_eps(t-s) V U_eps(s) ds; the derivative
    side is a 4th-order finite difference in eps.
    """
    if not np.isfinite(t):
        raise InvalidArgument("finite time required")
    dU = _matrix_eps_derivative(lambda e: fam.propagator(e, t), eps, fd_step)
    s_nodes, s_w = nm.gauss_legendre(0.0, t, nodes)
    acc = np.zeros_like(dU)
    for s, w in zip(s_nodes, s_w):
        acc = acc + w * fam.propagator(eps, t - s) @ fam.v @ fam.propagator(eps, s)
    rhs = (-1j / fam.h) * acc
    return float(np.linalg.norm(dU - rhs, 2))


def _egorov_conjugation(fam: OperatorFamily, eps, K):
    def K_s(s):
        U = fam.propagator(eps, s)
        return U @ K @ U.conj().T

    def dK_s(s):
        U = fam.propagator(eps, s)
        H = fam.at(eps)
        comm = H @ K - K @ H
        return (-1j / fam.h) * (U @ comm @ U.conj().T)

    return K_s, dK_s


@dataclass(frozen=True)
class IdentityReport:
    """Residuals of the exact operator identities (all should be ~0)."""
    shift_trick: float
    egorov: float
    intertwine_operator: float
    intertwine_trace: float
    leibniz_k1: float

    def as_dict(self):
        return {
            "shift_trick": self.shift_trick,
            "egorov": self.egorov,
            "intertwine_operator": self.intertwine_operator,
            "intertwine_trace": self.intertwine_trace,
            "leibniz_k1": self.leibniz_k1,
        }

    def max_residual(self):
        return max(self.as_dict().values())


def shift_trick_residual(fam: OperatorFamily, f: SmoothFunction, t, t0,
                         K, eps=0.0) -> float:
    """tr(U f(H) K) = tr(U f(H) U(t0) K U(-t0)) by centrality of the trace."""
    U = fam.propagator(eps, t)
    fH = fam.apply_function(eps, f.fn)
    Ut0 = fam.propagator(eps, t0)
    lhs = np.trace(U @ fH @ K)
    rhs = np.trace(U @ fH @ Ut0 @ K @ Ut0.conj().T)
    return abs(lhs - rhs)


def egorov_residual(fam: OperatorFamily, f: SmoothFunction, t, t0, K,
                    K_s=None, dK_s=None, eps=0.0, nodes: int = 64) -> float:
    """Residual of the exact evolution formula for a C^1 family K^s, K^0 = K.

    tr(U f K) = tr(U f K^{t0}) + tr(U f (i/h) int_0^{t0} (ih dK^s/ds - [H, K^s]) ds).
    """
    if K_s is None:
        K_s, dK_s = _egorov_conjugation(fam, eps, K)
    U = fam.propagator(eps, t)
    fH = fam.apply_function(eps, f.fn)
    H = fam.at(eps)
    s_nodes, s_w = nm.gauss_legendre(0.0, t0, nodes)
    acc = np.zeros_like(np.asarray(K, dtype=complex))
    for s, w in zip(s_nodes, s_w):
        Ks = K_s(s)
        integrand = 1j * fam.h * dK_s(s) - (H @ Ks - Ks @ H)
        acc = acc + w * integrand
    lhs = np.trace(U @ fH @ K)
    rhs = np.trace(U @ fH @ K_s(t0)) + np.trace(U @ fH @ ((1j / fam.h) * acc))
    return abs(lhs - rhs)


def intertwine_residuals(fam: OperatorFamily, f: SmoothFunction, t, A, B, P,
                         eps=0.0, nodes: int = 64):
    """Residuals of the intertwining formula, operator and trace versions.

    U_eps(t) A - A U(t) = (1/(ih)) int_0^t U_eps(t-s) (H_eps A - A P) U(s) ds,
    with U(t) = exp(-i t P / h) the comparison dynamics.
    """
    lamP, vecP = np.linalg.eigh(np.asarray(P, dtype=complex))

    def free_U(s):
        return (vecP * np.exp(-1j * s * lamP / fam.h)) @ vecP.conj().T

    H = fam.at(eps)
    defect = H @ A - A @ P
    s_nodes, s_w = nm.gauss_legendre(0.0, t, nodes)
    acc = np.zeros_like(np.asarray(A, dtype=complex))
    fH = fam.apply_function(eps, f.fn)
    acc_tr = 0.0 + 0.0j
    for s, w in zip(s_nodes, s_w):
        Ue = fam.propagator(eps, t - s)
        term = Ue @ defect @ free_U(s)
        acc = acc + w * term
        acc_tr = acc_tr + w * np.trace(fH @ term @ B.conj().T)
    op_res = float(np.linalg.norm(
        fam.propagator(eps, t) @ A - A @ free_U(t) - acc / (1j * fam.h), 2))
    K = A @ B.conj().T
    lhs = np.trace(fam.propagator(eps, t) @ fH @ K)
    rhs = np.trace(fH @ A @ free_U(t) @ B.conj().T) + acc_tr / (1j * fam.h)
    return op_res, abs(lhs - rhs)


def leibniz_k1_residual(fam: OperatorFamily, f: SmoothFunction,
                        f_tilde: SmoothFunction, t, eps=0.0,
                        fd_step: float = 5e-3, nodes: int = 64) -> float:
    """k = 1 Leibniz decomposition of d/deps (f(H_eps) U_eps(t)).

    Requires f_tilde * f = f as functions (f_tilde = 1 on supp f); the three
    terms are (d_eps f(H)) U^{f~}(t), -(i/h) int U^f(t-s) V U^{f~}(s) ds and
    U^f(t) d_eps f~(H).
    """

    def UF(e):
        return fam.apply_function(e, f.fn) @ fam.propagator(e, t)

    dUF = _matrix_eps_derivative(UF, eps, fd_step)
    dSf = fam.derivative_function(eps, f)
    dSft = fam.derivative_function(eps, f_tilde)
    fH = fam.apply_function(eps, f.fn)
    ftH = fam.apply_function(eps, f_tilde.fn)
    s_nodes, s_w = nm.gauss_legendre(0.0, t, nodes)
    acc = np.zeros_like(dUF)
    for s, w in zip(s_nodes, s_w):
        acc = acc + w * (fH @ fam.propagator(eps, t - s) @ fam.v
                         @ ftH @ fam.propagator(eps, s))
    decomposition = (dSf @ ftH @ fam.propagator(eps, t)
                     - (1j / fam.h) * acc
                     + fH @ fam.propagator(eps, t) @ dSft)
    return float(np.linalg.norm(dUF - decomposition, 2))


def identity_residuals(fam: OperatorFamily, f: SmoothFunction,
                       f_tilde: SmoothFunction, t: float, t0: float, K: Array,
                       K_s=None, dK_s=None, A=None, B=None, P=None,
                       eps: float = 0.0, nodes: int = 64) -> IdentityReport:
    """Evaluate all displayed operator identities at matrix level."""
    dim = fam.dim
    A = np.eye(dim, dtype=complex) if A is None else np.asarray(A, dtype=complex)
    B = np.eye(dim, dtype=complex) if B is None else np.asarray(B, dtype=complex)
    P = fam.at(eps) if P is None else np.asarray(P, dtype=complex)
    op_res, tr_res = intertwine_residuals(fam, f, t, A, B, P, eps=eps, nodes=nodes)
    return IdentityReport(
        shift_trick=shift_trick_residual(fam, f, t, t0, K, eps=eps),
        egorov=egorov_residual(fam, f, t, t0, K, K_s=K_s, dK_s=dK_s,
                               eps=eps, nodes=nodes),
        intertwine_operator=op_res,
        intertwine_trace=tr_res,
        leibniz_k1=leibniz_k1_residual(fam, f, f_tilde, t, eps=eps, nodes=nodes),
    )


# ---------------------------------------------------------------------------
# simplex convolution bound
# ---------------------------------------------------------------------------

def convolution_bound(psis, t_max, n_grid=2048):
    """L^1 comparison of simplex integrals against iterated convolutions.

    Returns (lhs, rhs) with lhs = int |int_{F_t} psi_0(t_0)...psi_j(t_j)| dt and
    rhs = int (|psi_0| * ... * |psi_j|)(t) dt, sampled on [0, t_max]; the bound
    lhs <= rhs holds for all integrable psi_j.
    """
    ts = np.linspace(0.0, t_max, n_grid)
    dt = ts[1] - ts[0]
    vals = [np.asarray(p(ts), dtype=float) for p in psis]
    signed = vals[0]
    absed = np.abs(vals[0])
    for v in vals[1:]:
        signed = np.convolve(signed, v)[: len(ts)] * dt
        absed = np.convolve(absed, np.abs(v))[: len(ts)] * dt
    lhs = float(np.sum(np.abs(signed)) * dt)
    rhs = float(np.sum(absed) * dt)
    return lhs, rhs
