"""Structured generators for contractive linear latent dynamics.

A latent state g evolves as g(t) = exp(t*A) g(0). Both parameterizations
below pin the symmetric part of A to be negative semi-definite for every
parameter value, which makes exp(t*A) non-expansive in the Euclidean norm
for all t >= 0: the skew part only rotates energy while the symmetric part
dissipates it.

* BlockDiagGenerator: 2x2 blocks [[-gamma, -omega], [omega, -gamma]] with
  gamma = softplus(raw) >= 0; decay rate and frequency per latent mode, and
  a cheap closed-form exponential.
* DenseStableGenerator: A = S + W with S = -L L^T (L lower triangular) and
  W exactly skew-symmetric, both unconstrained in their raw parameters.

Also holds the time-feature forcing head for externally driven systems and
a least-squares estimator of A from latent snapshot pairs.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.linalg
import torch
from torch import nn
from torch.nn import functional as F

from .errors import ConfigError

_PADE13 = (
    64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
    1187353796428800.0, 129060195264000.0, 10559470521600.0,
    670442572800.0, 33522128640.0, 1323241920.0, 40840800.0,
    960960.0, 16380.0, 182.0, 1.0,
)
_THETA13 = 4.25  # 1-norm switch point for the degree-13 approximant


def softplus_inv(y):
    """Inverse of softplus on [0, inf); y = 0 maps to -inf exactly."""
    y = np.asarray(y, dtype=float)
    if np.any(y < 0):
        raise ConfigError("softplus_inv needs nonnegative inputs")
    with np.errstate(divide="ignore"):
        return np.log(np.expm1(y))


def expm(A: torch.Tensor) -> torch.Tensor:
    """Matrix exponential by scaling-and-squaring with the degree-13 Pade
    approximant; differentiable."""
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expm expects a square matrix, got {tuple(A.shape)}")
    norm = torch.linalg.matrix_norm(A, ord=1)
    s = max(0, int(torch.ceil(torch.log2(norm / _THETA13)).item()) if norm > _THETA13 else 0)
    As = A / (2.0 ** s)
    eye = torch.eye(A.shape[0], dtype=A.dtype, device=A.device)
    A2 = As @ As
    A4 = A2 @ A2
    A6 = A4 @ A2
    b = _PADE13
    U = As @ (A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2)
              + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * eye)
    V = A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2) \
        + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * eye
    R = torch.linalg.solve(V - U, V + U)
    for _ in range(s):
        R = R @ R
    return R


class BlockDiagGenerator(nn.Module):
    """Block-diagonal generator: per-mode decay gamma_i and frequency omega_i."""

    def __init__(self, d: int, gamma=None, omega=None):
        super().__init__()
        if d % 2 != 0 or d < 2:
            raise ConfigError(f"block-diagonal form needs an even d >= 2, got {d}")
        self.d = d
        n = d // 2
        if gamma is None:
            gamma = np.full(n, 0.1)
        raw = softplus_inv(gamma)
        if omega is None:
            omega = np.zeros(n)
        omega = np.broadcast_to(np.asarray(omega, dtype=float), (n,))
        self.raw_gamma = nn.Parameter(torch.as_tensor(raw, dtype=torch.float64))
        self.omega = nn.Parameter(torch.as_tensor(omega.copy(), dtype=torch.float64))

    @classmethod
    def dissipative(cls, d: int):
        """Init for decaying dynamics: gamma = 0.1, omega spread over [0, pi]."""
        return cls(d, gamma=np.full(d // 2, 0.1), omega=np.linspace(0.0, np.pi, d // 2))

    @classmethod
    def conservative(cls, d: int):
        """Init for oscillatory dynamics: gamma near zero, omega over [0, 4*pi]."""
        return cls(d, gamma=np.full(d // 2, 1e-3),
                   omega=np.linspace(0.0, 4.0 * np.pi, d // 2))

    @property
    def gamma(self) -> torch.Tensor:
        return F.softplus(self.raw_gamma)

    def matrix(self) -> torch.Tensor:
        g, w = self.gamma, self.omega
        A = torch.zeros(self.d, self.d, dtype=g.dtype)
        idx = torch.arange(0, self.d, 2)
        A[idx, idx] = -g
        A[idx + 1, idx + 1] = -g
        A[idx, idx + 1] = -w
        A[idx + 1, idx] = w
        return A

    def evolve(self, g0: torch.Tensor, tau) -> torch.Tensor:
        """Closed-form exp(tau*A) g0: per-block decay e^(-gamma tau) and
        rotation by omega*tau. g0 has shape (..., d); a vector tau of shape
        (T,) prepends a time axis to the result."""
        tau = torch.as_tensor(tau, dtype=g0.dtype)
        scalar_tau = tau.ndim == 0
        tau = tau.reshape(-1)
        tcol = tau.reshape(-1, *([1] * g0.ndim))  # broadcasts over (T, ..., d/2)
        pairs = g0.reshape(*g0.shape[:-1], self.d // 2, 2)
        decay = torch.exp(-self.gamma * tcol)
        ang = self.omega * tcol
        c, s = torch.cos(ang), torch.sin(ang)
        x, y = pairs[..., 0], pairs[..., 1]
        out = torch.stack([c * x - s * y, s * x + c * y], dim=-1)
        out = (decay.unsqueeze(-1) * out).reshape(tau.shape[0], *g0.shape)
        return out[0] if scalar_tau else out


class DenseStableGenerator(nn.Module):
    """Dense generator A = S + W, S = -L L^T <= 0, W skew-symmetric."""

    def __init__(self, d: int, tri=None, skew=None):
        super().__init__()
        self.d = d
        tri = np.zeros((d, d)) if tri is None else np.asarray(tri, dtype=float)
        skew = np.zeros((d, d)) if skew is None else np.asarray(skew, dtype=float)
        self.tri_raw = nn.Parameter(torch.as_tensor(tri, dtype=torch.float64))
        self.skew_raw = nn.Parameter(torch.as_tensor(skew, dtype=torch.float64))

    def matrix(self) -> torch.Tensor:
        L = torch.tril(self.tri_raw)
        S = -(L @ L.T)
        W = 0.5 * (self.skew_raw - self.skew_raw.T)
        return S + W

    def evolve(self, g0: torch.Tensor, tau) -> torch.Tensor:
        tau = torch.as_tensor(tau, dtype=g0.dtype)
        A = self.matrix()
        if tau.ndim == 0:
            if float(tau) == 0.0:
                return g0.clone()
            return g0 @ expm(A * tau).T
        return torch.stack([g0 @ expm(A * t).T for t in tau])


class ForcingHead(nn.Module):
    """Maps driver-phase features [sin(2 pi f t), cos(2 pi f t)] to a latent
    contribution, through two hidden layers. The last layer starts at zero
    so the forced term is initially inactive."""

    def __init__(self, d: int, freq: float, hidden: int = 64):
        super().__init__()
        self.d = d
        self.freq = freq
        self.net = nn.Sequential(
            nn.Linear(2, hidden), nn.Tanh(),
            nn.Linear(hidden, hidden), nn.Tanh(),
            nn.Linear(hidden, d),
        )
        self.net = self.net.to(torch.float64)
        nn.init.zeros_(self.net[-1].weight)
        nn.init.zeros_(self.net[-1].bias)

    def features(self, t) -> torch.Tensor:
        t = torch.as_tensor(t, dtype=self.net[-1].weight.dtype)
        ang = 2.0 * math.pi * self.freq * t
        return torch.stack([torch.sin(ang), torch.cos(ang)], dim=-1)

    def forward(self, t) -> torch.Tensor:
        return self.net(self.features(t))


# ---------------------------------------------------------------------------
# Module-level operations (numpy in, numpy out; no gradients)
# ---------------------------------------------------------------------------

def _to_tensor(g0) -> torch.Tensor:
    g = torch.as_tensor(np.asarray(g0, dtype=float))
    if not torch.isfinite(g).all():
        raise ValueError("latent state contains non-finite entries")
    return g


def _check_tau(tau):
    if tau < 0:
        raise ValueError(
            f"tau must be >= 0 (the contraction guarantee only holds forward "
            f"in time), got {tau}")


def assemble(gen) -> np.ndarray:
    """Generator matrix A as a numpy array."""
    with torch.no_grad():
        return gen.matrix().numpy()


def evolve(gen, g0, tau: float) -> np.ndarray:
    """g(tau) = exp(tau*A) g0."""
    _check_tau(tau)
    with torch.no_grad():
        return gen.evolve(_to_tensor(g0), float(tau)).numpy()


def evolve_recursive(gen, g0, dt: float, n_steps: int) -> np.ndarray:
    """Repeated exp(dt*A) stepping; returns the n_steps intermediate states."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    g = _to_tensor(g0)
    out = []
    with torch.no_grad():
        for _ in range(n_steps):
            g = gen.evolve(g, float(dt))
            out.append(g.numpy().copy())
    return np.stack(out)


def forced_evolve(gen, head: ForcingHead, g0, t0: float, t: float) -> np.ndarray:
    """Natural evolution from t0 plus the forced response at the target time."""
    _check_tau(t - t0)
    with torch.no_grad():
        nat = gen.evolve(_to_tensor(g0), float(t - t0))
        return (nat + head(float(t))).numpy()


def spectral_norm_expm(gen, t: float) -> float:
    """||exp(t*A)||_2 via singular values (scipy exponential, so this check
    is independent of the in-graph Pade path)."""
    _check_tau(t)
    E = scipy.linalg.expm(assemble(gen) * t)
    return float(np.linalg.svd(E, compute_uv=False)[0])


def spectrum(gen) -> np.ndarray:
    """Eigenvalues of A; exact -gamma_i +/- i*omega_i for the block form."""
    if isinstance(gen, BlockDiagGenerator):
        with torch.no_grad():
            g = gen.gamma.numpy()
            w = gen.omega.numpy()
        lam = np.empty(gen.d, dtype=complex)
        lam[0::2] = -g + 1j * w
        lam[1::2] = -g - 1j * w
        return lam
    return np.linalg.eigvals(assemble(gen))


def edmd_fit(pairs, dt: float, ridge: float = 0.0, mode: str = "logm") -> np.ndarray:
    """Least-squares estimate of the generator from latent snapshot pairs.

    pairs is either a sequence of (g_k, g_{k+1}) vectors or a 2-tuple of
    [M, d] arrays. First fits the one-step map K ~ exp(dt*A) by (ridge)
    least squares; mode "logm" then takes the principal matrix logarithm,
    while mode "smalldt" uses the first-order surrogate (K - I)/dt.
    """
    if ridge < 0:
        raise ValueError(f"ridge must be >= 0, got {ridge}")
    if mode not in ("logm", "smalldt"):
        raise ValueError(f"mode must be 'logm' or 'smalldt', got {mode!r}")
    if isinstance(pairs, tuple) and len(pairs) == 2 and np.ndim(pairs[0]) == 2:
        G, Gp = (np.asarray(p, dtype=float) for p in pairs)
    else:
        G = np.asarray([p[0] for p in pairs], dtype=float)
        Gp = np.asarray([p[1] for p in pairs], dtype=float)
    X, Y = G.T, Gp.T  # d x M
    d, M = X.shape
    if ridge == 0.0:
        if M < d or np.linalg.matrix_rank(X) < d:
            raise ValueError(
                "snapshot matrix is rank-deficient; pass ridge > 0 to regularize")
    # K = Y X^T (X X^T + ridge I)^(-1), via a symmetric solve
    gram = X @ X.T + ridge * np.eye(d)
    K = np.linalg.solve(gram, X @ Y.T).T
    if mode == "smalldt":
        return (K - np.eye(d)) / dt
    logK = scipy.linalg.logm(K)
    if np.max(np.abs(logK.imag)) > 1e-8 * max(1.0, np.max(np.abs(logK.real))):
        raise ValueError(
            "principal logarithm of the fitted one-step map is not real; "
            "the data may be inconsistent with a real generator at this dt")
    return logK.real / dt
