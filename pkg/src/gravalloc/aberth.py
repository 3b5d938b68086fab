"""Simultaneous polynomial root finding (Aberth-Ehrlich iteration).

Coefficients arrive in split form c_k = u_k * exp(g_k) with complex
mantissas u_k and a real log-scale g_k, so that degrees in the thousands
(where the raw coefficients overflow doubles) remain representable. Two
evaluation strategies for the Newton correction p/p':

* direct: materialize the coefficients and run Horner, switching to the
  reversed polynomial for |z| > 1 so no power of z overflows;
* log: per-term magnitudes are combined in the log domain and rescaled by
  the running maximum, used when the coefficients themselves do not fit.

Solves batches of same-degree polynomials at once; the iteration for each
polynomial is independent of the rest of the batch.
"""

from __future__ import annotations

import numpy as np

from .errors import RootFindingFailed

_DIRECT_LOG_LIMIT = 200.0 * np.log(10.0)  # still far from double overflow
_TINY = 1e-300


def _correction_direct(coeffs: np.ndarray, bidx: np.ndarray, z: np.ndarray) -> np.ndarray:
    """p(z)/p'(z) by Horner; coefficient row bidx[i] applies to root z[i]."""
    n = coeffs.shape[1] - 1
    out = np.empty_like(z)
    small = np.abs(z) <= 1.0

    if small.any():
        zz = z[small]
        rows = bidx[small]
        p = coeffs[rows, n].copy()
        dp = np.zeros_like(p)
        for j in range(n - 1, -1, -1):
            dp *= zz
            dp += p
            p *= zz
            p += coeffs[rows, j]
        dp = np.where(np.abs(dp) < _TINY, _TINY, dp)
        out[small] = p / dp

    big = ~small
    if big.any():
        zz = z[big]
        rows = bidx[big]
        w = 1.0 / zz
        # p(z) = z^n r(w) with r the reversed polynomial; then
        # p/p' = z^2 r(w) / (n z r(w) - r'(w)).
        r = coeffs[rows, 0].copy()
        dr = np.zeros_like(r)
        for j in range(1, n + 1):
            dr *= w
            dr += r
            r *= w
            r += coeffs[rows, j]
        den = n * zz * r - dr
        den = np.where(np.abs(den) < _TINY, _TINY, den)
        out[big] = zz * zz * r / den
    return out


def _correction_log(
    mantissa: np.ndarray,
    log_scale: np.ndarray,
    bidx: np.ndarray,
    z: np.ndarray,
    chunk: int = 2048,
) -> np.ndarray:
    """p(z)/p'(z) with log-domain magnitude handling (overflow-safe)."""
    n1 = mantissa.shape[1]
    n = n1 - 1
    mag = np.abs(mantissa)
    with np.errstate(divide="ignore"):
        log_mag = np.log(np.where(mag == 0.0, _TINY, mag)) + log_scale[None, :]
    unit = mantissa / np.where(mag == 0.0, 1.0, mag)
    k = np.arange(n1, dtype=float)[:, None]
    with np.errstate(divide="ignore"):
        logk = np.log(np.arange(1, n1, dtype=float))[:, None]

    out = np.empty_like(z)
    for s in range(0, len(z), chunk):
        zz = z[s : s + chunk]
        rows = bidx[s : s + chunk]
        az = np.abs(zz)
        logaz = np.log(np.where(az == 0.0, _TINY, az))
        phase = zz / np.where(az == 0.0, 1.0, az)
        # Unit phases z^k/|z|^k by cumulative products along k.
        ph = np.empty((n1, len(zz)), dtype=complex)
        ph[0] = 1.0
        np.cumprod(np.broadcast_to(phase, (n, len(zz))), axis=0, out=ph[1:])
        um = unit[rows].T
        lm = log_mag[rows].T
        h = lm + k * logaz[None, :]
        hmax = h.max(axis=0)
        phat = (np.exp(h - hmax[None, :]) * um * ph).sum(axis=0)
        hd = lm[1:] + logk + (k[1:] - 1.0) * logaz[None, :]
        hdmax = hd.max(axis=0)
        dphat = (np.exp(hd - hdmax[None, :]) * um[1:] * ph[:-1]).sum(axis=0)
        dphat = np.where(np.abs(dphat) < _TINY, _TINY, dphat)
        with np.errstate(over="ignore"):
            out[s : s + chunk] = (phat / dphat) * np.exp(hmax - hdmax)
    return out


class _Evaluator:
    def __init__(self, mantissa, log_scale):
        self.mantissa = mantissa
        self.log_scale = log_scale
        mag = np.abs(mantissa)
        with np.errstate(divide="ignore"):
            peak = np.log(np.where(mag == 0.0, _TINY, mag)).max() + log_scale.max()
        self.direct = bool(peak < _DIRECT_LOG_LIMIT)
        if self.direct:
            self.coeffs = mantissa * np.exp(log_scale)[None, :]

    def correction(self, bidx, z):
        """Flat Newton corrections: root z[i] belongs to polynomial bidx[i]."""
        if self.direct:
            return _correction_direct(self.coeffs, bidx, z)
        return _correction_log(self.mantissa, self.log_scale, bidx, z)


def _initial_guesses(mantissa: np.ndarray, log_scale: np.ndarray) -> np.ndarray:
    """Starting points from the Newton polygon of the coefficient moduli.

    Each edge of the upper convex hull of (k, log |c_k|) contributes one
    circle of starting points whose radius estimates the moduli of the
    roots it spans; far better than a single circle when root magnitudes
    spread over orders of magnitude.
    """
    B, n1 = mantissa.shape
    n = n1 - 1
    with np.errstate(divide="ignore"):
        logmag = np.log(np.abs(mantissa)) + log_scale[None, :]
    z = np.empty((B, n), dtype=complex)
    for b in range(B):
        y = logmag[b]
        hull = []  # indices of upper-hull vertices, k increasing
        for k in range(n1):
            if not np.isfinite(y[k]):
                continue
            while len(hull) >= 2:
                k1, k2 = hull[-2], hull[-1]
                # Keep the hull upper-convex: drop k2 if below chord k1->k.
                if (y[k2] - y[k1]) * (k - k1) <= (y[k] - y[k1]) * (k2 - k1):
                    hull.pop()
                else:
                    break
            hull.append(k)
        pos = 0
        for e in range(len(hull) - 1):
            k1, k2 = hull[e], hull[e + 1]
            count = k2 - k1
            log_r = np.clip((y[k1] - y[k2]) / count, -50.0, 50.0)
            idx = np.arange(count)
            angles = 2.0 * np.pi * (idx + 0.5) / count + 0.4 + 0.7 * e
            z[b, pos : pos + count] = np.exp(log_r) * np.exp(1j * angles)
            pos += count
        # Degenerate profiles (single hull vertex) should not occur for a
        # nonzero leading coefficient, but keep the solver total.
        if pos < n:
            z[b, pos:] = np.exp(1j * (0.4 + np.arange(n - pos)))
    return z


def _pairwise_repulsion(z: np.ndarray, pair_budget: int = 1 << 22) -> np.ndarray:
    """S_i = sum_{j != i} 1/(z_i - z_j) for each polynomial in the batch."""
    B, n = z.shape
    rows = max(1, min(B, pair_budget // max(n * n, 1)))
    S = np.empty_like(z)
    for s in range(0, B, rows):
        block = z[s : s + rows, :, None] - z[s : s + rows, None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / block
        inv[~np.isfinite(inv)] = 0.0  # self terms (and accidental collisions)
        S[s : s + rows] = inv.sum(axis=2)
    return S


def aberth_roots(
    mantissa: np.ndarray,
    log_scale: np.ndarray,
    max_sweeps: int = 500,
    tol: float = 1e-10,
) -> np.ndarray:
    """Roots of the polynomials sum_k mantissa[b, k] e^{log_scale[k]} z^k.

    mantissa is (B, n+1) complex (B independent polynomials of degree n),
    log_scale a shared (n+1,) real vector. Returns a (B, n) complex array
    with each polynomial's roots sorted by (real, imag). Raises
    RootFindingFailed if residuals |p/p'| < tol * (1 + |root|) are not met
    within max_sweeps sweeps.
    """
    mantissa = np.atleast_2d(np.asarray(mantissa, dtype=complex))
    log_scale = np.asarray(log_scale, dtype=float)
    B, n1 = mantissa.shape
    n = n1 - 1
    if n < 1:
        raise ValueError("need degree >= 1")
    if np.any(np.abs(mantissa[:, n]) == 0.0):
        raise RootFindingFailed("zero leading coefficient")

    ev = _Evaluator(mantissa, log_scale)
    z = _initial_guesses(mantissa, log_scale)

    # Roots whose last correction was far below tolerance are frozen; the
    # final polish and residual check below still cover them.
    settled = np.zeros((B, n), dtype=bool)
    freeze_tol = 0.01 * tol
    for _ in range(max_sweeps):
        act_b, act_r = np.nonzero(~settled)
        if len(act_b) == 0:
            break
        N = ev.correction(act_b, z[act_b, act_r])
        rows = np.unique(act_b)
        S = np.empty((B, n), dtype=complex)
        S[rows] = _pairwise_repulsion(z[rows])
        den = 1.0 - N * S[act_b, act_r]
        den = np.where(np.abs(den) < _TINY, _TINY, den)
        step = N / den
        znew = z[act_b, act_r] - step
        z[act_b, act_r] = znew
        small = np.abs(step) <= freeze_tol * (1.0 + np.abs(znew))
        settled[act_b[small], act_r[small]] = True
    else:
        remaining = int((~settled).any(axis=1).sum())
        raise RootFindingFailed(
            f"{remaining} polynomial(s) unconverged after {max_sweeps} sweeps"
        )

    # One Newton polish per root, then verify residuals.
    flat_b = np.repeat(np.arange(B), n)
    z = z - ev.correction(flat_b, z.ravel()).reshape(z.shape)
    resid = np.abs(ev.correction(flat_b, z.ravel()).reshape(z.shape))
    if not np.all(resid <= tol * (1.0 + np.abs(z))):
        raise RootFindingFailed("post-polish residuals exceed tolerance")

    order = np.lexsort((z.imag, z.real), axis=-1)
    return np.take_along_axis(z, order, axis=1)
