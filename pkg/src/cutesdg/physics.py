"""Conservation laws with entropy pairs and two-point fluxes.

States are arrays whose last axis holds the conservative variables, so every
function below is vectorized over any leading shape.
"""

from __future__ import annotations

import numpy as np


class InadmissibleStateError(ArithmeticError):
    """A state left the admissible set (non-positive depth, density or pressure)."""

    def __init__(self, message, values=None, where=None):
        super().__init__(message)
        self.values = values
        self.where = where


def log_mean(a, b):
    """Logarithmic mean ``(b - a) / (log b - log a)``, stable for ``a ~ b``.

    With ``f = (b - a)/(b + a)`` the log ratio is ``2 atanh(f)``, which is odd
    in ``f`` so the mean is exactly symmetric in its arguments. The series
    ``atanh(f)/f = 1 + f^2/3 + f^4/5 + f^6/7`` is used when ``|f| < 1e-4``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    f = (b - a) / (b + a)
    u = f * f
    small = np.abs(f) < 1e-4
    with np.errstate(divide="ignore", invalid="ignore"):
        exact = np.arctanh(f) / np.where(small, 1.0, f)
    series = 1.0 + u / 3.0 + u * u / 5.0 + u * u * u / 7.0
    F = np.where(small, series, exact)
    return 0.5 * (a + b) / F


class ConservationLaw:
    """Interface shared by :class:`ShallowWater` and :class:`Euler`."""

    n_vars: int
    names: tuple

    def flux(self, u, d: int):
        raise NotImplementedError

    def entropy(self, u):
        raise NotImplementedError

    def entropy_variables(self, u):
        raise NotImplementedError

    def conservative_variables(self, v):
        raise NotImplementedError

    def entropy_flux(self, u, d: int):
        raise NotImplementedError

    def entropy_potential(self, u, d: int):
        raise NotImplementedError

    def ec_flux(self, uL, uR):
        """Both directional EC fluxes ``(f_1, f_2)``."""
        raise NotImplementedError

    def sound_speed(self, u):
        raise NotImplementedError

    def velocity(self, u):
        return u[..., 1:3] / u[..., :1]

    # ---- shared helpers ----

    def check(self, u, where=None):
        raise NotImplementedError

    def ec_flux_pairs(self, u, i, j, q):
        """``q[:, 0] f_1(u_i, u_j) + q[:, 1] f_2(u_i, u_j)`` for index arrays ``i, j``.

        Laws override this to reuse per-point quantities across the many
        pairs that share a point.
        """
        f1, f2 = self.ec_flux(u[i], u[j])
        return q[:, :1] * f1 + q[:, 1:2] * f2

    def ec_flux_normal(self, uL, uR, n):
        f1, f2 = self.ec_flux(uL, uR)
        return n[..., :1] * f1 + n[..., 1:2] * f2

    def flux_normal(self, u, n):
        return n[..., :1] * self.flux(u, 0) + n[..., 1:2] * self.flux(u, 1)

    def max_wavespeed(self, uL, uR, n):
        """Davis estimate ``max(|u.n| + c)`` over the two states; ``n`` is a unit normal."""
        lam = []
        for u in (uL, uR):
            vel = self.velocity(u)
            un = np.abs(np.sum(vel * n, axis=-1))
            lam.append(un + self.sound_speed(u))
        return np.maximum(lam[0], lam[1])

    def es_flux(self, uL, uR, n):
        """Lax-Friedrichs entropy-stable normal flux ``n.f_EC - lam/2 (uR - uL)``.

        ``uL`` is the interior state and ``n`` the outward unit normal; the
        dissipation is applied once per point, not once per direction.
        """
        lam = self.max_wavespeed(uL, uR, n)
        return self.ec_flux_normal(uL, uR, n) - 0.5 * lam[..., None] * (uR - uL)

    def reflect(self, u, n):
        """Mirror state with the normal momentum negated."""
        g = np.array(u, dtype=float, copy=True)
        m = u[..., 1:3]
        mn = np.sum(m * n, axis=-1, keepdims=True)
        g[..., 1:3] = m - 2.0 * mn * n
        return g


class ShallowWater(ConservationLaw):
    """Shallow water equations with flat bathymetry; entropy is the total energy."""

    n_vars = 3
    names = ("h", "hu", "hv")

    def __init__(self, g: float = 1.0):
        if not g > 0:
            raise ValueError("gravity must be positive")
        self.g = float(g)

    def __repr__(self):
        return f"ShallowWater(g={self.g})"

    def check(self, u, where=None):
        h = u[..., 0]
        bad = ~(h > 0)
        if np.any(bad):
            idx = np.argwhere(bad)[0]
            raise InadmissibleStateError(
                f"non-positive water height {h[tuple(idx)]!r}"
                + (f" ({where})" if where else ""), u[tuple(idx)], where)

    def flux(self, u, d):
        h = u[..., 0]
        ud = u[..., 1 + d] / h
        f = u * ud[..., None]
        f[..., 1 + d] += 0.5 * self.g * h * h
        return f

    def entropy(self, u):
        h = u[..., 0]
        return 0.5 * (u[..., 1] ** 2 + u[..., 2] ** 2) / h + 0.5 * self.g * h * h

    def entropy_variables(self, u):
        h = u[..., 0]
        vel = u[..., 1:3] / h[..., None]
        v = np.empty_like(u, dtype=float)
        v[..., 0] = self.g * h - 0.5 * np.sum(vel * vel, axis=-1)
        v[..., 1:3] = vel
        return v

    def conservative_variables(self, v):
        vel = v[..., 1:3]
        h = (v[..., 0] + 0.5 * np.sum(vel * vel, axis=-1)) / self.g
        u = np.empty_like(v, dtype=float)
        u[..., 0] = h
        u[..., 1:3] = h[..., None] * vel
        return u

    def entropy_flux(self, u, d):
        h = u[..., 0]
        return (self.entropy(u) + 0.5 * self.g * h * h) * u[..., 1 + d] / h

    def entropy_potential(self, u, d):
        h = u[..., 0]
        return 0.5 * self.g * h * u[..., 1 + d]

    def sound_speed(self, u):
        return np.sqrt(self.g * u[..., 0])

    def ec_flux(self, uL, uR):
        hL, hR = uL[..., 0], uR[..., 0]
        vL, vR = uL[..., 1:3] / hL[..., None], uR[..., 1:3] / hR[..., None]
        vavg = 0.5 * (vL + vR)
        pavg = 0.5 * self.g * hL * hR
        out = []
        for d in range(2):
            fh = 0.5 * (uL[..., 1 + d] + uR[..., 1 + d])
            f = np.empty(np.broadcast(hL, hR).shape + (3,))
            f[..., 0] = fh
            f[..., 1] = fh * vavg[..., 0]
            f[..., 2] = fh * vavg[..., 1]
            f[..., 1 + d] += pavg
            out.append(f)
        return tuple(out)

    def ec_flux_pairs(self, u, i, j, q):
        h = u[:, 0]
        v = u[:, 1:3] / h[:, None]
        vavg = 0.5 * (v[i] + v[j])
        fh = 0.5 * np.einsum("pd,pd->p", q, u[i, 1:3] + u[j, 1:3])
        pavg = 0.5 * self.g * h[i] * h[j]
        out = np.empty((len(i), 3))
        out[:, 0] = fh
        out[:, 1:3] = fh[:, None] * vavg + pavg[:, None] * q
        return out


class Euler(ConservationLaw):
    """Compressible Euler equations for an ideal gas.

    The entropy is ``U = -rho s / (gamma - 1)`` with ``s = log p - gamma log rho``.
    """

    n_vars = 4
    names = ("rho", "rhou", "rhov", "E")

    def __init__(self, gamma: float = 1.4):
        if not gamma > 1:
            raise ValueError("gamma must exceed 1")
        self.gamma = float(gamma)

    def __repr__(self):
        return f"Euler(gamma={self.gamma})"

    def pressure(self, u):
        rho = u[..., 0]
        ke = 0.5 * (u[..., 1] ** 2 + u[..., 2] ** 2) / rho
        return (self.gamma - 1.0) * (u[..., 3] - ke)

    def from_primitive(self, rho, vx, vy, p):
        rho, vx, vy, p = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (rho, vx, vy, p)))
        return np.stack([rho, rho * vx, rho * vy,
                         p / (self.gamma - 1.0) + 0.5 * rho * (vx * vx + vy * vy)], axis=-1)

    def check(self, u, where=None):
        rho = u[..., 0]
        with np.errstate(invalid="ignore", divide="ignore"):
            p = self.pressure(u)
        bad = ~((rho > 0) & (p > 0))
        if np.any(bad):
            idx = tuple(np.argwhere(bad)[0])
            raise InadmissibleStateError(
                f"non-positive density or pressure (rho={rho[idx]!r}, p={p[idx]!r})"
                + (f" ({where})" if where else ""), u[idx], where)

    def flux(self, u, d):
        rho = u[..., 0]
        ud = u[..., 1 + d] / rho
        p = self.pressure(u)
        f = u * ud[..., None]
        f[..., 1 + d] += p
        f[..., 3] += p * ud
        return f

    def _s(self, u):
        return np.log(self.pressure(u)) - self.gamma * np.log(u[..., 0])

    def entropy(self, u):
        return -u[..., 0] * self._s(u) / (self.gamma - 1.0)

    def entropy_variables(self, u):
        gm1 = self.gamma - 1.0
        rho = u[..., 0]
        p = self.pressure(u)
        vel = u[..., 1:3] / rho[..., None]
        beta = rho / p
        v = np.empty_like(u, dtype=float)
        v[..., 0] = (self.gamma - self._s(u)) / gm1 - 0.5 * beta * np.sum(vel * vel, axis=-1)
        v[..., 1:3] = beta[..., None] * vel
        v[..., 3] = -beta
        return v

    def conservative_variables(self, v):
        gm1 = self.gamma - 1.0
        beta = -v[..., 3]
        vel = v[..., 1:3] / beta[..., None]
        vv = np.sum(vel * vel, axis=-1)
        s = self.gamma - gm1 * (v[..., 0] + 0.5 * beta * vv)
        # s = log p - gamma log rho with p = rho / beta
        rho = np.exp((s + np.log(beta)) / (1.0 - self.gamma))
        u = np.empty_like(v, dtype=float)
        u[..., 0] = rho
        u[..., 1:3] = rho[..., None] * vel
        u[..., 3] = rho / (beta * gm1) + 0.5 * rho * vv
        return u

    def entropy_flux(self, u, d):
        return self.entropy(u) * u[..., 1 + d] / u[..., 0]

    def entropy_potential(self, u, d):
        return u[..., 1 + d]

    def sound_speed(self, u):
        return np.sqrt(self.gamma * self.pressure(u) / u[..., 0])

    def ec_flux(self, uL, uR):
        gm1 = self.gamma - 1.0
        rL, rR = uL[..., 0], uR[..., 0]
        pL, pR = self.pressure(uL), self.pressure(uR)
        vL, vR = uL[..., 1:3] / rL[..., None], uR[..., 1:3] / rR[..., None]
        rho_ln = log_mean(rL, rR)
        beta_ln = log_mean(rL / pL, rR / pR)
        vavg = 0.5 * (vL + vR)
        pavg = 0.5 * (pL + pR)
        vdot = 0.5 * np.sum(vL * vR, axis=-1)
        out = []
        for d in range(2):
            fr = rho_ln * vavg[..., d]
            f = np.empty(np.broadcast(rL, rR).shape + (4,))
            f[..., 0] = fr
            f[..., 1] = fr * vavg[..., 0]
            f[..., 2] = fr * vavg[..., 1]
            f[..., 1 + d] += pavg
            f[..., 3] = fr * (vdot + 1.0 / (gm1 * beta_ln)) \
                + 0.5 * (pL * vR[..., d] + pR * vL[..., d])
            out.append(f)
        return tuple(out)

    def ec_flux_pairs(self, u, i, j, q):
        gm1 = self.gamma - 1.0
        rho = u[:, 0]
        p = self.pressure(u)
        v = u[:, 1:3] / rho[:, None]
        beta = rho / p
        rho_ln = log_mean(rho[i], rho[j])
        beta_ln = log_mean(beta[i], beta[j])
        vL, vR = v[i], v[j]
        pL, pR = p[i], p[j]
        vavg = 0.5 * (vL + vR)
        fr = rho_ln * np.einsum("pd,pd->p", q, vavg)
        vdot = 0.5 * np.einsum("pd,pd->p", vL, vR)
        out = np.empty((len(i), 4))
        out[:, 0] = fr
        out[:, 1:3] = fr[:, None] * vavg + (0.5 * (pL + pR))[:, None] * q
        out[:, 3] = fr * (vdot + 1.0 / (gm1 * beta_ln)) + 0.5 * (
            pL * np.einsum("pd,pd->p", q, vR) + pR * np.einsum("pd,pd->p", q, vL))
        return out


def make_law(name: str, **params) -> ConservationLaw:
    key = name.lower().replace("-", "_")
    if key in ("swe", "shallow_water"):
        return ShallowWater(**params)
    if key == "euler":
        return Euler(**params)
    raise ValueError(f"unknown conservation law {name!r}")


# Functional aliases --------------------------------------------------------

def physical_flux(law, u, d):
    law.check(u)
    return law.flux(u, d)


def entropy_variables(law, u):
    law.check(u)
    return law.entropy_variables(u)


def u_of_v(law, v):
    u = law.conservative_variables(v)
    law.check(u)
    return u


def ec_flux(law, uL, uR, d):
    return law.ec_flux(uL, uR)[d]


def es_flux_lax_friedrichs(law, uL, uR, n):
    return law.es_flux(uL, uR, np.asarray(n, dtype=float))


def entropy_potential(law, u, d):
    return law.entropy_potential(u, d)
