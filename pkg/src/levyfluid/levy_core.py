"""Input subordinator and net-input Levy process.

The fluid input is a drift plus a compound Poisson process with positive jumps,
so every exponent below is available in closed form.  The net input
``Y_t = X_t - r t`` is spectrally positive; its Laplace exponent ``varphi`` is
convex, vanishes at zero and is strictly increasing when the queue is stable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

FAMILIES = ("exponential", "deterministic", "erlang", "hyperexponential")

# integer codes understood by the simulation kernels
FAMILY_CODES = {name: code for code, name in enumerate(FAMILIES)}

ROOT_TOL = 1e-12
ROOT_MAX_ITER = 200


class NumericsError(RuntimeError):
    """A numerical routine failed where the mathematics says it cannot."""


class UnstableModelError(ValueError):
    """The model violates a stability inequality."""


def _check_theta(theta):
    """Reject negative real arguments; complex arguments pass through (inversion)."""
    arr = np.asarray(theta)
    if not np.iscomplexobj(arr) and np.any(arr < 0):
        raise ValueError(f"transform argument must be >= 0, got {theta!r}")
    return arr


@dataclass(frozen=True)
class JumpDistribution:
    """A positive jump-size law.

    Construct through the family classmethods, e.g.
    ``JumpDistribution.exponential(2.0)`` or ``JumpDistribution.erlang(3, 1.5)``.
    ``params`` holds the family parameters in a fixed order:

    * exponential: ``(rate,)``
    * deterministic: ``(value,)``
    * erlang: ``(shape, rate)`` with integer shape
    * hyperexponential: ``(w_1, ..., w_n, rate_1, ..., rate_n)``
    """

    family: str
    params: tuple[float, ...]

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown jump family {self.family!r}; expected one of {FAMILIES}")
        params = tuple(float(p) for p in self.params)
        object.__setattr__(self, "params", params)
        if not params or any(not math.isfinite(p) or p <= 0 for p in params):
            raise ValueError(f"{self.family} parameters must be finite and > 0, got {params}")
        if self.family in ("exponential", "deterministic") and len(params) != 1:
            raise ValueError(f"{self.family} takes exactly one parameter")
        if self.family == "erlang":
            if len(params) != 2 or params[0] != int(params[0]):
                raise ValueError("erlang takes (integer shape, rate)")
        if self.family == "hyperexponential":
            if len(params) % 2:
                raise ValueError("hyperexponential takes weights followed by rates")
            if abs(sum(self.weights) - 1.0) > 1e-12:
                raise ValueError(f"hyperexponential weights must sum to 1, got {sum(self.weights)!r}")

    @classmethod
    def exponential(cls, rate):
        return cls("exponential", (rate,))

    @classmethod
    def deterministic(cls, value):
        return cls("deterministic", (value,))

    @classmethod
    def erlang(cls, shape, rate):
        return cls("erlang", (shape, rate))

    @classmethod
    def hyperexponential(cls, weights, rates):
        weights, rates = tuple(weights), tuple(rates)
        if len(weights) != len(rates):
            raise ValueError("need one rate per weight")
        return cls("hyperexponential", weights + rates)

    @property
    def weights(self):
        n = len(self.params) // 2
        return self.params[:n]

    @property
    def rates(self):
        n = len(self.params) // 2
        return self.params[n:]

    def kernel_spec(self):
        """``(code, params)`` pair consumed by the compiled samplers."""
        if self.family == "hyperexponential":
            packed = (len(self.weights),) + self.params
        else:
            packed = self.params
        return FAMILY_CODES[self.family], np.asarray(packed, dtype=np.float64)

    # -- moments -----------------------------------------------------------

    def moment(self, k):
        """``E Z**k`` for integer ``k >= 0``."""
        if k < 0 or k != int(k):
            raise ValueError("moment order must be a non-negative integer")
        k = int(k)
        if self.family == "exponential":
            return math.factorial(k) / self.params[0] ** k
        if self.family == "deterministic":
            return self.params[0] ** k
        if self.family == "erlang":
            shape, rate = self.params
            return math.prod(shape + j for j in range(k)) / rate**k
        return sum(w * math.factorial(k) / mu**k for w, mu in zip(self.weights, self.rates))

    def mean(self):
        return self.moment(1)

    def residual_moment(self, k):
        """``E V**k`` for the stationary excess ``V`` (density ``P(Z > x)/E Z``)."""
        return self.moment(k + 1) / ((k + 1) * self.mean())

    # -- transforms --------------------------------------------------------

    def lst(self, theta):
        """``E exp(-theta Z)``; accepts arrays and complex arguments."""
        theta = _check_theta(theta)
        if self.family == "exponential":
            mu = self.params[0]
            return mu / (mu + theta)
        if self.family == "deterministic":
            return np.exp(-theta * self.params[0])
        if self.family == "erlang":
            shape, rate = self.params
            return (rate / (rate + theta)) ** shape
        return sum(w * mu / (mu + theta) for w, mu in zip(self.weights, self.rates))

    def weighted_lst(self, theta):
        """``E Z exp(-theta Z)``, i.e. minus the derivative of :meth:`lst`."""
        theta = _check_theta(theta)
        if self.family == "exponential":
            mu = self.params[0]
            return mu / (mu + theta) ** 2
        if self.family == "deterministic":
            d = self.params[0]
            return d * np.exp(-theta * d)
        if self.family == "erlang":
            shape, rate = self.params
            return shape * rate**shape / (rate + theta) ** (shape + 1)
        return sum(w * mu / (mu + theta) ** 2 for w, mu in zip(self.weights, self.rates))

    def residual_lst(self, theta):
        """Transform of the stationary excess, ``(1 - lst(theta)) / (theta E Z)``."""
        theta = _check_theta(theta)
        if self.family == "exponential":
            return self.lst(theta)
        safe = np.where(theta == 0, 1.0, theta)
        if self.family == "deterministic":
            d = self.params[0]
            out = -np.expm1(-safe * d) / (safe * d)
        else:
            out = (1.0 - self.lst(safe)) / (safe * self.mean())
        return np.where(theta == 0, 1.0, out)[()]

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.family == "exponential":
            return np.where(x < 0, 0.0, -np.expm1(-self.params[0] * np.maximum(x, 0)))
        if self.family == "deterministic":
            return np.where(x >= self.params[0], 1.0, 0.0)
        if self.family == "erlang":
            shape, rate = self.params
            return special.gammainc(shape, rate * np.maximum(x, 0))
        total = sum(w * -np.expm1(-mu * np.maximum(x, 0)) for w, mu in zip(self.weights, self.rates))
        return np.where(x < 0, 0.0, total)

    # -- sampling ----------------------------------------------------------

    def sample(self, rng, size=None):
        if self.family == "exponential":
            return rng.exponential(1.0 / self.params[0], size)
        if self.family == "deterministic":
            return self.params[0] if size is None else np.full(size, self.params[0])
        if self.family == "erlang":
            shape, rate = self.params
            return rng.gamma(shape, 1.0 / rate, size)
        idx = rng.choice(len(self.weights), size=size, p=self.weights)
        return rng.exponential(1.0 / np.asarray(self.rates)[idx])

    def sample_residual(self, rng, size=None):
        """Draw from the stationary excess law in closed form per family."""
        if self.family == "exponential":
            return rng.exponential(1.0 / self.params[0], size)
        if self.family == "deterministic":
            return self.params[0] * rng.random(size)
        if self.family == "erlang":
            # excess of Erlang(k) is the uniform mixture of Erlang(1..k)
            shape, rate = self.params
            stages = rng.integers(1, int(shape) + 1, size)
            return rng.gamma(stages, 1.0 / rate)
        # excess of a hyperexponential is a hyperexponential with weights w_i / mu_i
        w = np.asarray(self.weights) / np.asarray(self.rates)
        idx = rng.choice(len(w), size=size, p=w / w.sum())
        return rng.exponential(1.0 / np.asarray(self.rates)[idx])


def sample_jump(law, rng, size=None):
    return law.sample(rng, size)


def sample_residual(law, rng, size=None):
    return law.sample_residual(rng, size)


@dataclass(frozen=True)
class NetInputModel:
    """Net input ``Y_t = X_t - r t`` of the fluid queue.

    ``X`` has drift ``drift`` and jumps at rate ``jump_rate`` with sizes drawn
    from ``jump_law``; the server drains at ``service_rate``.
    """

    drift: float
    jump_rate: float
    jump_law: JumpDistribution | None
    service_rate: float
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        for name in ("drift", "jump_rate", "service_rate"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, value)
        if self.drift < 0:
            raise ValueError("drift must be >= 0")
        if self.jump_rate < 0:
            raise ValueError("jump_rate must be >= 0")
        if self.jump_rate > 0 and self.jump_law is None:
            raise ValueError("jump_law is required when jump_rate > 0")
        if self.service_rate <= 0:
            raise ValueError("service_rate must be > 0")
        if self.drain_rate <= 0:
            raise UnstableModelError(f"fluid must drain between jumps: r - a = {self.drain_rate} <= 0")
        if self.load >= self.service_rate:
            raise UnstableModelError(
                f"unstable input: rho = a + lambda_J m1 = {self.load:.6g} >= r = {self.service_rate:.6g}"
            )

    @property
    def drain_rate(self):
        """Slope ``r - a`` of the workload between jumps."""
        return self.service_rate - self.drift

    def jump_moment(self, k):
        return 0.0 if self.jump_rate == 0 else self.jump_law.moment(k)

    @property
    def load(self):
        """``rho = -phi'(0)``, the mean input per unit time."""
        return self.drift + self.jump_rate * self.jump_moment(1)

    # raw exponents, no domain check; used by finite-difference tests and inversion
    def _phi(self, theta):
        theta = np.asarray(theta)
        out = -self.drift * theta
        if self.jump_rate > 0:
            out = out + self.jump_rate * (self.jump_law.lst(theta) - 1.0)
        return out

    def _varphi(self, theta):
        return self._phi(theta) + self.service_rate * np.asarray(theta)

    def phi(self, theta):
        """Laplace exponent of the input subordinator, ``log E exp(-theta X_1)``."""
        _check_theta(theta)
        return self._phi(theta)

    def varphi(self, theta):
        """Laplace exponent of the net input, ``phi(theta) + r theta``."""
        _check_theta(theta)
        return self._varphi(theta)

    def varphi_prime(self, theta):
        """First derivative of :meth:`varphi`."""
        theta = _check_theta(theta)
        out = self.drain_rate + 0.0 * theta
        if self.jump_rate > 0:
            out = out - self.jump_rate * self.jump_law.weighted_lst(theta)
        return out

    def varphi_derivative_at_zero(self, k):
        """k-th derivative of ``varphi`` at 0 from the jump moments."""
        if k == 1:
            return self.service_rate - self.load
        return (-1) ** k * self.jump_rate * self.jump_moment(k)

    def varphi_derivatives_at_zero(self):
        """``(varphi'(0), varphi''(0), varphi'''(0))``."""
        return tuple(self.varphi_derivative_at_zero(k) for k in (1, 2, 3))

    def inverse_varphi(self, gamma):
        """The unique ``theta >= 0`` with ``varphi(theta) = gamma``.

        Safeguarded Newton inside a bisection bracket; the bracket is grown
        geometrically until it contains the root.
        """
        gamma = float(gamma)
        if not gamma > 0:
            raise ValueError(f"gamma must be > 0, got {gamma!r}")
        cached = self._cache.get(("inv", gamma))
        if cached is not None:
            return cached
        f = lambda x: float(self._varphi(x)) - gamma
        lo, hi = 0.0, max(1.0, gamma / self.varphi_derivative_at_zero(1))
        while f(hi) <= 0:
            lo, hi = hi, 2.0 * hi
        x = 0.5 * (lo + hi)
        for _ in range(ROOT_MAX_ITER):
            fx = f(x)
            if abs(fx) <= ROOT_TOL:
                break
            if fx > 0:
                hi = x
            else:
                lo = x
            if hi - lo <= 4 * np.finfo(float).eps * hi:
                break
            step = fx / float(self.varphi_prime(x))
            x_new = x - step
            if not lo < x_new < hi:
                x_new = 0.5 * (lo + hi)
            x = x_new
        else:
            raise NumericsError(f"inverse_varphi({gamma}) did not converge in {ROOT_MAX_ITER} iterations")
        self._cache[("inv", gamma)] = x
        return x

    def kernel_spec(self):
        """``(code, params)`` for the input-jump sampler; a dummy law when there are no jumps."""
        law = self.jump_law if self.jump_law is not None else JumpDistribution.deterministic(1.0)
        return law.kernel_spec()


def phi(model, theta):
    return model.phi(theta)


def varphi(model, theta):
    return model.varphi(theta)


def varphi_derivatives_at_zero(model):
    return model.varphi_derivatives_at_zero()


def inverse_varphi(model, gamma):
    return model.inverse_varphi(gamma)


def reflected_moments(net, order=3):
    """Raw moments ``E R**k`` (k = 1..order) of the stationary reflected process.

    Expands the Pollaczek-Khinchine transform ``theta d1 / varphi(theta)`` as a
    power series in ``theta`` using the derivatives of ``varphi`` at zero.
    """
    d1 = net.varphi_derivative_at_zero(1)
    # varphi(theta) / (theta d1) = 1 + sum_j c_j theta**j
    c = [net.varphi_derivative_at_zero(j + 1) / (math.factorial(j + 1) * d1) for j in range(1, order + 1)]
    a = [1.0]
    for n in range(1, order + 1):
        a.append(-sum(c[j - 1] * a[n - j] for j in range(1, n + 1)))
    return [(-1) ** k * math.factorial(k) * a[k] for k in range(1, order + 1)]
