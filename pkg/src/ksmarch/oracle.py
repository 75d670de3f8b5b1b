"""Density traces of the interacting system and second-derivative estimates.

The interacting propagation stands in for a quantum device that returns site
densities. Measurement error is modelled as bounded uniform noise
``|u_j| <= delta_n`` drawn from a counter-based generator keyed by
``(seed, sample index)`` so that traces replay bit-for-bit.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import StencilFault
from .propagator import ManyBodyState, _Hamiltonian, _step_many_body

TIME_TOL = 1e-9


@dataclass(frozen=True)
class NoiseSpec:
    """Bounded measurement noise; ``r`` only records the emulated repetition count."""

    delta_n: float
    r: int = 1
    seed: int = 0

    def __post_init__(self):
        if not self.delta_n >= 0:
            raise ValueError("delta_n must be nonnegative")
        if self.r < 1:
            raise ValueError("repetition count r must be >= 1")

    def draw(self, M, counter):
        rng = np.random.default_rng([int(self.seed), int(counter)])
        return rng.uniform(-self.delta_n, self.delta_n, size=M)

    def emulated_cost(self):
        """Relative expectation-estimation cost ``r / delta_n**1.5``."""
        return math.inf if self.delta_n == 0 else self.r / self.delta_n ** 1.5

    def to_dict(self):
        return {"delta_n": self.delta_n, "r": self.r, "seed": self.seed}


def measure_density(state, basis, noise=None, counter=0):
    """Site densities ``<n_j>``, optionally with bounded noise."""
    psi = np.asarray(state.amplitudes)
    prob = np.abs(psi) ** 2
    n = prob @ basis.occupations.astype(float)
    if noise is not None and noise.delta_n > 0:
        n = n + noise.draw(basis.M, counter)
    return n


def heisenberg_derivative(psi, H, A, order):
    """``d^k/dt^k <A>`` at fixed ``H``: expectation of the nested commutator ``(i ad_H)^k A``."""
    C = np.asarray(A, dtype=complex)
    for _ in range(order):
        C = 1j * (H @ C - C @ H)
    return float(np.real(np.vdot(psi, C @ psi)))


def exact_dn(state, model, basis):
    """``<i[H, n_j]>`` for every site (the lattice current divergence)."""
    from .fock import build_dtn_ops

    psi = np.asarray(state.amplitudes)
    return np.array([op.expect(psi) for op in build_dtn_ops(model, basis)])


def exact_d2n(state, model, basis, ham=None):
    """``<i[H, i[H, n_j]]>`` at ``state.t`` via matrix-vector products.

    Uses ``-<[H,[H,n]]> = 2 <H psi| n |H psi> - 2 Re <H^2 psi| n |psi>``.
    The potential commutes with ``n_j`` so no explicit time derivative enters.
    """
    if ham is None:
        ham = _Hamiltonian(model, basis)
    H = ham(state.t)
    psi = np.asarray(state.amplitudes)
    hpsi = H @ psi
    h2psi = H @ hpsi
    occ = basis.occupations.astype(float)
    a = (np.abs(hpsi) ** 2) @ occ
    b = np.real(np.conj(h2psi) * psi) @ occ
    return 2.0 * a - 2.0 * b


@dataclass(frozen=True)
class DensityTrace:
    """Per-site densities sampled at ordered times."""

    times: np.ndarray
    values: np.ndarray
    N: int
    noise: NoiseSpec | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if values.shape[0] != times.size:
            raise ValueError("values must have one row per time")
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @property
    def M(self):
        return self.values.shape[1]

    @property
    def spacing(self):
        return float(np.min(np.diff(self.times))) if self.times.size > 1 else math.inf

    def find(self, t):
        """Index of the sample at time ``t``, or ``None``."""
        i = int(np.argmin(np.abs(self.times - t)))
        return i if abs(self.times[i] - t) <= TIME_TOL * max(1.0, abs(t)) else None

    def index(self, t):
        i = self.find(t)
        if i is None:
            raise StencilFault(f"trace has no sample at t={t!r}")
        return i

    def at(self, t):
        return self.values[self.index(t)]

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"n_{j + 1}" for j in range(self.M)])
        for t, row in zip(self.times, self.values):
            w.writerow([format(t, ".17g")] + [format(x, ".17g") for x in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path, N, noise=None):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0][0] != "t":
            raise ValueError(f"{path}: missing header starting with 't'")
        data = np.array([[float(x) for x in r] for r in rows[1:]], dtype=float)
        return cls(data[:, 0], data[:, 1:], N, noise)

    def to_json(self, path=None):
        doc = {
            "N": self.N,
            "times": self.times.tolist(),
            "values": self.values.tolist(),
            "noise": None if self.noise is None else self.noise.to_dict(),
            "meta": self.meta,
        }
        text = json.dumps(doc, indent=1)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_json(cls, source):
        if isinstance(source, str) and source.lstrip().startswith("{"):
            doc = json.loads(source)
        else:
            with open(source) as fh:
                doc = json.load(fh)
        noise = None if doc.get("noise") is None else NoiseSpec(**doc["noise"])
        return cls(np.array(doc["times"], dtype=float), np.array(doc["values"], dtype=float),
                   int(doc["N"]), noise, doc.get("meta", {}))


def generate_trace(model, basis, psi0, times, substeps=4, noise=None):
    """Propagate ``psi0`` (given at ``psi0.t``) and sample densities at ``times``.

    Sample times may lie before ``psi0.t``; those are reached by backward
    propagation. Noise counters are the sample indices.
    """
    times = np.asarray(times, dtype=float)
    ham = _Hamiltonian(model, basis)
    values = np.empty((times.size, basis.M))
    t_ref = psi0.t
    fwd = np.nonzero(times >= t_ref - TIME_TOL)[0]
    bwd = np.nonzero(times < t_ref - TIME_TOL)[0][::-1]
    for order in (fwd, bwd):
        psi, t = np.asarray(psi0.amplitudes, dtype=complex), t_ref
        for i in order:
            if abs(times[i] - t) > 0:
                psi = _step_many_body(psi, ham, t, times[i], substeps)
                t = times[i]
            values[i] = measure_density(ManyBodyState(psi, t), basis, noise, counter=i)
    return DensityTrace(times, values, basis.N, noise)


def uniform_grid(t_start, spacing, count):
    return t_start + spacing * np.arange(count)


def stencil_d2n(trace, t, h):
    """Three-point estimate ``(n(t+h) - 2 n(t) + n(t-h)) / h^2``."""
    lo, mid, hi = trace.find(t - h), trace.find(t), trace.find(t + h)
    if lo is None or mid is None or hi is None:
        raise StencilFault(f"trace lacks samples at t={t!r} +/- h={h!r}")
    v = trace.values
    return (v[hi] - 2.0 * v[mid] + v[lo]) / h ** 2


def stencil_error_budget(c4, delta_n, h):
    """Truncation plus noise bound ``c4 h^2/12 + 4 delta_n/h^2``."""
    return c4 * h ** 2 / 12.0 + 4.0 * delta_n / h ** 2


def choose_stencil_h(delta_n, c4):
    """Half-width minimising the stencil error budget: ``h = (48 delta_n / c4)**(1/4)``."""
    if not (delta_n > 0 and c4 > 0):
        raise ValueError("delta_n and c4 must be positive")
    return (48.0 * delta_n / c4) ** 0.25


def estimate_c4(trace):
    """Heuristic fourth-derivative bound from a fine noiseless trace.

    Applies the five-point fourth-difference to every interior sample of a
    uniform trace and returns the largest magnitude. This is not rigorous;
    callers should treat it as an estimate.
    """
    v = trace.values
    if v.shape[0] < 5:
        raise StencilFault("need at least five samples to estimate c4")
    s = np.diff(trace.times)
    if np.ptp(s) > 1e-9 * s.mean():
        raise StencilFault("c4 estimation needs a uniform grid")
    d4 = (v[:-4] - 4 * v[1:-3] + 6 * v[2:-2] - 4 * v[3:-1] + v[4:]) / s.mean() ** 4
    return float(np.max(np.abs(d4)))


def central_dn(trace, t):
    """First time derivative of the trace at ``t``.

    Uses the five-point stencil when ``t +/- 2s`` are available, otherwise
    the three-point one.
    """
    s = trace.spacing
    idx = [trace.find(t + k * s) for k in (-2, -1, 0, 1, 2)]
    v = trace.values
    if None not in idx:
        m2, m1, _, p1, p2 = idx
        return (v[m2] - 8 * v[m1] + 8 * v[p1] - v[p2]) / (12 * s)
    if idx[1] is None or idx[3] is None:
        raise StencilFault(f"trace lacks neighbours of t={t!r} for a central difference")
    return (v[idx[3]] - v[idx[1]]) / (2 * s)


@dataclass(frozen=True)
class SecondDerivativeEstimate:
    """Per-site second derivative at ``t`` from ``method`` ("stencil" or "exact")."""

    value: np.ndarray
    t: float
    method: str
    h: float | None = None
    c4: float | None = None
