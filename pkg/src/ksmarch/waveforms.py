"""Time-dependent on-site potentials.

A schedule has the form ``V_j(t) = static_j + amplitude_j * f(t)`` where the
scalar envelope ``f`` is one of a small documented set. Tabulated schedules
are piecewise constant: ``V(t)`` is the last sample with ``t_i <= t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

WAVEFORMS = ("constant", "ramp", "sinusoid", "gaussian", "tabulated")

_DEFAULT_PARAMS = {
    "constant": {},
    "ramp": {"t_start": 0.0, "t_end": 1.0},
    "sinusoid": {"omega": 1.0, "phase": 0.0},
    "gaussian": {"center": 0.5, "width": 0.1, "omega": 0.0, "phase": 0.0},
    "tabulated": {},
}


@dataclass(frozen=True)
class PotentialSchedule:
    """Per-site potential as a function of time (energy units)."""

    kind: str
    static: np.ndarray
    amplitude: np.ndarray | None = None
    params: dict = field(default_factory=dict)
    table_times: np.ndarray | None = None
    table_values: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in WAVEFORMS:
            raise ValueError(f"unknown waveform {self.kind!r}; expected one of {WAVEFORMS}")
        static = np.asarray(self.static, dtype=float)
        object.__setattr__(self, "static", static)
        amp = np.zeros_like(static) if self.amplitude is None else np.asarray(self.amplitude, dtype=float)
        if amp.shape != static.shape:
            raise ValueError("amplitude and static must have the same length")
        object.__setattr__(self, "amplitude", amp)
        merged = dict(_DEFAULT_PARAMS[self.kind])
        unknown = set(self.params) - set(merged)
        if unknown:
            raise ValueError(f"unknown parameters for {self.kind}: {sorted(unknown)}")
        merged.update({k: float(v) for k, v in self.params.items()})
        object.__setattr__(self, "params", merged)
        if self.kind == "ramp" and not merged["t_end"] > merged["t_start"]:
            raise ValueError("ramp needs t_end > t_start")
        if self.kind == "gaussian" and not merged["width"] > 0:
            raise ValueError("gaussian width must be positive")
        if self.kind == "tabulated":
            if self.table_times is None or self.table_values is None:
                raise ValueError("tabulated schedule needs table_times and table_values")
            tt = np.asarray(self.table_times, dtype=float)
            tv = np.atleast_2d(np.asarray(self.table_values, dtype=float))
            if tv.shape != (tt.size, static.size):
                raise ValueError("table_values must have shape (len(table_times), M)")
            if tt.size == 0 or np.any(np.diff(tt) <= 0):
                raise ValueError("table_times must be nonempty and strictly increasing")
            object.__setattr__(self, "table_times", tt)
            object.__setattr__(self, "table_values", tv)

    @property
    def M(self):
        return self.static.size

    def envelope(self, t):
        p = self.params
        if self.kind == "constant":
            return 0.0
        if self.kind == "ramp":
            return min(max((t - p["t_start"]) / (p["t_end"] - p["t_start"]), 0.0), 1.0)
        if self.kind == "sinusoid":
            return math.sin(p["omega"] * t + p["phase"])
        if self.kind == "gaussian":
            x = t - p["center"]
            g = math.exp(-0.5 * (x / p["width"]) ** 2)
            if p["omega"] != 0.0 or p["phase"] != 0.0:
                g *= math.cos(p["omega"] * x + p["phase"])
            return g
        raise ValueError("tabulated schedules have no envelope")

    def __call__(self, t):
        t = float(t)
        if self.kind == "tabulated":
            i = int(np.searchsorted(self.table_times, t, side="right")) - 1
            return self.static + self.table_values[max(i, 0)]
        return self.static + self.amplitude * self.envelope(t)

    def lipschitz(self):
        """Upper bound on ``|V(t) - V(t')|_inf / |t - t'|``.

        Tabulated schedules are discontinuous; the value returned for them is
        the largest jump divided by its sample spacing, a heuristic only.
        """
        a = float(np.max(np.abs(self.amplitude))) if self.amplitude.size else 0.0
        p = self.params
        if self.kind == "constant":
            return 0.0
        if self.kind == "ramp":
            return a / (p["t_end"] - p["t_start"])
        if self.kind == "sinusoid":
            return a * abs(p["omega"])
        if self.kind == "gaussian":
            return a * (1.0 / (p["width"] * math.sqrt(math.e)) + abs(p["omega"]))
        if self.table_times.size < 2:
            return 0.0
        jumps = np.max(np.abs(np.diff(self.table_values, axis=0)), axis=1)
        return float(np.max(jumps / np.diff(self.table_times)))

    def shifted(self, c):
        """Same schedule with every site raised by the constant ``c``."""
        return PotentialSchedule(self.kind, self.static + c, self.amplitude, self.params,
                                 self.table_times, self.table_values)

    def to_dict(self):
        d = {"waveform": self.kind, "static": self.static.tolist()}
        if self.kind != "constant" and self.kind != "tabulated":
            d["amplitude"] = self.amplitude.tolist()
            d["params"] = dict(self.params)
        if self.kind == "tabulated":
            d["table_times"] = self.table_times.tolist()
            d["table_values"] = self.table_values.tolist()
        return d

    @classmethod
    def from_dict(cls, d, M=None):
        d = dict(d)
        kind = d.pop("waveform", "constant")
        static = d.pop("static", None)
        if static is None:
            if M is None:
                raise ValueError("static potential missing and M unknown")
            static = np.zeros(M)
        out = cls(kind, np.asarray(static, dtype=float),
                  amplitude=d.pop("amplitude", None),
                  params=d.pop("params", {}) or {},
                  table_times=d.pop("table_times", None),
                  table_values=d.pop("table_values", None))
        if d:
            raise ValueError(f"unknown potential keys: {sorted(d)}")
        if M is not None and out.M != M:
            raise ValueError(f"potential has {out.M} sites, model has {M}")
        return out


def constant(values):
    return PotentialSchedule("constant", np.asarray(values, dtype=float))


def sinusoid(static, amplitude, omega=1.0, phase=0.0):
    return PotentialSchedule("sinusoid", static, amplitude, {"omega": omega, "phase": phase})
