"""Run configuration: a sectioned key-value text format with line tracking.

The format is INI-like ("[section]" headers, "key = value" entries, "#"
comments).  Parsing records the line of every entry so validation errors can
point at the offending line.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .spectral import ParameterInterval

__all__ = ["ConfigError", "RunConfig", "load_config", "parse_sections"]


class ConfigError(ValueError):
    """Configuration file problem, with file and line in the message."""


def parse_sections(path) -> dict:
    """Parse "[section]" / "key = value" lines into {(section, key): (value, line)}."""
    entries = {}
    section = None
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            if not section:
                raise ConfigError(f"{path}:{lineno}: empty section name")
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        if section is None:
            raise ConfigError(f"{path}:{lineno}: entry before any [section] header")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{path}:{lineno}: missing key")
        entries[(section, key.lower())] = (value, lineno)
    return entries


class _Reader:
    def __init__(self, path, entries):
        self.path = path
        self.entries = entries
        self.seen = set()

    def _fetch(self, section, key, default):
        self.seen.add((section, key))
        if (section, key) in self.entries:
            return self.entries[(section, key)]
        if default is _REQUIRED:
            raise ConfigError(f"{self.path}: missing required entry [{section}] {key}")
        return default, None

    def fail(self, section, key, message):
        _, line = self.entries.get((section, key), (None, None))
        where = f"{self.path}:{line}" if line else f"{self.path}"
        raise ConfigError(f"{where}: [{section}] {key}: {message}")

    def get(self, section, key, conv, default=None, check=None, describe=""):
        value, line = self._fetch(section, key, default)
        if line is not None:
            try:
                value = conv(value)
            except (TypeError, ValueError):
                self.fail(section, key, f"cannot parse {value!r} as {describe or conv.__name__}")
        if value is not None and check is not None and not check(value):
            self.fail(section, key, f"invalid value {value!r}; expected {describe}")
        return value

    def unknown_keys(self):
        return sorted(set(self.entries) - self.seen)


_REQUIRED = object()


def _parse_times(text: str) -> list:
    text = text.strip()
    if ":" in text:
        start, step, stop = (float(p) for p in text.split(":"))
        if step <= 0:
            raise ValueError("time step must be positive")
        out = np.arange(start, stop + 0.5 * step, step)
        return [float(round(t, 12)) for t in out]
    return [float(p) for p in text.replace(",", " ").split()]


def _parse_lambda(text: str):
    if text.strip().lower() == "morozov":
        return "morozov"
    return float(text)


@dataclass
class RunConfig:
    """Everything a forward build, data simulation or reconstruction needs."""

    dim: int
    flux_magnitude: float
    final_time: float
    mesh_nodes_per_side: int
    spline_count: int
    spline_degree: int
    interval: ParameterInterval
    total_degree: int
    keep_columns: Optional[int]
    delta: float
    measurement_points: int
    measurement_times: list
    sigma0: float
    seed: int
    data_nodes_per_side: int
    data_delta: float
    target: str
    lam: object                  # float or the string "morozov"
    theta0_policy: str
    max_iterations: int
    source: str = ""

    @property
    def num_parameters(self) -> int:
        return self.spline_count ** self.dim

    def provenance(self) -> dict:
        return {
            "flux_magnitude": self.flux_magnitude,
            "final_time": self.final_time,
            "mesh_nodes_per_side": self.mesh_nodes_per_side,
            "delta": self.delta,
        }


def load_config(path) -> RunConfig:
    """Read and validate a configuration file."""
    entries = parse_sections(path)
    r = _Reader(path, entries)

    dim = r.get("problem", "dim", int, _REQUIRED, lambda v: v in (2, 3), "2 or 3")
    flux = r.get("problem", "flux_magnitude", float, 20.0 if dim == 2 else 40.0,
                 lambda v: v != 0, "a nonzero flux")
    final_time = r.get("problem", "final_time", float, 0.5, lambda v: v > 0,
                       "a positive time")
    mesh_n = r.get("mesh", "nodes_per_side", int, _REQUIRED, lambda v: v >= 2,
                   "an integer >= 2")
    m = r.get("splines", "per_axis_count", int, _REQUIRED, lambda v: v >= 1,
              "a positive count")
    s = r.get("splines", "degree", int, 1, lambda v: v >= 0, "a nonnegative degree")
    if m < s + 1:
        r.fail("splines", "per_axis_count", f"needs at least degree+1 = {s + 1} functions")
    lo = r.get("spectral", "interval_lo", float, 0.5)
    hi = r.get("spectral", "interval_hi", float, 2.0)
    if not 0 < lo < hi:
        r.fail("spectral", "interval_lo",
               "parameter interval must satisfy 0 < lo < hi for a positive diffusivity")
    n = r.get("spectral", "total_degree", int, 2, lambda v: v >= 0, "a nonnegative degree")
    keep = r.get("spectral", "keep_columns", lambda v: int(v) if v else None, None,
                 lambda v: v is None or v >= 1, "a positive count or empty")
    delta = r.get("time", "delta", float, 1e-3, lambda v: v > 0, "a positive step")
    q_s = r.get("measurement", "spatial_points", int, 36 if dim == 2 else 152,
                lambda v: v >= 1, "a positive count")
    times = r.get("measurement", "times", _parse_times, "0.01:0.04:0.49",
                  describe="'start:step:stop' or a list")
    sigma0 = r.get("measurement", "sigma0", float, 0.0, lambda v: v >= 0,
                   "a nonnegative level")
    seed = r.get("measurement", "seed", int, 0, lambda v: v >= 0, "a nonnegative seed")
    data_n = r.get("data", "nodes_per_side", int, 2 * mesh_n + 1,
                   lambda v: v >= 2, "an integer >= 2")
    data_delta = r.get("data", "delta", float, delta, lambda v: v > 0, "a positive step")
    target = r.get("data", "target", str, "smooth-2d" if dim == 2 else "smooth-3d")
    lam = r.get("inverse", "lambda", _parse_lambda, "morozov",
                lambda v: v == "morozov" or v >= 0, "'morozov' or a nonnegative float")
    theta0 = r.get("inverse", "theta0", str, "midpoint",
                   lambda v: v in ("midpoint",), "'midpoint'")
    max_iter = r.get("inverse", "max_iterations", int, 50, lambda v: v >= 1,
                     "a positive count")

    for section, key in r.unknown_keys():
        _, line = entries[(section, key)]
        raise ConfigError(f"{path}:{line}: unknown entry [{section}] {key}")

    if isinstance(times, str):
        times = _parse_times(times)
    for t in times:
        if not 0 < t <= final_time + 1e-12:
            r.fail("measurement", "times", f"time {t} outside (0, {final_time}]")
        if abs(t / delta - round(t / delta)) > 1e-9:
            r.fail("measurement", "times", f"time {t} is not a multiple of delta={delta}")
        if abs(t / data_delta - round(t / data_delta)) > 1e-9:
            r.fail("measurement", "times", f"time {t} is not a multiple of the data delta")

    return RunConfig(
        dim=dim,
        flux_magnitude=flux,
        final_time=final_time,
        mesh_nodes_per_side=mesh_n,
        spline_count=m,
        spline_degree=s,
        interval=ParameterInterval(lo, hi),
        total_degree=n,
        keep_columns=keep,
        delta=delta,
        measurement_points=q_s,
        measurement_times=list(times),
        sigma0=sigma0,
        seed=seed,
        data_nodes_per_side=data_n,
        data_delta=data_delta,
        target=target,
        lam=lam,
        theta0_policy=theta0,
        max_iterations=max_iter,
        source=str(path),
    )
