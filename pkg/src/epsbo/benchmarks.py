"""Analytic test objectives, Latin hypercube designs, and external objectives.

The external-objective adapter talks to a user-supplied subprocess over a
line protocol (UTF-8, one JSON object per line, flushed after each line):

    -> {"hello": {"d": 2}}        handshake, once at startup
    <- {"ok": true}
    -> {"x": [0.25, -1.0]}        one request per evaluation
    <- {"y": 3.375}

The process is reused across evaluations; a dead process, a malformed or
non-finite reply, or a timeout raises ObjectiveError carrying the raw reply.
"""

from __future__ import annotations

import json
import math
import queue
import subprocess
import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .exceptions import ObjectiveError
from .gp import as_box

ACKLEY2_BOX = ((-10.0, 10.0), (-10.0, 10.0))
ROSENBROCK6_BOX = tuple(((-5.0, 10.0),) * 6)


@dataclass(frozen=True)
class ObjectiveSpec:
    """A named objective over a finite box, with its optimum when known.

    ``client`` is set for subprocess-backed objectives and must be closed
    when the spec is no longer needed.
    """

    name: str
    box: np.ndarray
    evaluator: Callable[[np.ndarray], float]
    f_star: float | None = None
    client: "ExternalObjective | None" = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "box", as_box(self.box))

    def close(self) -> None:
        if self.client is not None:
            self.client.close()

    @property
    def dim(self) -> int:
        return self.box.shape[0]

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.box[:, 0]) and np.all(x <= self.box[:, 1]))


@dataclass(frozen=True)
class NoiseSpec:
    """Standard deviation of additive Gaussian observation noise."""

    noise_sd: float = 0.0

    def __post_init__(self) -> None:
        if self.noise_sd < 0:
            raise ValueError(f"noise_sd must be >= 0, got {self.noise_sd}")


def _require_in_box(x: np.ndarray, box, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    b = as_box(box)
    if x.size != b.shape[0]:
        raise ValueError(f"{name} expects dimension {b.shape[0]}, got {x.size}")
    if np.any(x < b[:, 0]) or np.any(x > b[:, 1]):
        raise ValueError(f"{name}: point {x.tolist()} outside the search box")
    return x


def ackley2(x) -> float:
    """Two-dimensional Ackley function on [-10, 10]^2 (a=20, b=0.2, c=2*pi).

    Global minimum 0 at the origin; the terms are grouped so the value
    there is exactly zero in floating point.
    """
    x = _require_in_box(x, ACKLEY2_BOX, "ackley2")
    a, b, c = 20.0, 0.2, 2.0 * math.pi
    term1 = a * (1.0 - math.exp(-b * math.sqrt(0.5 * float(np.sum(x * x)))))
    term2 = math.e - math.exp(0.5 * float(np.sum(np.cos(c * x))))
    return term1 + term2


def rosenbrock6(x) -> float:
    """Six-dimensional Rosenbrock function on [-5, 10]^6, minimum 0 at ones."""
    x = _require_in_box(x, ROSENBROCK6_BOX, "rosenbrock6")
    return float(np.sum(100.0 * (x[1:] - x[:-1] ** 2) ** 2 + (x[:-1] - 1.0) ** 2))


_BENCHMARKS = {
    "ackley2": lambda: ObjectiveSpec("ackley2", ACKLEY2_BOX, ackley2, f_star=0.0),
    "rosenbrock6": lambda: ObjectiveSpec("rosenbrock6", ROSENBROCK6_BOX, rosenbrock6, f_star=0.0),
}


def list_benchmarks() -> tuple[str, ...]:
    return tuple(sorted(_BENCHMARKS))


def benchmark(name: str) -> ObjectiveSpec:
    try:
        return _BENCHMARKS[name]()
    except KeyError:
        raise ValueError(f"unknown benchmark {name!r}; available: {list_benchmarks()}") from None


def lhs_design(d: int, n: int, box, rng: np.random.Generator) -> np.ndarray:
    """Latin hypercube design: one point per axis stratum, uniform within it."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    b = as_box(box)
    if b.shape[0] != d:
        raise ValueError(f"box has {b.shape[0]} dimensions, expected {d}")
    unit = np.empty((n, d))
    for j in range(d):
        unit[:, j] = rng.permutation(n)
    unit = (unit + rng.random((n, d))) / n
    return b[:, 0] + unit * (b[:, 1] - b[:, 0])


def observe(
    spec: ObjectiveSpec,
    noise: NoiseSpec,
    x,
    rng: np.random.Generator,
    y_scale: float = 1.0,
) -> float:
    """Evaluate the objective and add Gaussian noise of SD ``noise_sd * y_scale``.

    ``y_scale`` carries the current output standard deviation when the
    caller works with z-scored observations, so the configured noise level
    is interpreted in standardized units.  With zero noise no random draw
    is consumed.
    """
    x = _require_in_box(x, spec.box, spec.name)
    try:
        y = float(spec.evaluator(x))
    except ObjectiveError:
        raise
    except Exception as exc:
        raise ObjectiveError(f"objective {spec.name} failed at {x.tolist()}: {exc}") from exc
    if not math.isfinite(y):
        raise ObjectiveError(f"objective {spec.name} returned {y} at {x.tolist()}")
    if noise.noise_sd > 0:
        y += noise.noise_sd * y_scale * rng.standard_normal()
    return y


class ExternalObjective:
    """Line-protocol client around a subprocess evaluating the objective.

    One request may be in flight at a time; parallel trials must each spawn
    their own process.  Use as a context manager or call ``close``.
    """

    def __init__(self, command: Sequence[str], dim: int, timeout: float = 60.0):
        self.command = tuple(command)
        self.dim = int(dim)
        self.timeout = float(timeout)
        try:
            self._proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                encoding="utf-8",
                bufsize=1,
            )
        except OSError as exc:
            raise ObjectiveError(f"could not start {self.command}: {exc}") from exc
        self._lines: queue.Queue[str | None] = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()
        reply = self._round_trip({"hello": {"d": self.dim}})
        if reply.get("ok") is not True:
            self.close()
            raise ObjectiveError(f"handshake rejected: {reply!r}")

    def _pump(self) -> None:
        assert self._proc.stdout is not None
        for line in self._proc.stdout:
            self._lines.put(line)
        self._lines.put(None)

    def _round_trip(self, message: dict) -> dict:
        try:
            assert self._proc.stdin is not None
            self._proc.stdin.write(json.dumps(message) + "\n")
            self._proc.stdin.flush()
        except (OSError, ValueError) as exc:
            raise ObjectiveError(f"objective process is gone: {exc}") from exc
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            raise ObjectiveError(
                f"objective process did not answer within {self.timeout} s"
            ) from None
        if line is None:
            raise ObjectiveError("objective process closed its output (exited?)")
        try:
            reply = json.loads(line)
        except json.JSONDecodeError:
            raise ObjectiveError(f"malformed reply from objective process: {line!r}") from None
        if not isinstance(reply, dict):
            raise ObjectiveError(f"malformed reply from objective process: {line!r}")
        return reply

    def evaluate(self, x) -> float:
        x = np.asarray(x, dtype=float).ravel()
        reply = self._round_trip({"x": [float(v) for v in x]})
        if "y" not in reply:
            raise ObjectiveError(f"reply without a value: {reply!r}")
        try:
            y = float(reply["y"])
        except (TypeError, ValueError):
            raise ObjectiveError(f"non-numeric value in reply: {reply!r}") from None
        if not math.isfinite(y):
            raise ObjectiveError(f"non-finite value in reply: {reply!r}")
        return y

    def close(self) -> None:
        proc = self._proc
        if proc.stdin is not None:
            try:
                proc.stdin.close()
            except OSError:
                pass
        try:
            proc.wait(timeout=2.0)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()

    def __enter__(self) -> "ExternalObjective":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


def external_objective(
    command: Sequence[str],
    box,
    timeout: float = 60.0,
    name: str = "external",
    f_star: float | None = None,
) -> ObjectiveSpec:
    """Objective backed by a subprocess speaking the line protocol.

    The returned spec holds the process client; call ``spec.close()`` when
    the objective is no longer needed.
    """
    b = as_box(box)
    client = ExternalObjective(command, b.shape[0], timeout=timeout)
    return ObjectiveSpec(name, b, client.evaluate, f_star=f_star, client=client)
