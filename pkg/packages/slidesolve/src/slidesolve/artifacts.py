from __future__ import annotations

import os
import csv
import json
import logging
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Any, Iterable, Iterator, TextIO

import numpy as np

from .errors import *
from .grid import TimeGrid, Samples, as_values


_log = logging.getLogger(__name__)


@contextmanager
def atomic_writer(path: str | os.PathLike) -> Iterator[TextIO]:
    """
    Write into a temporary file in the target directory and rename it over `path` on success.
    Readers never observe a partially written file.
    """
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with tempfile.NamedTemporaryFile(
            "w", delete=False, dir=directory, prefix=f".{os.path.basename(path)}.", suffix=".tmp",
            newline="", encoding="utf-8") as f:
        tmp_path = f.name
        try:
            yield f
        except BaseException:
            f.close()
            try:
                os.remove(tmp_path)
            except OSError:
                pass  # already removed
            raise
    os.replace(tmp_path, path)


def write_json(path: str | os.PathLike, data: Any) -> None:
    with atomic_writer(path) as f:
        json.dump(data, f, indent=2)
        f.write("\n")
    _log.debug("Wrote JSON", extra={"path": os.fspath(path)})


def read_json(path: str | os.PathLike) -> Any:
    if not os.path.exists(path):
        raise FileNotFoundError(f"file `{os.fspath(path)}` does not exist")
    with open(path, "rt", encoding="utf-8") as f:
        return json.load(f)


def trajectory_header(n: int) -> list[str]:
    return ["t", *(f"x{i}" for i in range(1, n + 1)), *(f"z{i}" for i in range(1, n + 1))]


def write_trajectory_csv(path: str | os.PathLike, grid: TimeGrid, x: Samples, z: Samples) -> None:
    """ Header `t,x1..xn,z1..zn`, one row per node; floats use the shortest repr that reads back exactly. """
    x, z = as_values(x), as_values(z)
    if x.shape != z.shape or x.ndim != 2 or x.shape[0] != grid.nodes:
        raise DimensionError(f"trajectory shapes {x.shape} and {z.shape} do not match {grid.nodes} nodes")
    with atomic_writer(path) as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(trajectory_header(x.shape[1]))
        for t, xk, zk in zip(grid.times, x, z):
            writer.writerow([repr(float(v)) for v in (t, *xk, *zk)])
    _log.debug("Wrote trajectory", extra={"path": os.fspath(path), "rows": grid.nodes})


@dataclass(kw_only=True, frozen=True, eq=False)
class TrajectoryTable:
    times: np.ndarray
    x: np.ndarray
    z: np.ndarray


def read_trajectory_csv(path: str | os.PathLike) -> TrajectoryTable:
    if not os.path.exists(path):
        raise FileNotFoundError(f"trajectory file `{os.fspath(path)}` does not exist")
    with open(path, "rt", encoding="utf-8", newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise ProblemValidationError(f"trajectory file `{os.fspath(path)}` is empty")
    header, body = rows[0], rows[1:]
    n, odd = divmod(len(header) - 1, 2)
    if odd or n < 1 or header != trajectory_header(n):
        raise ProblemValidationError(f"unexpected trajectory header {header}", field_path="/0")
    try:
        data = np.array([[float(v) for v in row] for row in body], dtype=float).reshape(len(body), len(header))
    except ValueError as e:
        raise ProblemValidationError(f"malformed trajectory file `{os.fspath(path)}`: {e}") from e
    return TrajectoryTable(times=data[:, 0], x=data[:, 1:n + 1], z=data[:, n + 1:])


TRACE_COLUMNS = ("iter", "phase", "phi", "chi", "omega", "total", "grad_norm", "step", "evaluations")


def write_trace_csv(path: str | os.PathLike, records: Iterable[dict[str, Any]]) -> None:
    with atomic_writer(path) as f:
        writer = csv.DictWriter(f, fieldnames=TRACE_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for rec in records:
            writer.writerow({k: "" if rec.get(k) is None else rec[k] for k in TRACE_COLUMNS})


@dataclass(kw_only=True, frozen=True)
class RunArtifacts:
    out_dir: str

    @property
    def trajectory(self) -> str:
        return os.path.join(self.out_dir, "trajectory.csv")

    @property
    def report(self) -> str:
        return os.path.join(self.out_dir, "report.json")

    @property
    def verify(self) -> str:
        return os.path.join(self.out_dir, "verify.json")

    @property
    def trace(self) -> str:
        return os.path.join(self.out_dir, "trace.csv")

    def paths(self) -> list[str]:
        return [self.trajectory, self.report, self.verify, self.trace]
