"""Benchmark dataset generation, derivative-target estimation, CSV persistence.

Each realization owns an RNG stream derived from (master_seed, realization,
attempt), so generation is reproducible and embarrassingly parallel, and
escape retries never perturb other realizations.
"""

from __future__ import annotations

import configparser
import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from oehnn.dynamics import SystemSpec, field_fn
from oehnn.integrate import IntegrationError, rollout
from oehnn.signals import MultisineSpec, NoiseSpec, multisine_value, sample_phases

__all__ = [
    "Trajectory",
    "Dataset",
    "GenerationProtocol",
    "DataGenerationError",
    "DatasetFormatError",
    "generate",
    "fd_derivatives",
    "write_csv",
    "read_csv",
]

SPLITS = ("train", "validation", "test")


class DataGenerationError(RuntimeError):
    pass


class DatasetFormatError(ValueError):
    pass


@dataclass
class Trajectory:
    """One recorded input/output window, optionally with its noiseless truth."""

    t: np.ndarray  # (N,)
    u: np.ndarray  # (N, m)
    y: np.ndarray  # (N, n_y)
    x_true: np.ndarray | None = None  # (N, 2n)
    dx_true: np.ndarray | None = None  # (N, 2n)
    realization: int = 0
    attempt: int = 0

    def __post_init__(self):
        n = len(self.t)
        for name in ("u", "y", "x_true", "dx_true"):
            arr = getattr(self, name)
            if arr is not None and arr.shape[0] != n:
                raise ValueError(f"{name} has {arr.shape[0]} rows, expected {n}")

    @property
    def n_samples(self) -> int:
        return len(self.t)

    @property
    def ts(self) -> float:
        return float(self.t[1] - self.t[0])


@dataclass(frozen=True)
class GenerationProtocol:
    """Dataset recording protocol. Defaults reproduce the benchmark recipe:

    25 input realizations, 500 samples recorded on t in [5, 10) at Ts = 0.01,
    split 15/5/5, 20-harmonic multisine with base frequency 0.1 Hz, initial
    states uniform in [-0.5, 0.5] per coordinate. The default per-component
    amplitude is well below 1: the softening spring's potential well is only
    0.25 deep, and stronger forcing ejects the mass on essentially every
    realization, which no retry cap can absorb.
    """

    n_realizations: int = 25
    n_samples: int = 500
    ts: float = 0.01
    t_start: float = 5.0
    split: tuple[int, int, int] = (15, 5, 5)
    harmonics: int = 20
    f0: float = 0.1
    amplitude: float = 0.15
    init_range: float = 0.5
    q_max: float = 5.0
    max_retries: int = 50

    def __post_init__(self):
        if self.n_realizations < 1 or self.n_samples < 1:
            raise ValueError("need at least one realization and one sample")
        if self.ts <= 0:
            raise ValueError("sampling period must be positive")
        if self.t_start < 0:
            raise ValueError("recording start must be non-negative")
        if sum(self.split) != self.n_realizations:
            raise ValueError(
                f"split {self.split} does not sum to n_realizations={self.n_realizations}"
            )
        if self.max_retries < 1:
            raise ValueError("max_retries must be at least 1")


@dataclass
class Dataset:
    train: list[Trajectory]
    validation: list[Trajectory]
    test: list[Trajectory]
    system: SystemSpec
    protocol: GenerationProtocol
    noise: NoiseSpec
    master_seed: int = 0

    @property
    def ts(self) -> float:
        return self.protocol.ts

    def split(self, name: str) -> list[Trajectory]:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, "validation" if name == "validation" else name)

    def all_trajectories(self) -> list[Trajectory]:
        return [*self.train, *self.validation, *self.test]


def _realization_rng(master_seed: int, realization: int, attempt: int) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=(realization, attempt))
    return np.random.default_rng(seq)


def _simulate_realization(system, protocol, master_seed, realization):
    """Simulate one accepted realization, resampling on escape or divergence."""
    truth = field_fn(system)
    d = system.n_states
    n_pre = int(round(protocol.t_start / protocol.ts))
    n_total = n_pre + protocol.n_samples
    t_grid = np.arange(n_total) * protocol.ts
    for attempt in range(protocol.max_retries):
        rng = _realization_rng(master_seed, realization, attempt)
        phases = np.stack(
            [sample_phases(protocol.harmonics, rng) for _ in range(system.n_inputs)]
        )
        x0 = rng.uniform(-protocol.init_range, protocol.init_range, size=d)
        u_grid = np.stack(
            [
                multisine_value(
                    t_grid,
                    MultisineSpec(protocol.harmonics, protocol.f0, ph, protocol.amplitude),
                )
                for ph in phases
            ],
            axis=-1,
        )
        try:
            x_grid = rollout(truth, x0, u_grid, protocol.ts)
        except IntegrationError:
            continue
        if np.max(np.abs(x_grid[:, : system.n_masses])) > protocol.q_max:
            continue
        sl = slice(n_pre, n_total)
        x_win = x_grid[sl]
        u_win = u_grid[sl]
        dx_win = truth(x_win, u_win)
        return t_grid[sl].copy(), u_win.copy(), x_win, dx_win, rng, attempt
    raise DataGenerationError(
        f"realization {realization}: no bounded trajectory within "
        f"{protocol.max_retries} attempts (|q| <= {protocol.q_max}); "
        "reduce the input amplitude or raise q_max"
    )


def generate(
    system: SystemSpec,
    protocol: GenerationProtocol | None = None,
    noise: NoiseSpec | None = None,
    master_seed: int = 0,
) -> Dataset:
    """Simulate the full recording protocol and assemble the split dataset.

    Per realization: fresh phases and initial state, truth simulated from
    t = 0, the window [t_start, t_start + N*Ts) recorded with stored noiseless
    states and derivatives, then measurement noise added to form y.
    """
    protocol = protocol or GenerationProtocol()
    noise = noise if noise is not None else NoiseSpec()
    trajectories = []
    for realization in range(protocol.n_realizations):
        t, u, x_true, dx_true, rng, attempt = _simulate_realization(
            system, protocol, master_seed, realization
        )
        v = rng.normal(0.0, np.sqrt(noise.variance), size=x_true.shape)
        trajectories.append(
            Trajectory(
                t=t,
                u=u,
                y=x_true + v,
                x_true=x_true,
                dx_true=dx_true,
                realization=realization,
                attempt=attempt,
            )
        )
    n_train, n_val, _ = protocol.split
    return Dataset(
        train=trajectories[:n_train],
        validation=trajectories[n_train : n_train + n_val],
        test=trajectories[n_train + n_val :],
        system=system,
        protocol=protocol,
        noise=noise,
        master_seed=master_seed,
    )


def fd_derivatives(y: np.ndarray, ts: float) -> np.ndarray:
    """Second-order finite-difference derivative estimates along axis 0.

    Central differences at interior samples, one-sided three-point stencils
    at both ends. Exact for quadratics in the interior.
    """
    y = np.asarray(y, dtype=float)
    if y.shape[0] < 3:
        raise ValueError("need at least 3 samples for second-order differences")
    dy = np.empty_like(y)
    dy[1:-1] = (y[2:] - y[:-2]) / (2.0 * ts)
    dy[0] = (-3.0 * y[0] + 4.0 * y[1] - y[2]) / (2.0 * ts)
    dy[-1] = (3.0 * y[-1] - 4.0 * y[-2] + y[-3]) / (2.0 * ts)
    return dy


# ---------------------------------------------------------------------------
# CSV persistence: one file per trajectory plus an INI manifest. Floats are
# written as 17-significant-digit decimals, which round-trip float64 exactly.
# ---------------------------------------------------------------------------

MANIFEST_NAME = "manifest.txt"


def _g17(v: float) -> str:
    return f"{float(v):.17g}"


def _traj_header(m: int, d: int, with_truth: bool) -> list[str]:
    cols = ["t"]
    cols += [f"u_{j}" for j in range(m)]
    cols += [f"y_{j}" for j in range(d)]
    if with_truth:
        cols += [f"x_{j}" for j in range(d)]
        cols += [f"dx_{j}" for j in range(d)]
    return cols


def write_csv(dataset: Dataset, directory) -> None:
    """Write one CSV per trajectory plus the manifest into `directory`."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    m = dataset.system.n_inputs
    d = dataset.system.n_states

    manifest = configparser.ConfigParser()
    manifest["system"] = {
        "n_masses": str(dataset.system.n_masses),
        "masses": ",".join(_g17(v) for v in dataset.system.masses),
        "stiffnesses": ",".join(_g17(v) for v in dataset.system.stiffnesses),
        "input_map": ",".join(str(i) for i in dataset.system.input_map),
        "cubic": str(dataset.system.cubic).lower(),
    }
    p = dataset.protocol
    manifest["protocol"] = {
        "n_realizations": str(p.n_realizations),
        "n_samples": str(p.n_samples),
        "ts": _g17(p.ts),
        "t_start": _g17(p.t_start),
        "split": ",".join(str(s) for s in p.split),
        "harmonics": str(p.harmonics),
        "f0": _g17(p.f0),
        "amplitude": _g17(p.amplitude),
        "init_range": _g17(p.init_range),
        "q_max": _g17(p.q_max),
        "max_retries": str(p.max_retries),
    }
    manifest["noise"] = {
        "variance": _g17(dataset.noise.variance),
        "seed": str(dataset.noise.seed),
    }
    manifest["seeds"] = {"master_seed": str(dataset.master_seed)}
    manifest["trajectories"] = {}

    index = 0
    for split_name in SPLITS:
        for traj in dataset.split(split_name):
            fname = f"traj_{index:03d}.csv"
            with_truth = traj.x_true is not None
            with open(directory / fname, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(_traj_header(m, d, with_truth))
                for k in range(traj.n_samples):
                    row = [_g17(traj.t[k])]
                    row += [_g17(v) for v in traj.u[k]]
                    row += [_g17(v) for v in traj.y[k]]
                    if with_truth:
                        row += [_g17(v) for v in traj.x_true[k]]
                        row += [_g17(v) for v in traj.dx_true[k]]
                    writer.writerow(row)
            manifest["trajectories"][str(index)] = (
                f"{fname},{split_name},{traj.realization},{traj.attempt}"
            )
            index += 1

    with open(directory / MANIFEST_NAME, "w", encoding="utf-8") as fh:
        manifest.write(fh)


def _read_trajectory(path: Path, m: int, d: int, n_samples: int, realization: int, attempt: int):
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetFormatError(f"{path}: file is empty") from None
        if header == _traj_header(m, d, True):
            with_truth = True
        elif header == _traj_header(m, d, False):
            with_truth = False
        else:
            raise DatasetFormatError(f"{path}: unexpected column header {header}")
        n_cols = len(header)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != n_cols:
                raise DatasetFormatError(
                    f"{path}:{lineno}: expected {n_cols} columns, found {len(row)}"
                )
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise DatasetFormatError(f"{path}:{lineno}: {exc}") from exc
    if len(rows) != n_samples:
        raise DatasetFormatError(
            f"{path}: contains {len(rows)} samples, manifest expects {n_samples}"
        )
    data = np.array(rows)
    t = data[:, 0]
    u = data[:, 1 : 1 + m]
    y = data[:, 1 + m : 1 + m + d]
    x_true = dx_true = None
    if with_truth:
        x_true = data[:, 1 + m + d : 1 + m + 2 * d]
        dx_true = data[:, 1 + m + 2 * d :]
    return Trajectory(
        t=t, u=u, y=y, x_true=x_true, dx_true=dx_true, realization=realization, attempt=attempt
    )


def read_csv(directory) -> Dataset:
    """Rebuild a dataset from the files produced by write_csv, bit-exactly."""
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.exists():
        raise DatasetFormatError(f"missing manifest {manifest_path}")
    manifest = configparser.ConfigParser()
    try:
        manifest.read(manifest_path)
    except configparser.Error as exc:
        raise DatasetFormatError(f"{manifest_path}: {exc}") from exc
    for section in ("system", "protocol", "noise", "seeds", "trajectories"):
        if section not in manifest:
            raise DatasetFormatError(f"{manifest_path}: missing section [{section}]")
    try:
        sys_sec = manifest["system"]
        system = SystemSpec(
            n_masses=sys_sec.getint("n_masses"),
            masses=tuple(float(v) for v in sys_sec["masses"].split(",")),
            stiffnesses=tuple(float(v) for v in sys_sec["stiffnesses"].split(",")),
            input_map=tuple(int(v) for v in sys_sec["input_map"].split(",")),
            cubic=sys_sec.getboolean("cubic"),
        )
        proto_sec = manifest["protocol"]
        protocol = GenerationProtocol(
            n_realizations=proto_sec.getint("n_realizations"),
            n_samples=proto_sec.getint("n_samples"),
            ts=proto_sec.getfloat("ts"),
            t_start=proto_sec.getfloat("t_start"),
            split=tuple(int(v) for v in proto_sec["split"].split(",")),
            harmonics=proto_sec.getint("harmonics"),
            f0=proto_sec.getfloat("f0"),
            amplitude=proto_sec.getfloat("amplitude"),
            init_range=proto_sec.getfloat("init_range"),
            q_max=proto_sec.getfloat("q_max"),
            max_retries=proto_sec.getint("max_retries"),
        )
        noise = NoiseSpec(
            variance=manifest["noise"].getfloat("variance"),
            seed=manifest["noise"].getint("seed"),
        )
        master_seed = manifest["seeds"].getint("master_seed")
    except (KeyError, ValueError, TypeError) as exc:
        raise DatasetFormatError(f"{manifest_path}: bad manifest entry: {exc}") from exc

    splits: dict[str, list[Trajectory]] = {name: [] for name in SPLITS}
    entries = sorted(manifest["trajectories"].items(), key=lambda kv: int(kv[0]))
    for _, entry in entries:
        parts = entry.split(",")
        if len(parts) != 4:
            raise DatasetFormatError(
                f"{manifest_path}: trajectory entry {entry!r} must be file,split,realization,attempt"
            )
        fname, split_name, realization, attempt = parts
        if split_name not in SPLITS:
            raise DatasetFormatError(f"{manifest_path}: unknown split {split_name!r}")
        path = directory / fname
        if not path.exists():
            raise DatasetFormatError(f"missing trajectory file {path}")
        splits[split_name].append(
            _read_trajectory(
                path,
                system.n_inputs,
                system.n_states,
                protocol.n_samples,
                int(realization),
                int(attempt),
            )
        )
    return Dataset(
        train=splits["train"],
        validation=splits["validation"],
        test=splits["test"],
        system=system,
        protocol=protocol,
        noise=noise,
        master_seed=master_seed,
    )
