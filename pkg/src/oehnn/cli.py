"""Experiment driver: dataset generation, training, evaluation, simulation.

Subcommands: generate-data, train, evaluate, simulate, gradcheck. Every option
lives in a key-value config file and can be overridden by a flag of the same
name; unknown config keys are rejected. Exit codes: 0 success, 1 runtime
failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

import oehnn
from oehnn.data import (
    DataGenerationError,
    DatasetFormatError,
    GenerationProtocol,
    generate,
    read_csv,
    write_csv,
)
from oehnn.dynamics import SystemSpec, coupled_system, duffing_system, field_fn, structure_matrices
from oehnn.integrate import IntegrationError, rollout
from oehnn.netmodel import (
    ModelFormatError,
    flatten_params,
    h_grad_x,
    h_value,
    init_hamiltonian_net,
    load_model,
    save_model,
    with_params,
)
from oehnn.signals import MultisineSpec, NoiseSpec, multisine_value, sample_phases
from oehnn.evaluate import (
    evaluate,
    model_field,
    state_labels,
    write_comparison_csv,
    write_metrics_report,
)
from oehnn.train import (
    TrainConfig,
    TrainingError,
    fit,
    simulation_loss,
    simulation_loss_grad,
    write_history_csv,
)
from oehnn.data import Trajectory

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

SYSTEM_DEFAULTS = {
    # per-system defaults: masses, stiffnesses, measurement-noise variance and
    # excitation amplitude that keep the softening springs inside their wells
    # often enough for rejection sampling to succeed.
    "duffing": {"masses": (1.0,), "stiffnesses": (1.0,), "noise_variance": 0.1, "amplitude": 0.15},
    "coupled": {
        "masses": (0.5, 0.5),
        "stiffnesses": (1.0, 1.0),
        "noise_variance": 0.05,
        "amplitude": 0.1,
    },
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """Full experiment definition; None fields resolve to per-system defaults."""

    system: str = "duffing"
    masses: tuple[float, ...] | None = None
    stiffnesses: tuple[float, ...] | None = None
    cubic: bool = True
    n_realizations: int = 25
    n_samples: int = 500
    ts: float = 0.01
    t_start: float = 5.0
    n_train: int = 15
    n_val: int = 5
    n_test: int = 5
    harmonics: int = 20
    f0: float = 0.1
    amplitude: float | None = None
    noise_variance: float | None = None
    init_range: float = 0.5
    q_max: float = 5.0
    max_retries: int = 50
    master_seed: int = 0
    model: str = "oe-hnn"
    n_hidden: int = 200
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    max_epochs: int = 5000
    patience: int = 500
    chunk_length: int | None = None
    train_seed: int = 0
    derivative_source: str = "fd"
    anchor: str = "true"
    reference: str = "true"
    workers: int = 0

    def resolved(self) -> "ExperimentConfig":
        if self.system not in SYSTEM_DEFAULTS:
            raise ConfigError(f"unknown system {self.system!r}, expected duffing or coupled")
        defaults = SYSTEM_DEFAULTS[self.system]
        out = dataclasses.replace(self)
        if out.masses is None:
            out.masses = defaults["masses"]
        if out.stiffnesses is None:
            out.stiffnesses = defaults["stiffnesses"]
        if out.noise_variance is None:
            out.noise_variance = defaults["noise_variance"]
        if out.amplitude is None:
            out.amplitude = defaults["amplitude"]
        return out

    def system_spec(self) -> SystemSpec:
        cfg = self.resolved()
        if cfg.system == "duffing":
            return duffing_system(cfg.masses[0], cfg.stiffnesses[0], cfg.cubic)
        return coupled_system(tuple(cfg.masses), tuple(cfg.stiffnesses), cfg.cubic)

    def protocol(self) -> GenerationProtocol:
        cfg = self.resolved()
        return GenerationProtocol(
            n_realizations=cfg.n_realizations,
            n_samples=cfg.n_samples,
            ts=cfg.ts,
            t_start=cfg.t_start,
            split=(cfg.n_train, cfg.n_val, cfg.n_test),
            harmonics=cfg.harmonics,
            f0=cfg.f0,
            amplitude=cfg.amplitude,
            init_range=cfg.init_range,
            q_max=cfg.q_max,
            max_retries=cfg.max_retries,
        )

    def noise(self) -> NoiseSpec:
        cfg = self.resolved()
        return NoiseSpec(variance=cfg.noise_variance, seed=cfg.master_seed)

    def train_config(self) -> TrainConfig:
        cfg = self.resolved()
        return TrainConfig(
            learning_rate=cfg.learning_rate,
            beta1=cfg.beta1,
            beta2=cfg.beta2,
            epsilon=cfg.epsilon,
            max_epochs=cfg.max_epochs,
            patience=cfg.patience,
            loss="simulation" if cfg.model == "oe-hnn" else "derivative-matching",
            chunk_length=cfg.chunk_length,
            n_hidden=cfg.n_hidden,
            seed=cfg.train_seed,
            derivative_source=cfg.derivative_source,
            anchor=cfg.anchor,
        )


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    ftype = _FIELD_TYPES[key]
    lowered = raw.lower()
    if "tuple" in ftype:
        if lowered in ("none", ""):
            return None
        return tuple(float(v) for v in raw.split(","))
    if "int | None" in ftype:
        return None if lowered == "none" else int(raw)
    if "float | None" in ftype:
        return None if lowered == "none" else float(raw)
    if ftype == "bool":
        if lowered in ("true", "1", "yes"):
            return True
        if lowered in ("false", "0", "no"):
            return False
        raise ConfigError(f"key {key!r}: expected a boolean, got {raw!r}")
    if ftype == "int":
        return int(raw)
    if ftype == "float":
        return float(raw)
    return raw


def load_config_file(path) -> dict:
    """Parse `key = value` lines; '#' starts a comment. Unknown keys are errors."""
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in _FIELD_TYPES:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            try:
                values[key] = _parse_value(key, value)
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from exc
    return values


def build_config(args) -> ExperimentConfig:
    values = {}
    if getattr(args, "config", None):
        values.update(load_config_file(args.config))
    for key in _FIELD_TYPES:
        flag_value = getattr(args, f"cfg_{key}", None)
        if flag_value is not None:
            values[key] = _parse_value(key, flag_value)
    try:
        return ExperimentConfig(**values).resolved()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def write_config_echo(cfg: ExperimentConfig, directory, command: str) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = [f"# effective config echoed by 'oehnn {command}' (tool version {oehnn.__version__})"]
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if isinstance(value, tuple):
            value = ",".join(f"{v:.17g}" if isinstance(v, float) else str(v) for v in value)
        elif isinstance(value, float):
            value = f"{value:.17g}"
        elif value is None:
            value = "none"
        lines.append(f"{f.name} = {value}")
    (directory / "config.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key-value config file")
    group = parser.add_argument_group("config overrides (same keys as the config file)")
    for key in _FIELD_TYPES:
        group.add_argument(
            f"--{key.replace('_', '-')}", dest=f"cfg_{key}", metavar="V", default=None
        )


# ---------------------------------------------------------------------------
# Subcommands.
# ---------------------------------------------------------------------------


def cmd_generate(args) -> int:
    cfg = build_config(args)
    out = Path(args.out)
    dataset = generate(cfg.system_spec(), cfg.protocol(), cfg.noise(), cfg.master_seed)
    write_csv(dataset, out)
    write_config_echo(cfg, out, "generate-data")
    print(
        f"wrote {cfg.n_realizations} trajectories ({cfg.n_train} train / "
        f"{cfg.n_val} validation / {cfg.n_test} test) to {out}"
    )
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = build_config(args)
    dataset = read_csv(args.data)
    train_cfg = cfg.train_config()
    if cfg.model in ("hnn", "mlp"):
        source = (
            "finite differences of the measured outputs"
            if cfg.derivative_source == "fd"
            else "stored noiseless derivatives"
        )
        print(f"derivative targets for {cfg.model}: {source}")
    result = fit(cfg.model, dataset, train_cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_model(
        result.model,
        out / "model.txt",
        kind=cfg.model,
        n_inputs=dataset.system.n_inputs,
        seed=cfg.train_seed,
    )
    write_history_csv(result.history, out / "history.csv")
    write_config_echo(cfg, out, "train")
    final = result.history[-1]
    print(
        f"trained {cfg.model} for {int(final[0])} epochs; "
        f"best validation loss {result.best_val_loss:.6g} at epoch {result.best_epoch}"
    )
    print(f"model file: {out / 'model.txt'}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = build_config(args)
    dataset = read_csv(args.data)
    labels = state_labels(dataset.system.n_masses)
    S = structure_matrices(dataset.system)
    metrics_list = []
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, model_path in enumerate(args.models):
        saved = load_model(model_path)
        if saved.n_states != dataset.system.n_states:
            raise ConfigError(
                f"{model_path}: model has {saved.n_states} states but the dataset "
                f"system has {dataset.system.n_states}"
            )
        metrics = evaluate(
            model_field(saved.model, S),
            dataset.test,
            reference=cfg.reference,
            anchor=cfg.anchor,
            kind=saved.kind,
        )
        metrics_list.append(metrics)
        write_metrics_report(metrics, out / f"report_{i}_{saved.kind}.txt", labels)
    write_comparison_csv(metrics_list, out / "comparison.csv", labels)
    write_config_echo(cfg, out, "evaluate")
    print("method," + ",".join(labels))
    for metrics in metrics_list:
        print(metrics.kind + "," + ",".join(f"{v:.4f}" for v in metrics.per_state_rmse))
    if any(m.n_diverged for m in metrics_list):
        print("warning: some rollouts diverged; see the per-model reports")
    return EXIT_OK


def _parse_x0(text: str | None, d: int) -> np.ndarray:
    if text is None:
        return np.zeros(d)
    values = np.array([float(v) for v in text.split(",")])
    if values.size != d:
        raise ConfigError(f"--x0 must have {d} comma-separated values, got {values.size}")
    return values


def cmd_simulate(args) -> int:
    cfg = build_config(args)
    if args.like_dataset is not None:
        return _simulate_like_dataset(args, cfg)
    if (args.model_file is None) == (not args.true_system):
        raise ConfigError("choose exactly one of --model-file or --true-system")
    if args.true_system:
        spec = cfg.system_spec()
        field = field_fn(spec)
        d = spec.n_states
        m = spec.n_inputs
        kind = "true-system"
    else:
        saved = load_model(args.model_file)
        d = saved.n_states
        m = saved.n_inputs
        S_model = structure_matrices(cfg.system_spec())
        if S_model.n_states != d:
            raise ConfigError(
                f"model expects {d} states but the configured system has {S_model.n_states}"
            )
        field = model_field(saved.model, S_model)
        kind = saved.kind
    x0 = _parse_x0(args.x0, d)
    n_steps = args.steps
    t = np.arange(n_steps) * cfg.ts
    if args.input == "zero":
        u = np.zeros((n_steps, m))
    else:
        rng = np.random.default_rng(args.phase_seed)
        u = np.stack(
            [
                multisine_value(
                    t,
                    MultisineSpec(cfg.harmonics, cfg.f0, sample_phases(cfg.harmonics, rng), cfg.amplitude),
                )
                for _ in range(m)
            ],
            axis=-1,
        )
    diverged_at = None
    try:
        states = rollout(field, x0, u, cfg.ts)
    except IntegrationError as exc:
        diverged_at = exc.step_index
        states = None
    _write_sim_csv(args.out, t, u, states, d, diverged_at)
    if diverged_at is not None:
        print(f"simulation diverged at step {diverged_at} (flagged in {args.out})")
    else:
        print(f"simulated {n_steps} samples of {kind} -> {args.out}")
    return EXIT_OK


def _simulate_like_dataset(args, cfg: ExperimentConfig) -> int:
    """Regenerate the noiseless truth of one dataset realization bit-exactly."""
    from oehnn.data import _simulate_realization  # shared recipe, same seeds

    dataset_dir = Path(args.like_dataset)
    if not (dataset_dir / "manifest.txt").exists():
        raise ConfigError(f"{dataset_dir} does not contain a dataset manifest")
    stored = read_csv(dataset_dir)
    if not 0 <= args.realization < stored.protocol.n_realizations:
        raise ConfigError(
            f"--realization must be in [0, {stored.protocol.n_realizations})"
        )
    t, u, x_true, _, _, attempt = _simulate_realization(
        stored.system, stored.protocol, stored.master_seed, args.realization
    )
    _write_sim_csv(args.out, t, u, x_true, stored.system.n_states, None)
    print(
        f"regenerated realization {args.realization} (attempt {attempt}) "
        f"of {dataset_dir} -> {args.out}"
    )
    return EXIT_OK


def _write_sim_csv(path, t, u, states, d, diverged_at) -> None:
    m = u.shape[1]
    lines = []
    if diverged_at is not None:
        lines.append(f"# diverged_at_step = {diverged_at}")
    header = ["t"] + [f"u_{j}" for j in range(m)] + [f"x_{j}" for j in range(d)]
    lines.append(",".join(header))
    n_rows = len(t) if states is not None else 0
    for k in range(n_rows):
        row = [f"{t[k]:.17g}"]
        row += [f"{v:.17g}" for v in u[k]]
        row += [f"{v:.17g}" for v in states[k]]
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _fd_gradient(loss_fn, theta: np.ndarray, step: float) -> np.ndarray:
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        up = theta.copy()
        up[i] += step
        down = theta.copy()
        down[i] -= step
        grad[i] = (loss_fn(up) - loss_fn(down)) / (2.0 * step)
    return grad


def cmd_gradcheck(args) -> int:
    """User-runnable diagnostic: analytic gradients against finite differences."""
    rng = np.random.default_rng(args.seed)
    spec = duffing_system()
    S = structure_matrices(spec)
    flip = -1.0 if args.inject_fault == "sign-flip" else 1.0
    failures = 0

    # energy-gradient check on random nets
    worst = 0.0
    for _ in range(args.cases):
        net = init_hamiltonian_net(2, 8, rng)
        net = with_params(net, rng.uniform(-1.0, 1.0, flatten_params(net).size))
        x = rng.uniform(-1.0, 1.0, 2)
        analytic = flip * h_grad_x(net, x)
        fd = np.zeros(2)
        for i in range(2):
            e = np.zeros(2)
            e[i] = 1e-6
            fd[i] = (h_value(net, x + e) - h_value(net, x - e)) / 2e-6
        denom = np.maximum(np.abs(fd), 1e-8)
        worst = max(worst, float(np.max(np.abs(analytic - fd) / denom)))
    ok = worst < 1e-6
    failures += not ok
    print(f"energy gradient vs finite differences: max rel err {worst:.3e} "
          f"[{'PASS' if ok else 'FAIL'}]")

    # simulation-loss gradient, short rollouts, small net
    for n_steps in args.steps:
        net = init_hamiltonian_net(2, 4, rng)
        t = np.arange(n_steps + 1) * 0.01
        traj = Trajectory(
            t=t,
            u=rng.normal(0.0, 1.0, (n_steps + 1, 1)),
            y=rng.normal(0.0, 0.5, (n_steps + 1, 2)),
        )
        _, grad = simulation_loss_grad(net, S, traj)
        grad = flip * grad
        theta = flatten_params(net)
        fd = _fd_gradient(lambda th: simulation_loss(with_params(net, th), S, traj), theta, 1e-5)
        mask = np.maximum(np.abs(grad), np.abs(fd)) > 1e-8
        rel = np.abs(grad - fd)[mask] / np.maximum(np.abs(grad), np.abs(fd))[mask]
        worst = float(rel.max()) if mask.any() else 0.0
        ok = worst < 1e-5
        failures += not ok
        print(f"simulation-loss gradient, {n_steps:4d} steps: max rel err {worst:.3e} "
              f"[{'PASS' if ok else 'FAIL'}]")

    # directional derivative through a long rollout at full width
    net = init_hamiltonian_net(2, args.n_hidden, rng)
    n_steps = args.long_steps
    t = np.arange(n_steps + 1) * 0.01
    traj = Trajectory(
        t=t,
        u=rng.normal(0.0, 1.0, (n_steps + 1, 1)),
        y=rng.normal(0.0, 0.5, (n_steps + 1, 2)),
    )
    _, grad = simulation_loss_grad(net, S, traj)
    theta = flatten_params(net)
    direction = rng.normal(size=theta.size)
    direction /= np.linalg.norm(direction)
    analytic = flip * float(grad @ direction)
    eps = 1e-6
    fd = (
        simulation_loss(with_params(net, theta + eps * direction), S, traj)
        - simulation_loss(with_params(net, theta - eps * direction), S, traj)
    ) / (2.0 * eps)
    rel = abs(analytic - fd) / max(abs(analytic), abs(fd), 1e-12)
    ok = rel < 1e-4
    failures += not ok
    print(f"directional derivative, {n_steps} steps, width {args.n_hidden}: "
          f"rel err {rel:.3e} [{'PASS' if ok else 'FAIL'}]")

    print("gradcheck:", "PASS" if failures == 0 else f"FAIL ({failures} checks)")
    return EXIT_OK if failures == 0 else EXIT_RUNTIME


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oehnn",
        description="Identify input-driven Hamiltonian systems from noisy measurements.",
    )
    parser.add_argument("--version", action="version", version=f"oehnn {oehnn.__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("generate-data", help="simulate and write a benchmark dataset")
    p_gen.add_argument("--out", required=True, help="output dataset directory")
    _add_config_flags(p_gen)
    p_gen.set_defaults(func=cmd_generate)

    p_train = sub.add_parser("train", help="fit a model on a generated dataset")
    p_train.add_argument("--data", required=True, help="dataset directory")
    p_train.add_argument("--out", required=True, help="output directory for model and history")
    _add_config_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("evaluate", help="simulate models on the test split and report RMSE")
    p_eval.add_argument("--data", required=True, help="dataset directory")
    p_eval.add_argument("--models", required=True, nargs="+", help="model files to compare")
    p_eval.add_argument("--out", required=True, help="output directory for reports")
    _add_config_flags(p_eval)
    p_eval.set_defaults(func=cmd_evaluate)

    p_sim = sub.add_parser("simulate", help="roll a model or the true system forward")
    p_sim.add_argument("--model-file", help="trained model file")
    p_sim.add_argument("--true-system", action="store_true", help="use the configured true system")
    p_sim.add_argument("--like-dataset", help="dataset directory to reproduce a realization from")
    p_sim.add_argument("--realization", type=int, default=0,
                       help="realization index for --like-dataset")
    p_sim.add_argument("--x0", help="comma-separated initial state (default zeros)")
    p_sim.add_argument("--steps", type=int, default=500, help="number of samples to simulate")
    p_sim.add_argument("--input", choices=("multisine", "zero"), default="multisine")
    p_sim.add_argument("--phase-seed", type=int, default=0, help="seed for multisine phases")
    p_sim.add_argument("--out", required=True, help="output trajectory CSV")
    _add_config_flags(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_grad = sub.add_parser("gradcheck", help="verify analytic gradients against finite differences")
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.add_argument("--cases", type=int, default=100, help="random energy-gradient cases")
    p_grad.add_argument("--steps", type=int, nargs="+", default=[2, 10, 50],
                        help="rollout lengths for the full-gradient check")
    p_grad.add_argument("--long-steps", type=int, default=500,
                        help="rollout length for the directional check")
    p_grad.add_argument("--n-hidden", type=int, default=200,
                        help="hidden width for the directional check")
    p_grad.add_argument("--inject-fault", choices=("none", "sign-flip"), default="none",
                        help=argparse.SUPPRESS)
    p_grad.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DatasetFormatError, ModelFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataGenerationError, TrainingError, IntegrationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
