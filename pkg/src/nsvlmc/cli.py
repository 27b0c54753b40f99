"""Command-line interface: ``nsvlmc <subcommand> [options]``.

Settings come from built-in per-case defaults, then an optional JSON config
file (``--config``), then command-line flags; later sources win. Every run
directory stores the fully resolved config next to its results.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import tempfile
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .data import (SPLITS, MultiTaskDataset, TestSplit, gen_toy, load_split, normalize,
                   read_csv, read_test_csv, toy_test_split, write_csv, write_test_csv)
from .errors import ConfigError, InvalidSpec, NsvlmcError
from .models import VARIANCE_MODES, ModelSpec, build_model, canonical_variant
from .numerics import RngStream
from .predict import DEFAULT_PRED_SAMPLES, evaluate, predict_raw
from .reference import published
from .training import TrainConfig, train

log = logging.getLogger("nsvlmc")

CASES = ("toy",) + SPLITS + ("fluid", "custom")

# per-case settings of the benchmark protocol; m_per_latent None = every distinct input
CASE_DEFAULTS = {
    "toy": dict(q=2, h=100, m_per_latent=25, iterations=10000, minibatch=None,
                length_scale=0.1),
    "jura": dict(q=2, h=20, m_per_latent=None, iterations=10000, minibatch=32,
                 length_scale=0.1),
    "eeg": dict(q=4, h=20, m_per_latent=None, iterations=10000, minibatch=64,
                length_scale=0.1),
    "sarcos_a": dict(q=2, h=10, m_per_latent=100, iterations=20000, minibatch=32,
                     length_scale=0.5),
    "sarcos_b": dict(q=2, h=10, m_per_latent=100, iterations=20000, minibatch=32,
                     length_scale=0.5),
    "sarcos_c": dict(q=2, h=100, m_per_latent=100, iterations=20000, minibatch=32,
                     length_scale=0.5),
    "fluid": dict(q=2, h=10, m_per_latent=500, iterations=10000, minibatch=32,
                  length_scale=0.1),
    "custom": dict(q=2, h=20, m_per_latent=None, iterations=10000, minibatch=32,
                   length_scale=0.1),
}


@dataclass
class RunConfig:
    case: str = "toy"
    variant: str = "nsvlmc"
    data_dir: str | None = None
    train_csv: str | None = None
    test_csv: str | None = None
    data_seed: int = 0
    q: int | None = None
    h: int | None = None
    m_per_latent: int | None = None
    activation: str = "tanh"
    length_scale: float | None = None
    iterations: int | None = None
    minibatch: int | None = None
    learning_rate: float = 5e-3
    s_train: int = 10
    variance_term_mode: str = "exact_cross"
    n_pred_samples: int = DEFAULT_PRED_SAMPLES
    n_repeats: int = 10
    seed: int = 0
    log_every: int = 100
    output_dir: str = "runs"
    explicit: list = field(default_factory=list, repr=False)

    def resolve(self) -> "RunConfig":
        """Fill unset fields from the case defaults and validate."""
        if self.case not in CASES:
            raise InvalidSpec(f"unknown case {self.case!r}; choose from {CASES}")
        self.variant = canonical_variant(self.variant)
        for k, v in CASE_DEFAULTS[self.case].items():
            if getattr(self, k) is None and k not in self.explicit:
                setattr(self, k, v)
        if self.n_repeats < 1:
            raise InvalidSpec("n_repeats must be >= 1")
        if self.n_pred_samples < 2:
            raise InvalidSpec("n_pred_samples must be >= 2")
        if self.variance_term_mode not in VARIANCE_MODES:
            raise InvalidSpec(f"variance_term_mode must be one of {VARIANCE_MODES}")
        if self.case in SPLITS and not self.data_dir:
            raise InvalidSpec(f"case {self.case} needs data_dir")
        if self.case == "custom" and not self.train_csv:
            raise InvalidSpec("case custom needs train_csv")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("explicit")
        return d

    def model_spec(self) -> ModelSpec:
        return ModelSpec(self.variant, q=self.q, h=self.h, m_per_latent=self.m_per_latent,
                         activation=self.activation, length_scale=self.length_scale)

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, iterations=self.iterations,
                           minibatch=self.minibatch, s_train=self.s_train, seed=seed,
                           log_every=self.log_every,
                           variance_term_mode=self.variance_term_mode)


def load_config(path: str | None, overrides: dict) -> RunConfig:
    values: dict = {}
    if path:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {p} not found")
        try:
            values = json.loads(p.read_text())
        except json.JSONDecodeError as err:
            raise ConfigError(f"{p}: {err}") from err
        if not isinstance(values, dict):
            raise ConfigError(f"{p}: expected a JSON object")
    known = {f.name for f in fields(RunConfig)} - {"explicit"}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    values.update({k: v for k, v in overrides.items() if v is not None})
    cfg = RunConfig(**values)
    # keys given as null in the file stay null rather than taking case defaults
    cfg.explicit = [k for k in values if values[k] is None]
    return cfg.resolve()


# ---------------------------------------------------------------- data plumbing

def load_data(cfg: RunConfig) -> tuple[MultiTaskDataset, TestSplit]:
    if cfg.case == "toy":
        data, _ = gen_toy(cfg.data_seed)
        return data, toy_test_split()
    if cfg.case in SPLITS:
        return load_split(cfg.case, cfg.data_dir)
    data = read_csv(cfg.train_csv)
    if not cfg.test_csv:
        raise InvalidSpec(f"case {cfg.case} needs test_csv")
    return data, read_test_csv(cfg.test_csv, data.names)


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_json(path: Path, obj) -> None:
    _atomic_write(Path(path), json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_trace(path: Path, trace: list) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "objective", "wall_clock"])
        for row in trace:
            w.writerow([row.step, repr(row.objective), f"{row.wall_clock:.6f}"])


def write_curves(path: Path, names: list, preds: dict, test: TestSplit) -> None:
    """Predictive curves: inputs, mean and the 95% band mean +- 1.96 sd."""
    path.parent.mkdir(parents=True, exist_ok=True)
    d = test.X[0].shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["task"] + [f"x_{i}" for i in range(d)] + ["mean", "var", "lower", "upper"])
        for c, x in zip(test.tasks, test.X):
            pred = preds[names[c]]
            sd = np.sqrt(pred.var)
            for i in range(len(x)):
                w.writerow([names[c]] + [repr(float(v)) for v in x[i]] +
                           [repr(float(pred.mean[i])), repr(float(pred.var[i])),
                            repr(float(pred.mean[i] - 1.96 * sd[i])),
                            repr(float(pred.mean[i] + 1.96 * sd[i]))])


def aggregate(records: list) -> list:
    """Mean and sample standard deviation over seeds, per task and metric."""
    out = []
    for task in dict.fromkeys(r["task"] for r in records):
        rows = [r for r in records if r["task"] == task]
        entry = {"task": task, "n_seeds": len(rows)}
        for key in ("mae", "smse", "nll"):
            vals = np.array([r[key] for r in rows], dtype=np.float64)
            entry[key] = float(vals.mean())
            entry[key + "_std"] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        out.append(entry)
    return out


# ---------------------------------------------------------------- run steps

def train_one(cfg: RunConfig, data: MultiTaskDataset, seed: int):
    norm_data = normalize(data)
    state = build_model(cfg.model_spec(), norm_data, seed)
    result = train(state, norm_data, cfg.train_config(seed))
    result.state.meta["task_names"] = list(data.names)
    return result


def run_seed(cfg: RunConfig, data, test, seed: int, out: Path) -> list:
    result = train_one(cfg, data, seed)
    records, preds = evaluate(result.state, test, data.names, seed, cfg.n_pred_samples)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.state, out / "checkpoint.npz", cfg.to_dict())
    write_trace(out / "trace.csv", result.trace)
    if data.input_dim == 1:
        write_curves(out / "curves.csv", data.names, preds, test)
    write_json(out / "metrics.json", records)
    return records


def run_experiment(cfg: RunConfig) -> Path:
    """Train/predict/evaluate ``n_repeats`` seeds and aggregate into ``output_dir``."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "config.json", cfg.to_dict())
    data, test = load_data(cfg)
    records = []
    for i in range(cfg.n_repeats):
        seed = cfg.seed + i
        log.info("seed %d (%d/%d)", seed, i + 1, cfg.n_repeats)
        records += run_seed(cfg, data, test, seed, out / f"seed_{seed}")
    write_json(out / "metrics.json", records)
    write_json(out / "summary.json", {"case": cfg.case, "variant": cfg.variant,
                                      "tasks": aggregate(records)})
    return out


def format_summary(summary: dict) -> str:
    ref = published(summary.get("case", ""), summary.get("variant", ""))
    lines = [f"case {summary.get('case')}  variant {summary.get('variant')}",
             f"{'task':<12}{'MAE':>22}{'SMSE':>22}{'NLL':>22}"]
    for t in summary["tasks"]:
        cells = "".join(f"{t[k]:>12.4f} ± {t[k + '_std']:<7.4f}" for k in ("mae", "smse", "nll"))
        lines.append(f"{t['task']:<12}{cells}")
    if ref:
        parts = [f"{k.upper()} {m:.4f}" + (f" ± {s:.4f}" if s is not None else "")
                 for k, (m, s) in ref.items()]
        lines.append("published: " + ", ".join(parts))
    return "\n".join(lines)


# ---------------------------------------------------------------- subcommands

def _config_overrides(args) -> dict:
    keys = ("case", "variant", "data_dir", "train_csv", "test_csv", "data_seed", "q", "h",
            "m_per_latent", "activation", "length_scale", "iterations", "minibatch",
            "learning_rate", "s_train", "variance_term_mode", "n_pred_samples", "n_repeats",
            "seed", "log_every", "output_dir")
    return {k: getattr(args, k, None) for k in keys}


def cmd_toy_gen(args) -> int:
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    data, _ = gen_toy(args.seed)
    write_csv(data, out / "train.csv")
    write_test_csv(toy_test_split(args.n_test), data.names, out / "test.csv")
    print(out / "train.csv")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config, _config_overrides(args))
    data, _ = load_data(cfg)
    result = train_one(cfg, data, cfg.seed)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "config.json", cfg.to_dict())
    save_checkpoint(result.state, out / "checkpoint.npz", cfg.to_dict())
    write_trace(out / "trace.csv", result.trace)
    print(out / "checkpoint.npz")
    return 0


def _checkpoint_names(state) -> list:
    return state.meta.get("task_names") or [f"task{c}" for c in range(state.n_tasks)]


def cmd_predict(args) -> int:
    state, saved = load_checkpoint(args.checkpoint)
    names = _checkpoint_names(state)
    if args.inputs:
        test = read_test_csv(args.inputs, names)
    else:
        if state.input_dim != 1:
            raise InvalidSpec("--grid only works for 1-D inputs; pass --inputs")
        lo, hi, n = args.grid
        x = np.linspace(float(lo), float(hi), int(n))[:, None]
        test = TestSplit(list(range(state.n_tasks)), [x] * state.n_tasks,
                         [np.zeros(len(x))] * state.n_tasks)
    n_samples = args.n_pred_samples or saved.get("n_pred_samples", DEFAULT_PRED_SAMPLES)
    rng = RngStream(state.seed if args.seed is None else args.seed, 2)
    preds = {names[c]: predict_raw(state, x, n_samples, rng).task(c)
             for c, x in zip(test.tasks, test.X)}
    write_curves(Path(args.output), names, preds, test)
    print(args.output)
    return 0


def cmd_evaluate(args) -> int:
    state, saved = load_checkpoint(args.checkpoint)
    names = _checkpoint_names(state)
    test = read_test_csv(args.test_csv, names)
    seed = state.seed if args.seed is None else args.seed
    n_samples = args.n_pred_samples or saved.get("n_pred_samples", DEFAULT_PRED_SAMPLES)
    records, _ = evaluate(state, test, names, seed, n_samples)
    text = json.dumps(records, indent=2, sort_keys=True)
    if args.output:
        write_json(Path(args.output), records)
    print(text)
    return 0


def cmd_run(args) -> int:
    cfg = load_config(args.config, _config_overrides(args))
    out = run_experiment(cfg)
    print(format_summary(json.loads((out / "summary.json").read_text())))
    return 0


def cmd_report(args) -> int:
    for bundle in args.bundles:
        path = Path(bundle) / "summary.json"
        if not path.exists():
            raise ConfigError(f"{bundle}: no summary.json (is it a run directory?)")
        print(format_summary(json.loads(path.read_text())))
    return 0


def cmd_pod(args) -> int:
    from .pod import ForecastConfig, read_snapshots, synthetic_two_case, two_case_forecast
    from .predict import compute_metrics, PredictiveSummary

    if args.case1 and args.case2:
        s1, s2 = read_snapshots(args.case1), read_snapshots(args.case2)
    elif args.case1 or args.case2:
        raise ConfigError("pass both --case1 and --case2, or neither for synthetic data")
    else:
        cases = synthetic_two_case(args.synthetic_seed, n_time=args.n_time)
        s1, s2 = cases.case1, cases.case2
    d = CASE_DEFAULTS["fluid"]
    cfg = ForecastConfig(
        variant=canonical_variant(args.variant or "nsvlmc"),
        q=args.q or d["q"], h=args.h or d["h"],
        m_per_latent=args.m_per_latent or d["m_per_latent"],
        iterations=d["iterations"] if args.iterations is None else args.iterations,
        minibatch=args.minibatch or d["minibatch"], n_pred_samples=args.n_pred_samples or 100,
        rank=args.rank, n_observed=args.n_observed, closed_loop=not args.open_loop,
        extra={"length_scale": args.length_scale or d["length_scale"]})
    seed = args.seed or 0
    results = two_case_forecast(s1, s2, cfg, seed)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    with open(out / "forecast.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mode", "step", "truth", "multi_mean", "multi_var", "single_mean",
                    "single_var"])
        for r in results:
            for t in range(len(r.truth)):
                w.writerow([r.mode + 1, cfg.n_observed + t, repr(float(r.truth[t])),
                            repr(float(r.multi_mean[t])), repr(float(r.multi_var[t])),
                            repr(float(r.single_mean[t])), repr(float(r.single_var[t]))])
            for label, m, v in (("multi", r.multi_mean, r.multi_var),
                                ("single", r.single_mean, r.single_var)):
                met = compute_metrics(PredictiveSummary(m, v, cfg.n_pred_samples), r.truth,
                                      r.train_var)
                rec = met.record(f"a{r.mode + 1}", seed)
                rec["model"] = cfg.variant if label == "multi" else "gp"
                records.append(rec)
    write_json(out / "metrics.json", records)
    write_json(out / "config.json", {**asdict(cfg), "seed": seed})
    for rec in records:
        print(f"{rec['task']:<4}{rec['model']:<10} SMSE {rec['smse']:.4f}  NLL {rec['nll']:.4f}")
    return 0


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with RunConfig fields")
    p.add_argument("--case", choices=CASES)
    p.add_argument("--variant")
    p.add_argument("--data-dir", dest="data_dir")
    p.add_argument("--train-csv", dest="train_csv")
    p.add_argument("--test-csv", dest="test_csv")
    p.add_argument("--data-seed", dest="data_seed", type=int)
    p.add_argument("--q", type=int)
    p.add_argument("--h", type=int)
    p.add_argument("--m-per-latent", dest="m_per_latent", type=int)
    p.add_argument("--activation")
    p.add_argument("--length-scale", dest="length_scale", type=float)
    p.add_argument("--iterations", type=int)
    p.add_argument("--minibatch", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--s-train", dest="s_train", type=int)
    p.add_argument("--variance-term-mode", dest="variance_term_mode", choices=VARIANCE_MODES)
    p.add_argument("--n-pred-samples", dest="n_pred_samples", type=int)
    p.add_argument("--n-repeats", dest="n_repeats", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--log-every", dest="log_every", type=int)
    p.add_argument("--output-dir", dest="output_dir")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nsvlmc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("toy-gen", help="write the three-task toy data as CSV")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-test", dest="n_test", type=int, default=200)
    p.add_argument("--output-dir", dest="output_dir", default="toy")
    p.set_defaults(func=cmd_toy_gen)

    p = sub.add_parser("train", help="train one seed and write a checkpoint")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("run", help="train, predict and evaluate n_repeats seeds")
    _add_config_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("predict", help="predictive curves from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--inputs", help="CSV in the task,x_0,...,y layout (y ignored)")
    g.add_argument("--grid", nargs=3, metavar=("LO", "HI", "N"), help="1-D grid for all tasks")
    p.add_argument("--n-pred-samples", dest="n_pred_samples", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="MAE/SMSE/NLL of a checkpoint on a test CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test-csv", dest="test_csv", required=True)
    p.add_argument("--n-pred-samples", dest="n_pred_samples", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--output")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("pod", help="POD + two-case coefficient forecasting")
    p.add_argument("--case1", help="data-rich snapshots (.csv or binary)")
    p.add_argument("--case2", help="data-poor snapshots (.csv or binary)")
    p.add_argument("--synthetic-seed", dest="synthetic_seed", type=int, default=0)
    p.add_argument("--n-time", dest="n_time", type=int, default=80)
    p.add_argument("--rank", type=int, default=5)
    p.add_argument("--n-observed", dest="n_observed", type=int, default=20)
    p.add_argument("--open-loop", dest="open_loop", action="store_true")
    p.add_argument("--variant")
    p.add_argument("--q", type=int)
    p.add_argument("--h", type=int)
    p.add_argument("--m-per-latent", dest="m_per_latent", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--minibatch", type=int)
    p.add_argument("--length-scale", dest="length_scale", type=float)
    p.add_argument("--n-pred-samples", dest="n_pred_samples", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--output-dir", dest="output_dir", default="pod_run")
    p.set_defaults(func=cmd_pod)

    p = sub.add_parser("report", help="print aggregated tables of run directories")
    p.add_argument("bundles", nargs="+")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NsvlmcError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.exit_code
    except (ValueError, FileNotFoundError) as err:
        # stray validation errors from libraries count as configuration problems
        print(f"error: {err}", file=sys.stderr)
        return ConfigError.exit_code


if __name__ == "__main__":
    sys.exit(main())
