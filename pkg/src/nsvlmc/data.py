"""Multi-task datasets: container, normalisation, toy generator and splits.

On disk every dataset uses one CSV layout::

    task,x_0,...,x_{D-1},y

with rows grouped by task in task order. Native Jura/EEG/Sarcos files are
converted into that layout by the ``convert_*`` helpers; the split protocol
for each benchmark lives in a JSON manifest under ``nsvlmc/manifests``.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Callable

import numpy as np
import pandas as pd

from .errors import EmptyTestSet, MissingFile, SchemaMismatch, SizeMismatch, ZeroVariance

SPLITS = ("jura", "eeg", "sarcos_a", "sarcos_b", "sarcos_c")


@dataclass
class Normalization:
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray

    def inputs(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.x_mean) / self.x_std

    def outputs(self, c: int, y) -> np.ndarray:
        return (np.asarray(y, dtype=np.float64) - self.y_mean[c]) / self.y_std[c]

    def denorm_outputs(self, c: int, mean, var=None):
        mean = np.asarray(mean) * self.y_std[c] + self.y_mean[c]
        if var is None:
            return mean
        return mean, np.asarray(var) * self.y_std[c] ** 2

    def to_dict(self) -> dict:
        return {k: np.asarray(v).tolist() for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalization":
        return cls(**{k: np.asarray(v, dtype=np.float64) for k, v in d.items()})


@dataclass
class MultiTaskDataset:
    """Heterotopic data: task ``c`` has inputs ``X[c]`` (N_c, D) and outputs ``y[c]``."""

    X: list
    y: list
    names: list = None
    norm: Normalization | None = None

    def __post_init__(self):
        self.X = [np.atleast_2d(np.asarray(x, dtype=np.float64)).reshape(len(yy), -1)
                  for x, yy in zip(self.X, self.y)]
        self.y = [np.asarray(yy, dtype=np.float64).reshape(-1) for yy in self.y]
        if self.names is None:
            self.names = [f"task{c}" for c in range(len(self.y))]
        if len(self.X) != len(self.y) or len(self.names) != len(self.y):
            raise SchemaMismatch("inputs, outputs and names must have one entry per task")
        dims = {x.shape[1] for x in self.X}
        if len(dims) > 1:
            raise SchemaMismatch(f"tasks disagree on input dimension: {sorted(dims)}")

    @property
    def n_tasks(self) -> int:
        return len(self.y)

    @property
    def input_dim(self) -> int:
        return self.X[0].shape[1]

    @property
    def sizes(self) -> list:
        return [len(y) for y in self.y]

    def pooled_inputs(self) -> np.ndarray:
        return np.concatenate(self.X, axis=0)

    def stacked(self):
        """Inputs, outputs and task index of all points, tasks stacked in order."""
        task = np.concatenate([np.full(n, c) for c, n in enumerate(self.sizes)])
        return self.pooled_inputs(), np.concatenate(self.y), task

    def subset(self, index: list) -> "MultiTaskDataset":
        return replace(self, X=[x[i] for x, i in zip(self.X, index)],
                       y=[y[i] for y, i in zip(self.y, index)])


@dataclass
class TestSplit:
    """Held-out points for the target tasks, in raw (unnormalised) units."""

    __test__ = False  # not a pytest class

    tasks: list
    X: list
    y: list

    def __post_init__(self):
        if not self.tasks:
            raise EmptyTestSet("test split has no tasks")


def normalize(data: MultiTaskDataset, pooled_outputs: bool = False) -> MultiTaskDataset:
    """Zero-mean unit-variance inputs (pooled over tasks) and outputs (per task).

    ``pooled_outputs`` uses one output mean/std for all tasks, for tasks that
    measure the same quantity on the same scale.
    """
    pooled = data.pooled_inputs()
    x_mean, x_std = pooled.mean(0), pooled.std(0)
    if np.any(x_std <= 0):
        raise ZeroVariance(f"constant input column(s): {np.flatnonzero(x_std <= 0).tolist()}")
    if pooled_outputs:
        all_y = np.concatenate(data.y)
        y_mean = np.full(data.n_tasks, all_y.mean())
        y_std = np.full(data.n_tasks, all_y.std())
    else:
        y_mean = np.array([y.mean() for y in data.y])
        y_std = np.array([y.std() for y in data.y])
    if np.any(y_std <= 0):
        raise ZeroVariance(f"constant output for task(s): {np.flatnonzero(y_std <= 0).tolist()}")
    norm = Normalization(x_mean, x_std, y_mean, y_std)
    return MultiTaskDataset(
        X=[norm.inputs(x) for x in data.X],
        y=[norm.outputs(c, y) for c, y in enumerate(data.y)],
        names=list(data.names), norm=norm)


def denormalize(data: MultiTaskDataset) -> MultiTaskDataset:
    n = data.norm
    return MultiTaskDataset(
        X=[x * n.x_std + n.x_mean for x in data.X],
        y=[n.denorm_outputs(c, y) for c, y in enumerate(data.y)],
        names=list(data.names))


# ---------------------------------------------------------------- toy case

TOY_MIXING = np.array([[0.5, -0.4, 0.6, 0.6],
                       [-0.3, 0.43, -0.5, 0.1],
                       [1.5, 0.0, 0.3, 0.6]])
TOY_NOISE_VAR = 0.04
TOY_SIZES = (100, 10, 100)
TOY_RANGE = (-5.0, 5.0)


def toy_latents(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    return np.stack([0.5 * np.sin(3 * x) + x,
                     3 * np.cos(x) - x,
                     2.5 * np.cos(5 * x - 1),
                     np.sin(1.5 * x)], axis=1)


def toy_truth(x) -> np.ndarray:
    """Noise-free outputs of the three toy tasks, shape (n, 3)."""
    return toy_latents(x) @ TOY_MIXING.T


def gen_toy(seed: int = 0, sizes=TOY_SIZES) -> tuple[MultiTaskDataset, Callable]:
    rng = np.random.default_rng(seed)
    X, Y = [], []
    for c, n in enumerate(sizes):
        x = rng.uniform(*TOY_RANGE, size=n)
        X.append(x[:, None])
        Y.append(toy_truth(x)[:, c] + rng.normal(0.0, np.sqrt(TOY_NOISE_VAR), size=n))
    return MultiTaskDataset(X, Y, names=["y1", "y2", "y3"]), toy_truth


def toy_test_split(n: int = 200) -> TestSplit:
    """Noise-free truth on an even grid over the toy input range."""
    x = np.linspace(*TOY_RANGE, n)
    f = toy_truth(x)
    return TestSplit(tasks=[0, 1, 2], X=[x[:, None]] * 3, y=[f[:, c] for c in range(3)])


# ---------------------------------------------------------------- CSV layout

def canonical_columns(d: int) -> list:
    return ["task"] + [f"x_{i}" for i in range(d)] + ["y"]


def write_csv(data: MultiTaskDataset, path) -> None:
    frames = []
    for name, x, y in zip(data.names, data.X, data.y):
        df = pd.DataFrame(x, columns=[f"x_{i}" for i in range(x.shape[1])])
        df.insert(0, "task", name)
        df["y"] = y
        frames.append(df)
    pd.concat(frames, ignore_index=True).to_csv(path, index=False, float_format="%.17g")


def read_csv(path) -> MultiTaskDataset:
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    df = pd.read_csv(path, dtype={"task": str}, float_precision="round_trip")
    cols = list(df.columns)
    if len(cols) < 3 or cols != canonical_columns(len(cols) - 2):
        raise SchemaMismatch(f"{path}: expected header task,x_0,...,x_(D-1),y; got {cols}")
    names = list(dict.fromkeys(df["task"]))
    xcols = cols[1:-1]
    X, Y = [], []
    for name in names:
        block = df[df["task"] == name]
        X.append(block[xcols].to_numpy(np.float64))
        Y.append(block["y"].to_numpy(np.float64))
    return MultiTaskDataset(X, Y, names=names)


def read_test_csv(path, names: list) -> TestSplit:
    data = read_csv(path)
    tasks = [names.index(n) for n in data.names]
    return TestSplit(tasks=tasks, X=data.X, y=data.y)


def write_test_csv(split: TestSplit, names: list, path) -> None:
    write_csv(MultiTaskDataset(split.X, split.y, names=[names[t] for t in split.tasks]), path)


# ---------------------------------------------------------------- benchmark splits

def load_manifest(name: str) -> dict:
    key = "sarcos" if name.startswith("sarcos") else name
    text = resources.files("nsvlmc.manifests").joinpath(f"{key}.json").read_text()
    return json.loads(text)


def _task_block(data: MultiTaskDataset, name: str, path) -> tuple:
    if name not in data.names:
        raise SchemaMismatch(f"{path}: task {name!r} missing (found {data.names})")
    c = data.names.index(name)
    return data.X[c], data.y[c]


def _read_checked(path: Path, manifest: dict, rows: int) -> MultiTaskDataset:
    data = read_csv(path)
    if data.input_dim != manifest["input_dim"]:
        raise SchemaMismatch(
            f"{path}: {data.input_dim} input columns, protocol needs {manifest['input_dim']}")
    for name, n in zip(data.names, data.sizes):
        if n != rows:
            raise SizeMismatch(f"{path}: task {name} has {n} rows, protocol needs {rows}")
    return data


def load_split(name: str, path) -> tuple[MultiTaskDataset, TestSplit]:
    """Train/test split of a benchmark from canonical CSV files in ``path``.

    Splits are positional (first rows train, last rows test) so the result
    is a pure function of the files.
    """
    if name not in SPLITS:
        raise ValueError(f"unknown split {name!r}; choose from {SPLITS}")
    manifest = load_manifest(name)
    protocol = manifest["splits"][name]
    path = Path(path)
    files = {k: path / v for k, v in manifest["files"].items()}
    for f in files.values():
        if not f.exists():
            raise MissingFile(str(f))
    full = _read_checked(files["train"], manifest, manifest["rows"]["train"])
    test_src = full
    if "test" in files:
        test_src = _read_checked(files["test"], manifest, manifest["rows"]["test"])

    X, Y, names, tasks, Xt, Yt = [], [], [], [], [], []
    for c, task in enumerate(protocol["tasks"]):
        x, y = _task_block(full, task["name"], files["train"])
        lo, hi = task["train"]
        X.append(x[lo:hi])
        Y.append(y[lo:hi])
        names.append(task["name"])
        if "test" in task:
            xt, yt = _task_block(test_src, task["name"], files.get("test", files["train"]))
            lo, hi = task["test"] if task["test"] != "all" else (0, len(yt))
            tasks.append(c)
            Xt.append(xt[lo:hi])
            Yt.append(yt[lo:hi])
    return MultiTaskDataset(X, Y, names=names), TestSplit(tasks, Xt, Yt)


# ---------------------------------------------------------------- native converters

def convert_jura(prediction_dat, validation_dat, out_csv) -> MultiTaskDataset:
    """Jura ``prediction.dat`` (259 rows) + ``validation.dat`` (100 rows) -> CSV.

    The 359 positions keep file order, so the last 100 rows of every task are
    the validation positions.
    """
    manifest = load_manifest("jura")
    frames = []
    for p in (prediction_dat, validation_dat):
        if not Path(p).exists():
            raise MissingFile(str(p))
        frames.append(pd.read_csv(p, sep=r"\s+"))
    df = pd.concat(frames, ignore_index=True)
    missing = [c for c in manifest["source_inputs"] + list(manifest["source_outputs"].values())
               if c not in df.columns]
    if missing:
        raise SchemaMismatch(f"Jura files lack columns {missing}")
    x = df[manifest["source_inputs"]].to_numpy(np.float64)
    names = list(manifest["source_outputs"])
    data = MultiTaskDataset([x] * len(names),
                            [df[manifest["source_outputs"][n]].to_numpy(np.float64) for n in names],
                            names=names)
    write_csv(data, out_csv)
    return data


_EEG_LINE = re.compile(r"^\s*\d+\s+(\S+)\s+(\d+)\s+(\S+)\s*$")


def convert_eeg(trial_file, out_csv) -> MultiTaskDataset:
    """One UCI EEG trial file (``<trial> <sensor> <sample> <value>`` lines) -> CSV.

    Inputs are the sample index scaled to [0, 1].
    """
    manifest = load_manifest("eeg")
    if not Path(trial_file).exists():
        raise MissingFile(str(trial_file))
    series: dict = {}
    for line in Path(trial_file).read_text().splitlines():
        if line.startswith("#"):
            continue
        m = _EEG_LINE.match(line)
        if m:
            series.setdefault(m.group(1), {})[int(m.group(2))] = float(m.group(3))
    names = list(manifest["source_outputs"])
    X, Y = [], []
    n = manifest["rows"]["train"]
    for name in names:
        s = series.get(manifest["source_outputs"][name])
        if s is None:
            raise SchemaMismatch(f"sensor {name} not in {trial_file}")
        if len(s) != n:
            raise SizeMismatch(f"sensor {name} has {len(s)} samples, expected {n}")
        idx = np.array(sorted(s))
        X.append((idx / (n - 1.0))[:, None])
        Y.append(np.array([s[i] for i in idx]))
    data = MultiTaskDataset(X, Y, names=names)
    write_csv(data, out_csv)
    return data


def convert_sarcos(train_mat, test_mat, out_dir) -> None:
    """GPML ``sarcos_inv.mat`` / ``sarcos_inv_test.mat`` -> two canonical CSVs."""
    from scipy.io import loadmat

    manifest = load_manifest("sarcos")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for key, src in (("train", train_mat), ("test", test_mat)):
        if not Path(src).exists():
            raise MissingFile(str(src))
        mats = {k: v for k, v in loadmat(src).items() if not k.startswith("__")}
        arr = np.asarray(next(iter(mats.values())), dtype=np.float64)
        d = manifest["input_dim"]
        if arr.shape[1] != d + 7:
            raise SchemaMismatch(f"{src}: expected {d + 7} columns, got {arr.shape[1]}")
        names = list(manifest["source_outputs"])
        data = MultiTaskDataset([arr[:, :d]] * len(names),
                                [arr[:, manifest["source_outputs"][n]] for n in names],
                                names=names)
        write_csv(data, out_dir / manifest["files"][key])
