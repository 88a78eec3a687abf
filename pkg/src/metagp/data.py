"""Synthetic generators, CSV ingestion and dataset partitioning.

All randomness is seeded through the spec objects, so every generator and
partitioner reruns bit-exactly.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .exceptions import InvalidK, MissingValue, ParseError, UnknownColumn
from .likelihoods import FAMILIES, LikelihoodSpec

__all__ = ["Dataset", "SinGeneratorSpec", "gen_synthetic_sin", "gen_two_moons",
           "gen_correlated_tasks", "load_csv_dataset", "save_csv_dataset",
           "partition_dataset", "ColumnSchema"]


@dataclass
class Dataset:
    """Inputs, outputs and the likelihood family the outputs live in."""

    X: np.ndarray
    y: np.ndarray
    likelihood: str = "gaussian"
    name: str = "dataset"

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError("X and y row counts differ")
        if self.likelihood not in FAMILIES:
            raise ValueError(f"unknown likelihood tag {self.likelihood!r}")
        if self.likelihood == "bernoulli" and not np.all((self.y == 0) | (self.y == 1)):
            raise ValueError("bernoulli targets must lie in {0, 1}")

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def input_dim(self):
        return self.X.shape[1]

    def likelihood_spec(self):
        return LikelihoodSpec(self.likelihood) if self.likelihood != "gaussian" \
            else LikelihoodSpec("gaussian")


@dataclass
class SinGeneratorSpec:
    """Sum-of-sines signal with uniform inputs and additive Gaussian noise."""

    amplitudes: tuple = (2.0, 1.0, 0.5)
    frequencies: tuple = (0.5, 2.0, 5.0)
    phases: tuple = (0.0, 1.0, 2.0)
    noise_std: float = 0.5
    x_range: tuple = (-10.0, 10.0)
    seed: int = 0

    def __post_init__(self):
        if not (len(self.amplitudes) == len(self.frequencies) == len(self.phases)):
            raise ValueError("amplitudes, frequencies and phases must share a length")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.x_range[0] >= self.x_range[1]:
            raise ValueError("x_range must be increasing")

    def signal(self, x):
        x = np.asarray(x, dtype=np.float64)
        out = np.zeros_like(x)
        for a, w, ph in zip(self.amplitudes, self.frequencies, self.phases):
            out += a * np.sin(w * x + ph)
        return out


def gen_synthetic_sin(spec, n):
    """n points of y = sum_j a_j sin(w_j x + phi_j) + eps on the 1-D range."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(spec.seed)
    lo, hi = spec.x_range
    x = rng.uniform(lo, hi, size=n)
    y = spec.signal(x) + spec.noise_std * rng.standard_normal(n)
    return Dataset(x[:, None], y, "gaussian", name="synthetic_sin")


def gen_two_moons(n, noise_std=0.2, seed=0):
    """Two interleaved half-circle classes in 2-D (binary labels)."""
    if n < 2:
        raise ValueError("n must be >= 2")
    rng = np.random.default_rng(seed)
    n0 = n // 2
    n1 = n - n0
    t0 = rng.uniform(0.0, np.pi, size=n0)
    t1 = rng.uniform(0.0, np.pi, size=n1)
    X = np.vstack([
        np.column_stack([np.cos(t0), np.sin(t0)]),
        np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)]),
    ])
    X += noise_std * rng.standard_normal(X.shape)
    y = np.concatenate([np.zeros(n0), np.ones(n1)])
    perm = rng.permutation(n)
    return Dataset(X[perm], y[perm], "bernoulli", name="two_moons")


def gen_correlated_tasks(spec, n, seed=0):
    """Two regression tasks driven by one shared latent signal.

    Both tasks observe the same sum-of-sines function at their own input
    locations with independent noise, so their generative correlation is 1;
    useful for probing whether a multi-output ensemble recovers it.
    """
    rng = np.random.default_rng(seed)
    lo, hi = spec.x_range
    out = []
    for task in range(2):
        x = rng.uniform(lo, hi, size=n)
        y = spec.signal(x) + spec.noise_std * rng.standard_normal(n)
        out.append(Dataset(x[:, None], y, "gaussian", name=f"task{task}"))
    return out


@dataclass
class ColumnSchema:
    """Column roles for CSV ingestion."""

    inputs: tuple
    target: str
    likelihood: str = "gaussian"


def load_csv_dataset(path, schema):
    """Parse a headed CSV into a Dataset; missing or non-numeric cells fail."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        for col in list(schema.inputs) + [schema.target]:
            if col not in header:
                raise UnknownColumn(f"{path}: column {col!r} not in header {header}")
        idx = [header.index(c) for c in schema.inputs]
        yidx = header.index(schema.target)
        rows, ys = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            vals = []
            for col, j in zip(list(schema.inputs) + [schema.target], idx + [yidx]):
                cell = row[j].strip() if j < len(row) else ""
                if cell == "":
                    raise MissingValue(f"{path}:{lineno}: empty cell in column {col!r}")
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise ParseError(
                        f"{path}:{lineno}: non-numeric value {cell!r} in column {col!r}"
                    ) from None
            rows.append(vals[:-1])
            ys.append(vals[-1])
    if not rows:
        raise ParseError(f"{path}: no data rows")
    return Dataset(np.array(rows), np.array(ys), schema.likelihood,
                   name=str(path))


def save_csv_dataset(data, path, input_names=None, target_name="y"):
    """Write a Dataset as headed CSV with round-trip-exact decimals."""
    p = data.input_dim
    names = list(input_names) if input_names else [f"x{i + 1}" for i in range(p)]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names + [target_name])
        for xi, yi in zip(data.X, data.y):
            writer.writerow([repr(float(v)) for v in xi] + [repr(float(yi))])


def partition_dataset(data, k, mode="contiguous_by_input", seed=0):
    """Split into K disjoint shards covering every row exactly once.

    contiguous_by_input sorts by the first input dimension then slices;
    random shuffles with the seed first. Shard sizes differ by at most one.
    """
    n = data.n
    if not 1 <= k <= n:
        raise InvalidK(f"K = {k} outside 1..{n}")
    if mode == "contiguous_by_input":
        order = np.argsort(data.X[:, 0], kind="stable")
    elif mode == "random":
        order = np.random.default_rng(seed).permutation(n)
    else:
        raise ValueError(f"unknown partition mode {mode!r}")
    bounds = np.linspace(0, n, k + 1).astype(int)
    shards = []
    for i in range(k):
        idx = order[bounds[i]:bounds[i + 1]]
        shards.append(Dataset(data.X[idx], data.y[idx], data.likelihood,
                              name=f"{data.name}_shard{i}"))
    return shards
