"""Synthetic Gaussian-mixture classification data and expert scenarios.

Two expert regimes are generated: a label split of one mixture (each expert
sees half the classes) and two distinct mixtures over the same input space.
Everything is a pure function of the scenario seed.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .net import LabeledDataset, ProbeSet
from .store import atomic_write_text

KIND_LABEL_SPLIT = "label_split"
KIND_DISTINCT = "distinct_datasets"
SCENARIO_KINDS = (KIND_LABEL_SPLIT, KIND_DISTINCT)


@dataclass(frozen=True)
class MixtureSpec:
    """Isotropic Gaussian blobs: one mean per class, shared noise scale."""

    means: np.ndarray        # (K, s)
    sigma: float
    samples_per_class: int

    def __post_init__(self):
        means = np.asarray(self.means, dtype=np.float64)
        if means.ndim != 2 or means.shape[0] < 2:
            raise ValueError("need at least two class means")
        for i in range(means.shape[0]):
            for j in range(i + 1, means.shape[0]):
                if np.array_equal(means[i], means[j]):
                    raise ValueError("class means must be pairwise distinct")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.samples_per_class < 1:
            raise ValueError("samples_per_class must be positive")
        means = means.copy()
        means.flags.writeable = False
        object.__setattr__(self, "means", means)

    @property
    def input_dim(self) -> int:
        return self.means.shape[1]

    @property
    def classes(self) -> int:
        return self.means.shape[0]


def lattice_means(input_dim: int, classes: int, separation: float, seed: int) -> np.ndarray:
    """Class means on a scaled hypercube lattice.

    When classes <= input_dim the means are the scaled one-hot corners, which
    maximizes pairwise distance; otherwise distinct binary corners are drawn
    with the seed. Adjacent means sit ``separation`` apart.
    """
    if classes <= input_dim:
        means = np.zeros((classes, input_dim))
        for k in range(classes):
            means[k, k] = separation
        return means
    if classes > 2**input_dim:
        raise ValueError("not enough lattice corners for the class count")
    rng = np.random.default_rng(seed)
    seen = set()
    corners = []
    while len(corners) < classes:
        corner = tuple(int(b) for b in rng.integers(0, 2, size=input_dim))
        if corner not in seen:
            seen.add(corner)
            corners.append(corner)
    return separation * np.array(corners, dtype=np.float64)


def generate_mixture(spec: MixtureSpec, seed: int, split: str = "train") -> LabeledDataset:
    """samples_per_class draws of mean_k + sigma * standard normal, per class."""
    rng = np.random.default_rng(seed)
    per = spec.samples_per_class
    rows = []
    labels = []
    for k in range(spec.classes):
        noise = rng.standard_normal((per, spec.input_dim))
        rows.append(spec.means[k] + spec.sigma * noise)
        labels.append(np.full(per, k, dtype=np.int64))
    return LabeledDataset(np.vstack(rows), np.concatenate(labels), split)


@dataclass(frozen=True)
class ScenarioSpec:
    """How to carve expert datasets and the shared probe out of mixtures."""

    kind: str
    mixtures: tuple                   # one MixtureSpec for label_split, two for distinct
    seed: int
    train_fraction: float = 0.75
    probe_size: int = 200

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        expected = 1 if self.kind == KIND_LABEL_SPLIT else 2
        if len(self.mixtures) != expected:
            raise ValueError(f"{self.kind} needs {expected} mixture spec(s)")
        if self.kind == KIND_DISTINCT:
            a, b = self.mixtures
            if a.input_dim != b.input_dim:
                raise ValueError("distinct mixtures must share the input dim")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must be in (0, 1)")
        if self.probe_size < 2 or self.probe_size % 2 != 0:
            raise ValueError("probe_size must be even and >= 2")

    @property
    def num_experts(self) -> int:
        return 2

    @property
    def classes(self) -> int:
        return self.mixtures[0].classes


@dataclass
class ScenarioData:
    """Per-expert train/test sets plus the shared unlabeled probe.

    Probe rows come from the training inputs only; their labels and source
    side are retained separately so that labeled-validation tuning and the
    distillation learning curve can use them, while the ProbeSet itself
    stays unlabeled.
    """

    train: list              # LabeledDataset per expert
    test: list
    probe: ProbeSet
    probe_labels: np.ndarray
    probe_side: np.ndarray   # expert index each probe row was drawn from


def _split_dataset(data: LabeledDataset, train_fraction: float, rng) -> tuple:
    n = len(data)
    order = rng.permutation(n)
    cut = int(round(train_fraction * n))
    if cut < 1 or cut >= n:
        raise ValueError("train fraction leaves an empty split")
    tr, te = order[:cut], order[cut:]
    return (
        LabeledDataset(data.inputs[tr], data.labels[tr], "train"),
        LabeledDataset(data.inputs[te], data.labels[te], "test"),
    )


def _seed_of(seq: np.random.SeedSequence) -> int:
    return int(seq.generate_state(1, np.uint64)[0])


def make_scenario(spec: ScenarioSpec) -> ScenarioData:
    """Deterministically expand a scenario spec into expert datasets + probe."""
    root = np.random.SeedSequence(spec.seed)
    mix_seeds, split_seed, probe_seed = root.spawn(3)
    mix_children = mix_seeds.spawn(len(spec.mixtures))

    if spec.kind == KIND_LABEL_SPLIT:
        mixture = spec.mixtures[0]
        pool = generate_mixture(mixture, _seed_of(mix_children[0]))
        half = (mixture.classes + 1) // 2
        side_masks = [pool.labels < half, pool.labels >= half]
        sides = [
            LabeledDataset(pool.inputs[mask], pool.labels[mask], "train")
            for mask in side_masks
        ]
    else:
        sides = [
            generate_mixture(mix, _seed_of(child))
            for mix, child in zip(spec.mixtures, mix_children)
        ]

    split_rng = np.random.default_rng(split_seed)
    train_sets, test_sets = [], []
    for side in sides:
        tr, te = _split_dataset(side, spec.train_fraction, split_rng)
        train_sets.append(tr)
        test_sets.append(te)

    per_side = spec.probe_size // 2
    probe_rng = np.random.default_rng(probe_seed)
    probe_rows, probe_labels, probe_side = [], [], []
    for i, tr in enumerate(train_sets):
        if per_side > len(tr):
            raise ValueError(
                f"probe needs {per_side} rows per side but side {i} has {len(tr)} train rows"
            )
        pick = probe_rng.choice(len(tr), size=per_side, replace=False)
        probe_rows.append(tr.inputs[pick])
        probe_labels.append(tr.labels[pick])
        probe_side.append(np.full(per_side, i, dtype=np.int64))
    return ScenarioData(
        train_sets,
        test_sets,
        ProbeSet(np.vstack(probe_rows)),
        np.concatenate(probe_labels),
        np.concatenate(probe_side),
    )


# ---------------------------------------------------------------------------
# Delimited text serialization


def dataset_to_csv(data: LabeledDataset, classes: int) -> str:
    """One header line (input dim, class count, split tag), then one row per
    sample: the input coordinates followed by the integer label."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([data.inputs.shape[1], classes, data.split])
    for x, y in zip(data.inputs, data.labels):
        writer.writerow([repr(float(v)) for v in x] + [int(y)])
    return buf.getvalue()


def probe_to_csv(probe: ProbeSet) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([probe.inputs.shape[1], "", "probe"])
    for x in probe.inputs:
        writer.writerow([repr(float(v)) for v in x])
    return buf.getvalue()


def save_dataset(path: str, data: LabeledDataset, classes: int) -> None:
    atomic_write_text(path, dataset_to_csv(data, classes))


def load_dataset(path: str) -> tuple:
    """Returns (LabeledDataset, class count)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    s, classes, split = int(rows[0][0]), int(rows[0][1]), rows[0][2]
    inputs = np.array([[float(v) for v in row[:s]] for row in rows[1:]])
    labels = np.array([int(row[s]) for row in rows[1:]], dtype=np.int64)
    return LabeledDataset(inputs, labels, split), classes
