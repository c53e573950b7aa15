"""Dataset containers, CSV / Mulan ingestion, semi-supervised splits, z-scoring.

Feature matrices are stored features x samples (column ``j`` is sample ``j``);
label matrices are samples x labels.
"""

from __future__ import annotations

import csv
import math
import re
import warnings
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DataFormatError(ValueError):
    """Raised when an input file cannot be turned into a :class:`Dataset`."""


def _frozen(arr, dtype=float):
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray  # d x n
    labels: np.ndarray  # n x c, entries 0/1
    feature_names: list[str] = field(default_factory=list)
    label_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        x = _frozen(self.features)
        y = _frozen(self.labels)
        if x.ndim != 2 or y.ndim != 2:
            raise DataFormatError("features and labels must be 2-D")
        d, n = x.shape
        if y.shape[0] != n:
            raise DataFormatError(
                f"features have {n} samples but labels have {y.shape[0]} rows"
            )
        c = y.shape[1]
        if d < 1 or n < 2 or c < 1:
            raise DataFormatError(f"need d >= 1, n >= 2, c >= 1; got d={d}, n={n}, c={c}")
        if not np.all(np.isfinite(x)):
            raise DataFormatError("features contain NaN or Inf")
        if not np.all((y == 0) | (y == 1)):
            raise DataFormatError("label entries must be exactly 0 or 1")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        fnames = list(self.feature_names) or [f"f{i}" for i in range(d)]
        lnames = list(self.label_names) or [f"y{j}" for j in range(c)]
        if len(fnames) != d or len(lnames) != c:
            raise DataFormatError("name lists do not match matrix shapes")
        object.__setattr__(self, "feature_names", fnames)
        object.__setattr__(self, "label_names", lnames)

    @property
    def n_features(self):
        return self.features.shape[0]

    @property
    def n_samples(self):
        return self.features.shape[1]

    @property
    def n_labels(self):
        return self.labels.shape[1]

    def subset(self, indices):
        """Samples ``indices`` (in the given order) as a new dataset."""
        idx = np.asarray(indices, dtype=int)
        return Dataset(self.features[:, idx], self.labels[idx], self.feature_names, self.label_names)

    def select_features(self, indices):
        idx = np.asarray(indices, dtype=int)
        return Dataset(
            self.features[idx],
            self.labels,
            [self.feature_names[i] for i in idx],
            self.label_names,
        )


@dataclass(frozen=True)
class SemiSplit:
    labeled_indices: tuple[int, ...]
    unlabeled_indices: tuple[int, ...]
    seed: int

    def __post_init__(self):
        lab = tuple(int(i) for i in self.labeled_indices)
        unl = tuple(int(i) for i in self.unlabeled_indices)
        if not lab:
            raise ValueError("a split needs at least one labeled sample")
        both = set(lab) | set(unl)
        if len(both) != len(lab) + len(unl) or both != set(range(len(both))):
            raise ValueError("labeled/unlabeled indices must partition 0..n-1")
        object.__setattr__(self, "labeled_indices", lab)
        object.__setattr__(self, "unlabeled_indices", unl)

    @property
    def n_samples(self):
        return len(self.labeled_indices) + len(self.unlabeled_indices)

    def labeled_mask(self):
        mask = np.zeros(self.n_samples, dtype=bool)
        mask[list(self.labeled_indices)] = True
        return mask


@dataclass(frozen=True)
class StandardizationStats:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, features):
        """Z-score a d x m feature block; zero-variance rows pass through untouched."""
        x = np.asarray(features, dtype=float)
        out = x.copy()
        live = self.std > 0
        out[live] = (x[live] - self.mean[live, None]) / self.std[live, None]
        return out


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------

def load_csv(path, label_count):
    """Read a headed CSV whose last ``label_count`` columns are labels.

    Labels are thresholded at 0.5. Positions in error messages are 1-based
    data-row / column numbers (the header is row 0).
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    header, body = rows[0], [r for r in rows[1:] if r]
    if not body:
        raise DataFormatError(f"{path}: no data rows")
    ncol = len(header)
    if label_count < 1 or label_count >= ncol:
        raise DataFormatError(
            f"{path}: label_count={label_count} must be in [1, {ncol - 1}] for {ncol} columns"
        )
    values = np.empty((len(body), ncol))
    for r, row in enumerate(body, start=1):
        if len(row) != ncol:
            raise DataFormatError(f"{path}: row {r} has {len(row)} columns, expected {ncol}")
        for col, cell in enumerate(row, start=1):
            try:
                values[r - 1, col - 1] = float(cell)
            except ValueError:
                raise DataFormatError(
                    f"{path}: non-numeric cell {cell!r} at (row {r}, col {col})"
                ) from None
    if not np.all(np.isfinite(values)):
        bad = np.argwhere(~np.isfinite(values))[0] + 1
        raise DataFormatError(f"{path}: non-finite value at (row {bad[0]}, col {bad[1]})")
    split = ncol - label_count
    labels = (values[:, split:] >= 0.5).astype(float)
    return Dataset(values[:, :split].T, labels, header[:split], header[split:])


# --------------------------------------------------------------------------
# Mulan ARFF + XML
# --------------------------------------------------------------------------

_ATTR_RE = re.compile(r"^@attribute\s+", re.IGNORECASE)


def _parse_attribute(line):
    rest = _ATTR_RE.sub("", line, count=1).strip()
    if rest[0] in "'\"":
        quote = rest[0]
        end = rest.index(quote, 1)
        name, kind = rest[1:end], rest[end + 1:].strip()
    else:
        name, _, kind = rest.partition(" ")
        if "\t" in name:
            name, _, tail = name.partition("\t")
            kind = tail + " " + kind
        kind = kind.strip()
    if kind.startswith("{"):
        inner = kind[1:kind.rindex("}")]
        levels = [v.strip().strip("'\"") for v in inner.split(",")]
        return name, ("nominal", levels)
    return name, (kind.split()[0].lower(), None)


def _parse_cell(text, attr, row):
    text = text.strip().strip("'\"")
    if text == "?":
        raise DataFormatError(f"missing value for attribute {attr!r} in data row {row}")
    try:
        return float(text)
    except ValueError:
        pass
    raise DataFormatError(f"non-numeric value {text!r} for attribute {attr!r} in data row {row}")


def _label_names_from_xml(xml_path):
    root = ET.parse(xml_path).getroot()
    names = []
    for elem in root.iter():
        if elem.tag.rsplit("}", 1)[-1] == "label" and "name" in elem.attrib:
            names.append(elem.attrib["name"])
    if not names:
        raise DataFormatError(f"{xml_path}: no <label name=...> entries")
    return names


def load_mulan(arff_path, xml_path):
    """Read a Mulan dataset: ARFF data (dense or sparse rows) plus XML label list."""
    arff_path = Path(arff_path)
    label_names = _label_names_from_xml(xml_path)
    attrs = []
    rows = []
    in_data = False
    with arff_path.open(encoding="utf-8", errors="replace") as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("%"):
                continue
            if not in_data:
                low = line.lower()
                if low.startswith("@attribute"):
                    attrs.append(_parse_attribute(line))
                elif low.startswith("@data"):
                    in_data = True
                continue
            rows.append(line)
    if not attrs:
        raise DataFormatError(f"{arff_path}: no @attribute declarations")
    if not rows:
        raise DataFormatError(f"{arff_path}: no data rows")

    names = [a[0] for a in attrs]
    position = {name: i for i, name in enumerate(names)}
    missing = [lbl for lbl in label_names if lbl not in position]
    if missing:
        raise DataFormatError(f"label(s) {missing} from {xml_path} not declared in {arff_path}")
    label_cols = [position[lbl] for lbl in label_names]
    label_set = set(label_cols)
    feature_cols = [i for i in range(len(attrs)) if i not in label_set]
    for i in feature_cols:
        kind, levels = attrs[i][1]
        numeric_nominal = kind == "nominal" and all(_is_number(v) for v in levels)
        if kind not in ("numeric", "real", "integer") and not numeric_nominal:
            raise DataFormatError(f"feature attribute {names[i]!r} is not numeric ({kind})")

    width = len(attrs)
    table = np.zeros((len(rows), width))
    for r, line in enumerate(rows, start=1):
        if line.startswith("{"):
            body = line[1:line.rindex("}")].strip()
            if not body:
                continue
            for item in body.split(","):
                parts = item.strip().split(None, 1)
                if len(parts) != 2:
                    raise DataFormatError(f"malformed sparse entry {item!r} in data row {r}")
                idx = int(parts[0])
                if not 0 <= idx < width:
                    raise DataFormatError(
                        f"sparse index {idx} out of range [0, {width}) in data row {r}"
                    )
                table[r - 1, idx] = _parse_cell(parts[1], names[idx], r)
        else:
            cells = next(csv.reader([line], quotechar="'", skipinitialspace=True))
            if len(cells) != width:
                raise DataFormatError(f"data row {r} has {len(cells)} values, expected {width}")
            for idx, cell in enumerate(cells):
                table[r - 1, idx] = _parse_cell(cell, names[idx], r)

    features = table[:, feature_cols].T
    labels = (table[:, label_cols] >= 0.5).astype(float)
    return Dataset(features, labels, [names[i] for i in feature_cols], label_names)


def _is_number(text):
    try:
        float(text)
    except ValueError:
        return False
    return True


# --------------------------------------------------------------------------
# splits and scaling
# --------------------------------------------------------------------------

def make_split(dataset, labeled_fraction, seed, max_attempts=10):
    """Seeded labeled/unlabeled partition of ``dataset``'s samples.

    The draw is repeated (up to ``max_attempts`` times) until every label that
    occurs in the data has a positive example among the labeled samples; if no
    draw manages that, the last one is kept and a warning is issued.
    """
    if not 0 < labeled_fraction <= 1:
        raise ValueError(f"labeled_fraction must be in (0, 1], got {labeled_fraction}")
    labels = dataset.labels
    n = dataset.n_samples
    n_l = math.ceil(labeled_fraction * n - 1e-12)
    if n_l < 1:
        raise ValueError("labeled fraction selects no samples")
    rng = np.random.default_rng(seed)
    present = labels.sum(axis=0) > 0
    for _ in range(max_attempts):
        perm = rng.permutation(n)
        lab = np.sort(perm[:n_l])
        if np.all(labels[lab].sum(axis=0)[present] > 0):
            break
    else:
        warnings.warn(
            f"no labeled draw in {max_attempts} attempts covers every label; using the last one",
            RuntimeWarning,
            stacklevel=2,
        )
    unl = np.sort(perm[n_l:])
    return SemiSplit(tuple(lab.tolist()), tuple(unl.tolist()), int(seed))


def standardize(dataset):
    x = dataset.features
    mean = x.mean(axis=1)
    std = x.std(axis=1)
    # treat round-off-level spread as constant
    std = np.where(std > 1e-12 * np.maximum(1.0, np.abs(mean)), std, 0.0)
    stats = StandardizationStats(_frozen(mean), _frozen(std))
    scaled = Dataset(stats.apply(x), dataset.labels, dataset.feature_names, dataset.label_names)
    return scaled, stats
