"""Multi-domain datasets, the synthetic scenario generator, view transforms and batching."""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    EmptyClass,
    EmptyStylePool,
    InvalidConfig,
    ParseError,
    SchemaError,
)

log = logging.getLogger(__name__)

ADAIN_STD_EPS = 1e-8


@dataclass(frozen=True)
class Dataset:
    """Labelled samples of one or more domains. ``labels`` are class indices."""

    features: np.ndarray
    labels: np.ndarray
    domains: np.ndarray

    def __post_init__(self):
        n = len(self.features)
        if len(self.labels) != n or len(self.domains) != n:
            raise SchemaError("features, labels and domains differ in length")
        if not np.all(np.isfinite(self.features)):
            raise SchemaError("features must be finite")

    def __len__(self):
        return len(self.features)

    @property
    def dim(self):
        return self.features.shape[1]

    def subset(self, mask_or_idx):
        return Dataset(self.features[mask_or_idx], self.labels[mask_or_idx],
                       self.domains[mask_or_idx])

    def hide_labels(self) -> "UnlabeledDataset":
        return UnlabeledDataset(self.features, self.domains)

    def equals(self, other) -> bool:
        return (np.array_equal(self.features, other.features)
                and np.array_equal(self.labels, other.labels)
                and np.array_equal(self.domains, other.domains))


@dataclass(frozen=True)
class UnlabeledDataset:
    """Target data as seen by training: features only."""

    features: np.ndarray
    domains: np.ndarray

    def __len__(self):
        return len(self.features)


@dataclass
class ScenarioConfig:
    num_sources: int = 3
    known_classes: int = 5
    target_private: int = 3
    source_private: int = 0
    samples_per_class: int = 60
    dim: int = 16
    spread: float = 0.12
    style_scale: tuple = (0.6, 1.6)   # range of the per-domain global gain
    style_shift: float = 0.8          # std of the per-domain global offset
    style_jitter: float = 0.1         # per-dimension deviation around the global gain/offset
    seed: int = 0

    def validate(self):
        if self.num_sources < 1:
            raise InvalidConfig("need at least one source domain")
        if self.known_classes < 1:
            raise InvalidConfig("need at least one known class")
        if self.target_private < 0 or self.source_private < 0:
            raise InvalidConfig("private class counts must be non-negative")
        if self.known_classes + self.source_private < 2:
            raise InvalidConfig("sources need at least two classes")
        if self.samples_per_class < 1 or self.dim < 2:
            raise InvalidConfig("samples_per_class >= 1 and dim >= 2 required")
        if self.spread < 0:
            raise InvalidConfig("spread must be non-negative")
        return self

    @property
    def num_source_classes(self):
        return self.known_classes + self.source_private

    @property
    def openness(self):
        target_classes = self.known_classes + self.target_private
        return 1.0 - self.known_classes / target_classes


@dataclass
class Scenario:
    sources: list            # one Dataset per source domain
    target: Dataset
    metadata: dict = field(default_factory=dict)

    @property
    def num_source_classes(self):
        return int(self.metadata["num_source_classes"])


def generate_scenario(cfg: ScenarioConfig) -> Scenario:
    """Gaussian class clusters on a latent sphere, pushed through per-domain affine styles.

    Class layout: ``0..known-1`` shared, then source-private, then target-private.
    The target domain id is ``num_sources``.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    n_classes = cfg.known_classes + cfg.source_private + cfg.target_private
    means = rng.standard_normal((n_classes, cfg.dim))
    means /= np.linalg.norm(means, axis=1, keepdims=True)

    n_domains = cfg.num_sources + 1
    gains = rng.uniform(*cfg.style_scale, size=n_domains)
    offsets = rng.normal(0.0, cfg.style_shift, size=n_domains)
    scales = gains[:, None] * (1.0 + cfg.style_jitter * rng.standard_normal((n_domains, cfg.dim)))
    shifts = offsets[:, None] + cfg.style_jitter * rng.standard_normal((n_domains, cfg.dim))

    source_classes = list(range(cfg.num_source_classes))
    target_classes = list(range(cfg.known_classes)) + list(
        range(cfg.num_source_classes, n_classes))

    def make_domain(d, classes):
        feats, labels = [], []
        for y in classes:
            latent = means[y] + cfg.spread * rng.standard_normal((cfg.samples_per_class, cfg.dim))
            feats.append(scales[d] * latent + shifts[d])
            labels.append(np.full(cfg.samples_per_class, y))
        return Dataset(np.concatenate(feats), np.concatenate(labels),
                       np.full(len(classes) * cfg.samples_per_class, d))

    sources = [make_domain(d, source_classes) for d in range(cfg.num_sources)]
    target = make_domain(cfg.num_sources, target_classes)
    metadata = {
        "dim": cfg.dim,
        "num_sources": cfg.num_sources,
        "target_domain": cfg.num_sources,
        "num_source_classes": cfg.num_source_classes,
        "known_classes": list(range(cfg.known_classes)),
        "source_private_classes": list(range(cfg.known_classes, cfg.num_source_classes)),
        "target_private_classes": list(range(cfg.num_source_classes, n_classes)),
        "openness": cfg.openness,
        "style_scales": scales.tolist(),
        "style_shifts": shifts.tolist(),
        "seed": cfg.seed,
        "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(cfg).items()},
    }
    return Scenario(sources, target, metadata)


def adain_transform(content, style):
    """Give ``content`` the mean and std of ``style`` (over the last axis)."""
    content = np.asarray(content, dtype=np.float64)
    style = np.asarray(style, dtype=np.float64)
    c_mean = content.mean(axis=-1, keepdims=True)
    c_std = content.std(axis=-1, keepdims=True)
    s_mean = style.mean(axis=-1, keepdims=True)
    s_std = style.std(axis=-1, keepdims=True)
    flat = c_std < ADAIN_STD_EPS
    safe = np.where(flat, 1.0, c_std)
    out = s_std * (content - c_mean) / safe + s_mean
    return np.where(flat, content, out)


@dataclass(frozen=True)
class ViewTransformConfig:
    style_prob: float = 0.5
    jitter_prob: float = 0.8
    collapse_prob: float = 0.2
    keep_range: tuple = (0.5, 1.0)
    jitter_scale: float = 0.1

    def __post_init__(self):
        for name in ("style_prob", "jitter_prob", "collapse_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidConfig(f"{name} must lie in [0, 1]")
        lo, hi = self.keep_range
        if not 0.0 < lo <= hi <= 1.0:
            raise InvalidConfig("keep_range must satisfy 0 < lo <= hi <= 1")


def view_transform(x, cfg: ViewTransformConfig, style_pool, rng):
    """Random semantic-preserving view of ``x`` (one vector or rows of a matrix).

    Masking always; then either style transfer from a random pool sample, or
    jitter followed by mean-collapse, each with its own probability.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x).copy()
    n, d = x.shape
    style_pool = np.asarray(style_pool)
    if len(style_pool) == 0:
        raise EmptyStylePool("style pool is empty")

    keep = rng.uniform(*cfg.keep_range, size=n)
    n_keep = np.clip(np.rint(keep * d).astype(int), 1, d)
    order = np.argsort(rng.random((n, d)), axis=1)
    drop = np.argsort(order, axis=1) >= n_keep[:, None]
    x[drop] = 0.0

    styled = rng.random(n) < cfg.style_prob
    picks = rng.integers(0, len(style_pool), size=n)
    jitter = rng.random(n) < cfg.jitter_prob
    noise = rng.standard_normal((n, d)) * cfg.jitter_scale
    collapse = rng.random(n) < cfg.collapse_prob

    if styled.any():
        x[styled] = adain_transform(x[styled], style_pool[picks[styled]])
    plain = ~styled
    j = plain & jitter
    x[j] += noise[j]
    c = plain & collapse
    x[c] = x[c].mean(axis=1, keepdims=True)
    return x[0] if single else x


def identity_transform():
    return ViewTransformConfig(style_prob=0.0, jitter_prob=0.0, collapse_prob=0.0,
                               keep_range=(1.0, 1.0))


@dataclass
class RawBatch:
    """Interleaved double batch: rows 2i and 2i+1 are two views of instance i."""

    x: np.ndarray
    labels: np.ndarray
    instance: np.ndarray
    domain: np.ndarray
    skipped: list = field(default_factory=list)   # (class, domain slot) pairs with no data

    def __len__(self):
        return len(self.x)


class BalancedSampler:
    """Draws one instance per (class, domain) slot and emits two views of it.

    ``domains`` is a list of ``(features, labels)`` pairs; the first
    ``num_required`` entries must cover every class.
    """

    def __init__(self, domains, num_classes, num_required=None):
        self.num_classes = num_classes
        self.domains = [(np.asarray(f), np.asarray(y)) for f, y in domains]
        required = len(self.domains) if num_required is None else num_required
        self.index = []
        for di, (_, y) in enumerate(self.domains):
            per_class = [np.flatnonzero(y == c) for c in range(num_classes)]
            if di < required:
                empty = [c for c, idx in enumerate(per_class) if len(idx) == 0]
                if empty:
                    raise EmptyClass(f"source domain {di} lacks classes {empty}")
            self.index.append(per_class)

    def draw(self, rng, balanced=True):
        """Returns ``(features, labels, domain_slot, row_in_domain)`` of the chosen instances."""
        feats, labels, slots, rows, skipped = [], [], [], [], []
        if balanced:
            for c in range(self.num_classes):
                for di, per_class in enumerate(self.index):
                    idx = per_class[c]
                    if len(idx) == 0:
                        skipped.append((c, di))
                        continue
                    r = idx[rng.integers(len(idx))]
                    feats.append(self.domains[di][0][r])
                    labels.append(c)
                    slots.append(di)
                    rows.append(r)
            if skipped:
                log.debug("skipped empty (class, domain) slots: %s", skipped)
        else:
            n = sum(len(per_class[c]) > 0 for per_class in self.index
                    for c in range(self.num_classes))
            sizes = np.array([len(y) for _, y in self.domains])
            flat = rng.integers(0, sizes.sum(), size=n)
            bounds = np.cumsum(sizes)
            for f in flat:
                di = int(np.searchsorted(bounds, f, side="right"))
                r = int(f - (bounds[di - 1] if di else 0))
                feats.append(self.domains[di][0][r])
                labels.append(int(self.domains[di][1][r]))
                slots.append(di)
                rows.append(r)
        return np.array(feats), np.array(labels), np.array(slots), np.array(rows), skipped


def create_batch(domains, num_classes, transform_cfg, style_pool, rng,
                 balanced=True, two_view_aug=False, augment=True) -> RawBatch:
    """Class x domain balanced double batch of size ``num_classes * len(domains) * 2``.

    Slots whose domain has no sample of the class are skipped, which only
    happens for a pseudo-labelled target appended after the sources.
    """
    sampler = domains if isinstance(domains, BalancedSampler) else BalancedSampler(domains, num_classes)
    feats, labels, slots, _, skipped = sampler.draw(rng, balanced)
    if augment:
        second = view_transform(feats, transform_cfg, style_pool, rng)
        first = view_transform(feats, transform_cfg, style_pool, rng) if two_view_aug else feats
    else:
        first, second = feats, feats
    k = len(feats)
    x = np.empty((2 * k, feats.shape[1]))
    x[0::2] = first
    x[1::2] = second
    return RawBatch(x, np.repeat(labels, 2), np.repeat(np.arange(k), 2),
                    np.repeat(slots, 2), skipped)


# --- CSV persistence -------------------------------------------------------

def _fmt(v):
    return repr(float(v))


def save_dataset(path, datasets, metadata=None):
    """Write datasets (list of Dataset) to one CSV; optional metadata JSON alongside."""
    path = Path(path)
    feats = np.concatenate([d.features for d in datasets])
    labels = np.concatenate([d.labels for d in datasets])
    domains = np.concatenate([d.domains for d in datasets])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["domain", "label"] + [f"f{i}" for i in range(feats.shape[1])])
    for f, y, dom in zip(feats, labels, domains):
        w.writerow([int(dom), int(y)] + [_fmt(v) for v in f])
    path.write_text(buf.getvalue())
    if metadata is not None:
        path.with_name("metadata.json").write_text(json.dumps(metadata, indent=2, sort_keys=True) + "\n")


def save_scenario(directory, scenario: Scenario):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_dataset(directory / "data.csv", scenario.sources + [scenario.target], scenario.metadata)


def _read_rows(path):
    text = Path(path).read_text()
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise SchemaError(f"{path}: empty file")
    header = rows[0]
    if header[:2] != ["domain", "label"] or len(header) < 4:
        raise SchemaError(f"{path}: header must be domain,label,f0,...")
    expected = [f"f{i}" for i in range(len(header) - 2)]
    if header[2:] != expected:
        raise SchemaError(f"{path}: feature columns must be named f0..f{len(expected) - 1}")
    d = len(expected)
    feats, labels, domains = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != d + 2:
            raise SchemaError(f"{path}: line {lineno} has {len(row) - 2} features, expected {d}")
        try:
            dom = int(row[0])
            lab = int(row[1])
            vals = [float(v) for v in row[2:]]
        except ValueError as exc:
            raise ParseError(f"{path}: {exc}", line=lineno) from None
        if dom < 0:
            raise ParseError(f"{path}: negative domain id", line=lineno)
        if not all(np.isfinite(vals)):
            raise ParseError(f"{path}: non-finite feature", line=lineno)
        feats.append(vals)
        labels.append(lab)
        domains.append(dom)
    if not feats:
        raise SchemaError(f"{path}: no data rows")
    return np.array(feats), np.array(labels), np.array(domains)


def load_dataset(path, target_domain=None):
    """Parse a dataset CSV into ``(sources, target)``.

    ``target_domain`` defaults to the metadata entry next to the file, or to
    the largest domain id. Target labels are kept for evaluation only; training
    receives ``target.hide_labels()``.
    """
    path = Path(path)
    feats, labels, domains = _read_rows(path)
    meta_path = path.with_name("metadata.json")
    if target_domain is None and meta_path.exists():
        target_domain = json.loads(meta_path.read_text()).get("target_domain")
    if target_domain is None:
        target_domain = int(domains.max())
    full = Dataset(feats, labels, domains)
    sources = [full.subset(domains == d) for d in sorted(set(domains.tolist())) if d != target_domain]
    target = full.subset(domains == target_domain)
    return sources, target


def load_scenario(directory) -> Scenario:
    directory = Path(directory)
    sources, target = load_dataset(directory / "data.csv")
    meta_path = directory / "metadata.json"
    if meta_path.exists():
        metadata = json.loads(meta_path.read_text())
    else:
        n_src = int(max(s.labels.max() for s in sources)) + 1
        metadata = {"num_source_classes": n_src, "target_domain": int(target.domains[0]),
                    "num_sources": len(sources)}
    return Scenario(sources, target, metadata)
