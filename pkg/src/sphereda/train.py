"""Training loop: source-only warm phase, style-augmented contrastive updates,
periodic self-training break-points, and checkpoint persistence."""
from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .data import BalancedSampler, Dataset, UnlabeledDataset, ViewTransformConfig, create_batch
from .errors import DegenerateEmbedding, InvalidConfig, ParseError, SpheredaError, TrainingDiverged, VersionMismatch, ZeroVector
from .loss import DEFAULT_TAU, supclr_backward
from .model import DEFAULT_ENCODER_DIMS, DEFAULT_HEAD_DIMS, ModelParams, forward_batch, init_params
from .optim import OptimizerState, ScheduleConfig, lr_at, optimizer_step
from .sphere import DEFAULT_ALPHA_M, ThresholdState, nearest, threshold_state

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"SPHEREDA-CKPT\n"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    total_iters: int = 4000
    source_only_iters: int = 2000
    breakpoint_period: int = 500
    alpha_m: float = DEFAULT_ALPHA_M
    tau: float = DEFAULT_TAU
    warmup_iters: int = 250
    peak_lr: float = 0.05
    optimizer: str = "lars"
    momentum: float = 0.9
    weight_decay: float = 1e-6
    trust_coeff: float = 1e-3
    encoder_dims: tuple = DEFAULT_ENCODER_DIMS
    head_dims: tuple = DEFAULT_HEAD_DIMS
    transform: ViewTransformConfig = field(default_factory=ViewTransformConfig)
    style_transfer: bool = True
    source_balance: bool = True
    self_training: bool = True
    two_view_aug: bool = False
    augment_pseudo: bool = True
    max_per_class: int | None = None
    log_interval: int = 50
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.transform, dict):
            self.transform = ViewTransformConfig(**{k: tuple(v) if isinstance(v, list) else v
                                                    for k, v in self.transform.items()})
        self.encoder_dims = tuple(self.encoder_dims)
        self.head_dims = tuple(self.head_dims)

    def validate(self):
        if not 0 <= self.source_only_iters <= self.total_iters:
            raise InvalidConfig("need 0 <= source_only_iters <= total_iters")
        if self.breakpoint_period <= 0:
            raise InvalidConfig("breakpoint_period must be positive")
        if not 0.0 < self.alpha_m <= 1.0:
            raise InvalidConfig("alpha_m must lie in (0, 1]")
        if self.tau <= 0:
            raise InvalidConfig("tau must be positive")
        self.schedule()
        return self

    def schedule(self):
        return ScheduleConfig(self.warmup_iters, self.total_iters, self.peak_lr)

    def effective_transform(self):
        if self.style_transfer:
            return self.transform
        return replace(self.transform, style_prob=0.0)

    def to_dict(self):
        d = asdict(self)
        d["encoder_dims"] = list(self.encoder_dims)
        d["head_dims"] = list(self.head_dims)
        d["transform"]["keep_range"] = list(self.transform.keep_range)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidConfig(f"unknown training options: {sorted(unknown)}")
        return cls(**d)

    def breakpoints(self):
        """Iterations at which a break-point fires, including the closing one."""
        if self.total_iters <= self.source_only_iters:
            return []
        return list(range(self.source_only_iters, self.total_iters + 1, self.breakpoint_period))


@dataclass
class PseudoLabelSet:
    indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    distances: np.ndarray = field(default_factory=lambda: np.zeros(0))
    created_at: int = -1

    def __len__(self):
        return len(self.indices)

    def per_class(self, num_classes):
        return np.bincount(self.labels, minlength=num_classes).tolist()


@dataclass
class TrainerState:
    params: ModelParams
    optimizer: OptimizerState
    rng: np.random.Generator
    pseudo: PseudoLabelSet = field(default_factory=PseudoLabelSet)
    history: list = field(default_factory=list)    # one dict per break-point
    log: list = field(default_factory=list)        # JSON-ready records
    iteration: int = 0


def _stack_sources(sources, max_per_class=None, rng_seed=0):
    x = np.concatenate([s.features for s in sources])
    y = np.concatenate([s.labels for s in sources])
    if max_per_class is not None:
        rng = np.random.default_rng(rng_seed)
        keep = []
        for c in np.unique(y):
            idx = np.flatnonzero(y == c)
            if len(idx) > max_per_class:
                idx = np.sort(rng.choice(idx, max_per_class, replace=False))
            keep.append(idx)
        keep = np.sort(np.concatenate(keep))
        x, y = x[keep], y[keep]
    return x, y


def embed(params, x, chunk=4096):
    """Embed many inputs; chunked so memory stays flat on large sets."""
    return np.concatenate([forward_batch(params, x[i:i + chunk]) for i in range(0, len(x), chunk)])


def source_threshold(params, sources, alpha_m=DEFAULT_ALPHA_M, max_per_class=None):
    """Prototypes and threshold from a clean pass over the source data."""
    x, y = _stack_sources(sources, max_per_class)
    try:
        z = embed(params, x)
        return threshold_state(z, y, alpha_m)
    except ZeroVector as exc:
        raise DegenerateEmbedding(f"prototype computation failed: {exc}") from exc


def breakpoint_self_training(params, sources, target, alpha_m=DEFAULT_ALPHA_M, iteration=0,
                             enabled=True, max_per_class=None):
    """Recompute prototypes and the threshold; rebuild the pseudo-label set from scratch.

    Returns ``(PseudoLabelSet, record)`` where ``record`` is the JSON-ready
    break-point log entry.
    """
    protos, th = source_threshold(params, sources, alpha_m, max_per_class)
    num_classes = max(protos.classes) + 1
    pseudo = PseudoLabelSet(created_at=iteration)
    if enabled:
        try:
            zt = embed(params, target.features)
        except ZeroVector as exc:
            raise DegenerateEmbedding(f"target embedding failed: {exc}") from exc
        near, dmin = nearest(zt, protos)
        keep = dmin < th.alpha_c
        pseudo = PseudoLabelSet(np.flatnonzero(keep), near[keep].astype(int), dmin[keep], iteration)
    record = {
        "event": "breakpoint",
        "iter": iteration,
        "theta": th.theta,
        "phi": th.phi,
        "alpha": th.alpha,
        "alpha_c": th.alpha_c,
        "pseudo_count": len(pseudo),
        "pseudo_per_class": pseudo.per_class(num_classes),
        "pseudo_max_distance": float(pseudo.distances.max()) if len(pseudo) else None,
    }
    return pseudo, record


def init_state(d_x, cfg: TrainConfig, normalize_output=True, out_dim=None) -> TrainerState:
    init_rng = np.random.default_rng([cfg.seed, 0])
    head = cfg.head_dims if out_dim is None else (out_dim,)
    params = init_params(d_x, cfg.encoder_dims, head, init_rng, normalize_output)
    opt = OptimizerState(cfg.optimizer, cfg.momentum, cfg.weight_decay, cfg.trust_coeff)
    opt.init_buffers(params.tensors())
    return TrainerState(params, opt, np.random.default_rng([cfg.seed, 1]))


def _as_unlabeled(target):
    if isinstance(target, Dataset):
        return target.hide_labels()
    return target


def run_training(sources, target, cfg: TrainConfig, state: TrainerState | None = None,
                 stop_at=None, style_pool=None, step_fn=None, breakpoint_fn=None,
                 on_breakpoint=None):
    """Run (or resume) training up to ``stop_at`` (default ``cfg.total_iters``).

    ``target`` may be a labelled Dataset; labels are stripped before use.
    ``style_pool`` overrides the default pool (all target features).
    ``step_fn(params, x, labels) -> (loss, grads)`` and
    ``breakpoint_fn(params, target, iteration) -> (PseudoLabelSet, record)``
    swap the objective and the pseudo-label rule (used by the CE baseline).
    ``on_breakpoint(state, record)`` is called after every break-point.
    Returns the final TrainerState; ``state.log`` holds the training log.
    """
    cfg.validate()
    target = _as_unlabeled(target)
    if len(target) == 0:
        raise InvalidConfig("target dataset is empty")
    stop = cfg.total_iters if stop_at is None else min(stop_at, cfg.total_iters)
    num_classes = int(max(s.labels.max() for s in sources)) + 1
    if state is None:
        state = init_state(sources[0].features.shape[1], cfg)
    pool = target.features if style_pool is None else np.asarray(style_pool)
    schedule = cfg.schedule()
    tcfg = cfg.effective_transform()
    bps = set(cfg.breakpoints())
    src_domains = [(s.features, s.labels) for s in sources]
    if step_fn is None:
        def step_fn(params, x, labels):
            return supclr_backward(params, x, labels, cfg.tau)

    def make_sampler():
        doms = list(src_domains)
        if len(state.pseudo):
            doms.append((target.features[state.pseudo.indices], state.pseudo.labels))
        return BalancedSampler(doms, num_classes, num_required=len(src_domains))

    if breakpoint_fn is None:
        def breakpoint_fn(params, target, it):
            return breakpoint_self_training(params, sources, target, cfg.alpha_m, it,
                                            cfg.self_training, cfg.max_per_class)

    def run_breakpoint(it):
        state.pseudo, record = breakpoint_fn(state.params, target, it)
        state.history.append(record)
        state.log.append(record)
        log.info("break-point it=%d pseudo=%d", it, record["pseudo_count"])
        if on_breakpoint is not None:
            on_breakpoint(state, record)

    sampler = make_sampler()
    for it in range(state.iteration, stop):
        if it in bps and not (state.history and state.history[-1]["iter"] == it):
            run_breakpoint(it)
            sampler = make_sampler()
        batch = create_batch(sampler, num_classes, tcfg, pool, state.rng,
                             balanced=cfg.source_balance, two_view_aug=cfg.two_view_aug)
        if not cfg.augment_pseudo and len(state.pseudo):
            # pseudo-labelled rows keep the raw features in both views
            rows = batch.domain == len(src_domains)
            raw = np.repeat(batch.x[0::2][rows[0::2]], 2, axis=0)
            batch.x[rows] = raw
        loss, grads = step_fn(state.params, batch.x, batch.labels)
        lr = lr_at(schedule, it)
        if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
            raise TrainingDiverged(
                f"non-finite loss at iteration {it}",
                {"iter": it, "loss": loss, "lr": lr,
                 "grad_norms": [float(np.linalg.norm(g)) for g in grads],
                 "param_norms": [float(np.linalg.norm(p)) for p in state.params.tensors()]})
        optimizer_step(state.optimizer, state.params.tensors(), grads, lr)
        state.iteration = it + 1
        if it % cfg.log_interval == 0:
            state.log.append({"event": "step", "iter": it, "loss": loss, "lr": lr})
    if state.iteration == cfg.total_iters and cfg.total_iters in bps and not (
            state.history and state.history[-1]["iter"] == cfg.total_iters):
        run_breakpoint(cfg.total_iters)
    return state


# --- checkpoints -----------------------------------------------------------

def _rng_state(rng):
    return rng.bit_generator.state


def _restore_rng(state):
    name = state["bit_generator"]
    bitgen = getattr(np.random, name)()
    bitgen.state = state
    return np.random.Generator(bitgen)


def save_checkpoint(state: TrainerState, path, config=None, extra=None):
    """Write a self-describing little-endian float64 checkpoint.

    Layout: magic, 8-byte header length, JSON header, raw tensor bytes. The
    header lists every tensor's name and shape plus a SHA-256 of the payload.
    """
    arrays = []
    for i, t in enumerate(state.params.tensors()):
        arrays.append((f"param.{i}", t))
    for i, b in enumerate(state.optimizer.buffers):
        arrays.append((f"buffer.{i}", b))
    arrays.append(("pseudo.distances", state.pseudo.distances))
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrays)
    opt = state.optimizer
    header = {
        "format": "sphereda-checkpoint",
        "version": CHECKPOINT_VERSION,
        "dims": state.params.dims,
        "n_encoder": state.params.n_encoder,
        "normalize_output": state.params.normalize_output,
        "iteration": state.iteration,
        "optimizer": {"kind": opt.kind, "momentum": opt.momentum,
                      "weight_decay": opt.weight_decay, "trust_coeff": opt.trust_coeff,
                      "step_count": opt.step_count},
        "rng": _rng_state(state.rng),
        "pseudo": {"indices": state.pseudo.indices.tolist(),
                   "labels": state.pseudo.labels.tolist(),
                   "created_at": state.pseudo.created_at},
        "history": state.history,
        "log": state.log,
        "tensors": [[name, list(a.shape)] for name, a in arrays],
        "sha256": hashlib.sha256(payload).hexdigest(),
        "config": config,
        "extra": extra,
    }
    head = json.dumps(header, sort_keys=True).encode()
    Path(path).write_bytes(CHECKPOINT_MAGIC + struct.pack("<Q", len(head)) + head + payload)


def read_checkpoint(path):
    """Returns ``(TrainerState, header)``; raises VersionMismatch or ParseError on bad files."""
    try:
        blob = Path(path).read_bytes()
    except OSError:
        raise
    if not blob.startswith(CHECKPOINT_MAGIC):
        raise VersionMismatch(f"{path}: not a checkpoint (bad magic)")
    pos = len(CHECKPOINT_MAGIC)
    if len(blob) < pos + 8:
        raise ParseError(f"{path}: truncated header")
    (n,) = struct.unpack("<Q", blob[pos:pos + 8])
    pos += 8
    try:
        header = json.loads(blob[pos:pos + n].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: corrupt header ({exc})") from None
    if header.get("format") != "sphereda-checkpoint" or header.get("version") != CHECKPOINT_VERSION:
        raise VersionMismatch(f"{path}: unsupported checkpoint version {header.get('version')!r}")
    payload = blob[pos + n:]
    if hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise ParseError(f"{path}: payload checksum mismatch")
    tensors = {}
    off = 0
    for name, shape in header["tensors"]:
        size = int(np.prod(shape)) * 8
        tensors[name] = np.frombuffer(payload[off:off + size], dtype="<f8").reshape(shape).astype(np.float64)
        off += size
    n_param = sum(1 for k in tensors if k.startswith("param."))
    plist = [tensors[f"param.{i}"] for i in range(n_param)]
    params = ModelParams(plist[0::2], plist[1::2], header["n_encoder"], header["normalize_output"])
    o = header["optimizer"]
    opt = OptimizerState(o["kind"], o["momentum"], o["weight_decay"], o["trust_coeff"],
                         [tensors[f"buffer.{i}"] for i in range(n_param)], o["step_count"])
    p = header["pseudo"]
    pseudo = PseudoLabelSet(np.array(p["indices"], dtype=int), np.array(p["labels"], dtype=int),
                            tensors["pseudo.distances"], p["created_at"])
    state = TrainerState(params, opt, _restore_rng(header["rng"]), pseudo,
                         header["history"], header["log"], header["iteration"])
    return state, header


def load_checkpoint(path) -> TrainerState:
    return read_checkpoint(path)[0]
