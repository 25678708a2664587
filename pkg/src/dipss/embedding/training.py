"""Training the autoencoder with reconstruction plus exemplar metric loss."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from ..exceptions import MissingClass, NonFiniteLoss, ShapeIncompatible
from ..volume import DISEASE_LABELS, EMBED_DIMS, HEALTHY_LABELS, Label, Volume
from .losses import DEFAULT_ALPHA, cae_loss
from .network import DEFAULT_CHANNELS, CAE3d

HEALTHY_CLASS = 0
DISEASE_CLASS = 1


def metric_class(label) -> int | None:
    """Two-class partition: AD-like labels -> 1, CN/Control-like -> 0, others
    (PD) -> None, meaning the case never enters training."""
    label = Label(label)
    if label in DISEASE_LABELS:
        return DISEASE_CLASS
    if label in HEALTHY_LABELS:
        return HEALTHY_CLASS
    return None


@dataclass(frozen=True)
class EmbedTrainConfig:
    alpha: float = DEFAULT_ALPHA
    learning_rate: float = 1e-3
    batch_size: int = 8
    epochs: int = 30
    seed: int = 0
    channels: tuple = DEFAULT_CHANNELS
    intensity_scale: float = 255.0  # display units -> [0, 1]

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (one exemplar per class)")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.intensity_scale <= 0:
            raise ValueError("intensity_scale must be positive")
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))

    def config_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class EmbedParams:
    encoder: dict
    decoder: dict
    input_dims: tuple = EMBED_DIMS
    channels: tuple = DEFAULT_CHANNELS
    intensity_scale: float = 255.0
    metadata: dict = field(default_factory=dict)
    loss_log: list = field(default_factory=list)

    def __post_init__(self):
        self.input_dims = tuple(int(d) for d in self.input_dims)
        self.channels = tuple(int(c) for c in self.channels)

    @property
    def embedding_dim(self) -> int:
        return int(np.prod([d // 2 ** len(self.channels) for d in self.input_dims]))

    def network(self) -> CAE3d:
        net = CAE3d(self.input_dims, self.channels)
        state = {f"encoder.{k}": torch.from_numpy(np.array(v)) for k, v in self.encoder.items()}
        state.update({f"decoder.{k}": torch.from_numpy(np.array(v)) for k, v in self.decoder.items()})
        net.load_state_dict(state)
        return net.eval()

    def flat(self) -> dict:
        out = {f"encoder/{k}": v for k, v in self.encoder.items()}
        out.update({f"decoder/{k}": v for k, v in self.decoder.items()})
        return out

    def header(self) -> dict:
        return {
            "input_dims": list(self.input_dims),
            "channels": list(self.channels),
            "intensity_scale": self.intensity_scale,
            "embedding_dim": self.embedding_dim,
            **self.metadata,
            "loss_log": self.loss_log,
        }

    @classmethod
    def from_flat(cls, arrays: dict, header: dict) -> "EmbedParams":
        enc, dec = {}, {}
        for name, arr in arrays.items():
            group, key = name.split("/", 1)
            (enc if group == "encoder" else dec)[key] = arr
        meta = {k: v for k, v in header.items()
                if k not in ("input_dims", "channels", "intensity_scale", "embedding_dim", "loss_log")}
        return cls(enc, dec, tuple(header["input_dims"]), tuple(header["channels"]),
                   float(header["intensity_scale"]), meta, list(header.get("loss_log", [])))

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.flat().values())


def params_from_network(net: CAE3d, intensity_scale=255.0, metadata=None, loss_log=None) -> EmbedParams:
    enc = {k: v.detach().cpu().numpy().copy() for k, v in net.encoder.state_dict().items()}
    dec = {k: v.detach().cpu().numpy().copy() for k, v in net.decoder.state_dict().items()}
    return EmbedParams(enc, dec, net.input_dims, net.channels, float(intensity_scale),
                       dict(metadata or {}), list(loss_log or []))


def init_network(input_dims, channels=DEFAULT_CHANNELS, seed=0) -> CAE3d:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return CAE3d(input_dims, channels)


def stratified_batches(classes: np.ndarray, batch_size: int, rng: np.random.Generator) -> list:
    """Shuffle within each class, interleave classes proportionally, cut into
    batches. A short tail is folded into the previous batch, so every batch
    mixes the classes whenever the class sizes allow it."""
    keys = np.empty(len(classes))
    for c in np.unique(classes):
        idx = np.flatnonzero(classes == c)
        order = rng.permutation(len(idx))
        keys[idx[order]] = (np.arange(len(idx)) + rng.uniform(size=len(idx))) / len(idx)
    order = np.argsort(keys, kind="stable")
    batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    if len(batches) > 1 and len(batches[-1]) < batch_size:
        tail = batches.pop()
        batches[-1] = np.concatenate([batches[-1], tail])
    return batches


def choose_exemplars(batch_classes: np.ndarray, class_ids, rng: np.random.Generator):
    """Return (exemplar positions per class, anchor positions) within a batch,
    or None when a class is absent. Exemplars never act as anchors."""
    ex = []
    for c in class_ids:
        members = np.flatnonzero(batch_classes == c)
        if len(members) == 0:
            return None
        ex.append(int(members[rng.integers(len(members))]))
    anchors = np.setdiff1d(np.arange(len(batch_classes)), ex)
    return np.array(ex), anchors


def batch_objective(net: CAE3d, x: torch.Tensor, classes: np.ndarray, cfg: EmbedTrainConfig,
                    rng: np.random.Generator, class_ids=(HEALTHY_CLASS, DISEASE_CLASS)):
    """Loss on one batch of [0,1]-scaled volumes: mean per-case RMSE plus alpha
    times the mean exemplar cross-entropy over non-exemplar members."""
    z, x_hat = net(x)
    l_rmse = torch.sqrt(((x_hat - x) ** 2).flatten(1).mean(1)).mean()
    picked = choose_exemplars(classes, class_ids, rng)
    if picked is None or len(picked[1]) == 0:
        l_dist = torch.zeros((), dtype=z.dtype)
    else:
        ex, anchors = picked
        d2 = ((z[anchors].unsqueeze(1) - z[ex].unsqueeze(0)) ** 2).sum(-1)
        target = [list(class_ids).index(int(c)) for c in classes[anchors]]
        per = torch.logsumexp(-d2, dim=1) + d2[torch.arange(len(anchors)), target]
        l_dist = per.mean()
    return l_rmse, l_dist, cae_loss(l_rmse, l_dist, cfg)


def train_embedding_arrays(x, classes, cfg: EmbedTrainConfig = EmbedTrainConfig(), case_ids=None,
                           progress=None) -> EmbedParams:
    """Core loop over an (n, d0, d1, d2) array in display units."""
    x = np.asarray(x, dtype=np.float32)
    classes = np.asarray(classes, dtype=int)
    if x.ndim != 4:
        raise ShapeIncompatible(f"expected (n, d0, d1, d2) volumes, got {x.shape}")
    for c in (HEALTHY_CLASS, DISEASE_CLASS):
        if not np.any(classes == c):
            raise MissingClass(f"no training case in metric class {c}")
    input_dims = tuple(int(d) for d in x.shape[1:])
    net = init_network(input_dims, cfg.channels, cfg.seed)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    tx = torch.from_numpy(x / np.float32(cfg.intensity_scale))
    log = []
    for epoch in range(cfg.epochs):
        sums = np.zeros(3)
        batches = stratified_batches(classes, cfg.batch_size, rng)
        for b in batches:
            l_rmse, l_dist, loss = batch_objective(net, tx[b], classes[b], cfg, rng)
            values = (l_rmse.item(), l_dist.item(), loss.item())
            if not all(math.isfinite(v) for v in values):
                raise NonFiniteLoss(f"non-finite loss in epoch {epoch}",
                                    snapshot={"epoch": epoch, "l_rmse": values[0], "l_dist": values[1]})
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            sums += values
        entry = dict(zip(("l_rmse", "l_dist", "loss"), (sums / len(batches)).tolist()))
        entry["epoch"] = epoch
        log.append(entry)
        if progress is not None:
            progress(epoch, entry)
    meta = {
        "config": asdict(cfg),
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "epochs": cfg.epochs,
        "trained_case_ids": list(case_ids) if case_ids is not None else [],
    }
    return params_from_network(net, cfg.intensity_scale, meta, log)


def train_embedding(cases, cfg: EmbedTrainConfig = EmbedTrainConfig(), progress=None) -> EmbedParams:
    """Train on ``(Volume, CaseRecord)`` pairs; cases outside the two metric
    classes (PD) are dropped before training."""
    vols, classes, ids = [], [], []
    for v, rec in cases:
        c = metric_class(rec.label)
        if c is None:
            continue
        vols.append(v.voxels if isinstance(v, Volume) else np.asarray(v))
        classes.append(c)
        ids.append(rec.case_id)
    if not vols:
        raise MissingClass("no trainable cases")
    dims = {tuple(np.shape(a)) for a in vols}
    if len(dims) != 1:
        raise ShapeIncompatible(f"training volumes have mixed dims {sorted(dims)}")
    return train_embedding_arrays(np.stack(vols), classes, cfg, ids, progress)

