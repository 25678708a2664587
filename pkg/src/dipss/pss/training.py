"""Training loop and parameter container for the translation model.

Naming follows the translation convention: domain X is the reference
scanner, domain Y the conversion source. ``gen_XtoY`` is G_Y, ``gen_YtoX``
is G_X (the harmonizer used at deployment), ``disc_X`` / ``disc_Y`` judge
each domain.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from ..exceptions import EmptyPool, NonFiniteLoss, ShapeIncompatible
from .losses import adversarial_loss, cycle_loss, generator_adversarial_loss, identity_loss, total_pss_loss
from .networks import Discriminator, Generator, to_unit

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PssTrainConfig:
    lambda_cycle: float = 10.0
    lambda_identity: float = 0.5
    learning_rate: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    batch_size: int = 4
    n_iterations: int = 2000
    decay_start: float = 0.5  # fraction of the budget after which the rate decays linearly to 0
    n_residual_blocks: int = 6
    base_channels: int = 64
    disc_channels: int = 64
    pool_size: int = 50
    value_range: float | None = None  # None: max intensity over both training pools
    input_skip: bool = True
    seed: int = 0
    log_every: int = 1

    def __post_init__(self):
        if self.lambda_cycle < 0 or self.lambda_identity < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.n_iterations < 0:
            raise ValueError("n_iterations must be >= 0")

    def config_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class PssParams:
    gen_XtoY: dict
    gen_YtoX: dict
    disc_X: dict
    disc_Y: dict
    metadata: dict = field(default_factory=dict)
    loss_log: list = field(default_factory=list)

    GROUPS = ("gen_XtoY", "gen_YtoX", "disc_X", "disc_Y")

    def flat(self) -> dict:
        out = {}
        for g in self.GROUPS:
            for k, v in getattr(self, g).items():
                out[f"{g}/{k}"] = v
        return out

    @classmethod
    def from_flat(cls, arrays: dict, metadata: dict) -> "PssParams":
        groups = {g: {} for g in cls.GROUPS}
        for name, arr in arrays.items():
            g, k = name.split("/", 1)
            groups[g][k] = arr
        return cls(**groups, metadata=dict(metadata), loss_log=list(metadata.get("loss_log", [])))

    def generator(self, which="gen_YtoX") -> Generator:
        arch = self.metadata["architecture"]
        g = Generator(arch["base_channels"], arch["n_residual_blocks"], arch.get("input_skip", False))
        g.load_state_dict({k: torch.from_numpy(np.array(v)) for k, v in getattr(self, which).items()})
        return g.eval()

    def discriminator(self, which="disc_X") -> Discriminator:
        arch = self.metadata["architecture"]
        d = Discriminator(tuple(arch["slice_shape"]), arch["disc_channels"])
        d.load_state_dict({k: torch.from_numpy(np.array(v)) for k, v in getattr(self, which).items()})
        return d.eval()

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.flat().values())


def _state(module) -> dict:
    return {k: v.detach().cpu().numpy().copy() for k, v in module.state_dict().items()}


class ImagePool:
    """History of generated slices; half of each query is swapped for stored ones."""

    def __init__(self, size, rng: np.random.Generator):
        self.size = size
        self.rng = rng
        self.images = []

    def query(self, batch: torch.Tensor) -> torch.Tensor:
        if self.size == 0:
            return batch
        out = []
        for img in batch:
            img = img[None]
            if len(self.images) < self.size:
                self.images.append(img.clone())
                out.append(img)
            elif self.rng.uniform() > 0.5:
                i = int(self.rng.integers(self.size))
                out.append(self.images[i].clone())
                self.images[i] = img.clone()
            else:
                out.append(img)
        return torch.cat(out, 0)


def _as_pool(slices) -> np.ndarray:
    arr = np.asarray(slices, dtype=np.float32)
    if arr.ndim != 3:
        raise ShapeIncompatible(f"slice pool must be (n, H, W), got {arr.shape}")
    if len(arr) == 0:
        raise EmptyPool("slice pool is empty")
    return arr


def build_networks(cfg: PssTrainConfig, slice_shape):
    gen_xy = Generator(cfg.base_channels, cfg.n_residual_blocks, cfg.input_skip)
    gen_yx = Generator(cfg.base_channels, cfg.n_residual_blocks, cfg.input_skip)
    disc_x = Discriminator(slice_shape, cfg.disc_channels)
    disc_y = Discriminator(slice_shape, cfg.disc_channels)
    return gen_xy, gen_yx, disc_x, disc_y


def train_pss(domain_x_slices, domain_y_slices, cfg: PssTrainConfig = PssTrainConfig(),
              progress=None) -> PssParams:
    """Alternating generator / discriminator updates on unpaired slice pools.

    ``domain_x_slices`` (reference) and ``domain_y_slices`` (source) are
    ``(n, H, W)`` arrays in display units. Batches are drawn uniformly over
    slices. Returns the final parameters with the per-iteration loss log.
    """
    px, py = _as_pool(domain_x_slices), _as_pool(domain_y_slices)
    if px.shape[1:] != py.shape[1:]:
        raise ShapeIncompatible(f"pools have different slice shapes {px.shape[1:]} / {py.shape[1:]}")
    slice_shape = tuple(int(s) for s in px.shape[1:])
    value_range = cfg.value_range or float(np.ceil(max(px.max(), py.max(), 1.0)))
    rng = np.random.default_rng(cfg.seed)
    tx = to_unit(torch.from_numpy(px), value_range).unsqueeze(1)
    ty = to_unit(torch.from_numpy(py), value_range).unsqueeze(1)

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        gen_xy, gen_yx, disc_x, disc_y = build_networks(cfg, slice_shape)
        _init_weights(gen_xy, gen_yx, disc_x, disc_y)

    betas = (cfg.beta1, cfg.beta2)
    opt_g = torch.optim.Adam(list(gen_xy.parameters()) + list(gen_yx.parameters()), cfg.learning_rate, betas=betas)
    opt_d = torch.optim.Adam(list(disc_x.parameters()) + list(disc_y.parameters()), cfg.learning_rate, betas=betas)
    n = cfg.n_iterations
    decay_from = int(n * cfg.decay_start)

    def lr_factor(it):
        if it < decay_from or n == decay_from:
            return 1.0
        return max(0.0, 1.0 - (it - decay_from) / float(n - decay_from))

    sched_g = torch.optim.lr_scheduler.LambdaLR(opt_g, lr_factor)
    sched_d = torch.optim.lr_scheduler.LambdaLR(opt_d, lr_factor)
    pool_x = ImagePool(cfg.pool_size, np.random.default_rng(rng.integers(2**32)))
    pool_y = ImagePool(cfg.pool_size, np.random.default_rng(rng.integers(2**32)))
    d_params = list(disc_x.parameters()) + list(disc_y.parameters())
    log = []
    for it in range(n):
        x = tx[rng.integers(len(tx), size=cfg.batch_size)]
        y = ty[rng.integers(len(ty), size=cfg.batch_size)]

        for p in d_params:
            p.requires_grad_(False)
        # InstanceNorm works per sample, so stacking inputs into one call is exact
        b = len(x)
        out_y = gen_xy(torch.cat([x, y]))
        out_x = gen_yx(torch.cat([y, x]))
        fake_y, idt_y = out_y[:b], out_y[b:]
        fake_x, idt_x = out_x[:b], out_x[b:]
        rec_x = gen_yx(fake_y)
        rec_y = gen_xy(fake_x)
        l_gan_y = generator_adversarial_loss(disc_y(fake_y))
        l_gan_x = generator_adversarial_loss(disc_x(fake_x))
        l_cyc = cycle_loss(x, rec_x, y, rec_y)
        l_idt = identity_loss(x, idt_x, y, idt_y)
        loss_g = total_pss_loss(l_gan_y, l_gan_x, l_cyc, l_idt, cfg)
        opt_g.zero_grad(set_to_none=True)
        loss_g.backward()
        opt_g.step()

        for p in d_params:
            p.requires_grad_(True)
        fy = pool_y.query(fake_y.detach())
        fx = pool_x.query(fake_x.detach())
        s_y = disc_y(torch.cat([y, fy]))
        s_x = disc_x(torch.cat([x, fx]))
        loss_dy = 0.5 * adversarial_loss(s_y[:b], s_y[b:])
        loss_dx = 0.5 * adversarial_loss(s_x[:b], s_x[b:])
        opt_d.zero_grad(set_to_none=True)
        (loss_dx + loss_dy).backward()
        opt_d.step()
        sched_g.step()
        sched_d.step()

        entry = {
            "iteration": it,
            "loss_G": loss_g.item(),
            "gan_Y": l_gan_y.item(),
            "gan_X": l_gan_x.item(),
            "cycle": l_cyc.item(),
            "identity": l_idt.item(),
            "D_X": loss_dx.item(),
            "D_Y": loss_dy.item(),
        }
        if not all(math.isfinite(v) for v in entry.values()):
            raise NonFiniteLoss(f"non-finite loss at iteration {it}", snapshot=entry)
        if it % cfg.log_every == 0 or it == n - 1:
            log.append(entry)
        if progress is not None:
            progress(it, entry)

    meta = {
        "iteration": n,
        "seed": cfg.seed,
        "config": asdict(cfg),
        "config_hash": cfg.config_hash(),
        "architecture": {
            "base_channels": cfg.base_channels,
            "n_residual_blocks": cfg.n_residual_blocks,
            "disc_channels": cfg.disc_channels,
            "slice_shape": list(slice_shape),
            "value_range": value_range,
            "input_skip": cfg.input_skip,
        },
    }
    return PssParams(_state(gen_xy), _state(gen_yx), _state(disc_x), _state(disc_y), meta, log)


def _init_weights(*modules):
    # N(0, 0.02) conv init of the reference recipe
    for m in modules:
        for layer in m.modules():
            if isinstance(layer, (torch.nn.Conv2d, torch.nn.ConvTranspose2d, torch.nn.Linear)):
                torch.nn.init.normal_(layer.weight, 0.0, 0.02)
                if layer.bias is not None:
                    torch.nn.init.zeros_(layer.bias)
