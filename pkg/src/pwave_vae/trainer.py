"""Self-supervised training on P-aligned spectrogram windows, plus checkpoints.

Checkpoint layout (little-endian)::

    magic   8 bytes   b"PWVAECK1"
    hlen    uint32    length of the JSON header
    header  JSON      {"format": "pwave-vae-checkpoint", "version": 1,
                       "config": {...}, "training_meta": {...},
                       "tensors": [{"name", "shape", "offset"}, ...]}
    data    float32   parameter tensors back to back, offsets in bytes
"""

from __future__ import annotations

import copy
import json
import logging
import math
import struct
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .models import VAE, DivergenceError, ModelConfig, build_model, vae_loss
from .signal_model import DatasetSplit, SignalWindow
from .spectrogram import SpectrogramWindow, stack, to_spectrograms

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"PWVAECK1"
CHECKPOINT_FORMAT = "pwave-vae-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainParams:
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0
    patience: int = 10

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ValueError("epochs, batch_size and patience must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")


@dataclass
class TrainedModel:
    config: ModelConfig
    module: VAE
    training_meta: dict = field(default_factory=dict)

    @property
    def status(self) -> str:
        return self.training_meta.get("status", "OK")

    @property
    def ok(self) -> bool:
        return self.status == "OK"

    def parameters(self) -> dict:
        return {k: v.detach().cpu().numpy() for k, v in self.module.state_dict().items()}


def as_batch(data) -> np.ndarray:
    """Anything window-like -> (n, 1, 32, 92) float32."""
    if isinstance(data, np.ndarray):
        arr = data.astype(np.float32, copy=False)
        if arr.ndim == 2:
            arr = arr[None, None]
        elif arr.ndim == 3:
            arr = arr[:, None]
        return arr
    if isinstance(data, SpectrogramWindow):
        return stack([data])
    items = list(data)
    if items and isinstance(items[0], SignalWindow):
        items = to_spectrograms(items)
    return stack(items)


def _epoch_losses(module, x: np.ndarray, beta: float, batch_size: int = 256):
    if len(x) == 0:
        return None
    module.eval()
    rec = kl = 0.0
    with torch.no_grad():
        for i in range(0, len(x), batch_size):
            xb = torch.from_numpy(x[i : i + batch_size])
            x_hat, latent = module(xb, sample=False)
            _, r, k = vae_loss(xb, x_hat, latent, beta)
            rec += r.item() * len(xb)
            kl += k.item() * len(xb)
    rec /= len(x)
    kl /= len(x)
    return {"rec": rec, "kl": kl, "total": rec + beta * kl}


def train(
    config: ModelConfig,
    data: DatasetSplit,
    hp: TrainParams = TrainParams(),
) -> TrainedModel:
    """Fit a VAE on the P-only train split with Adam and eval-loss selection.

    The returned model carries the parameters of the epoch with the lowest
    eval total loss (epoch 0 is the untrained initialisation). A non-finite
    loss or activation ends the trial with ``status == "FAILED"`` instead of
    raising.
    """
    if not data.train:
        raise ValueError("train split is empty")
    if not all(w.label for w in data.train):
        raise ValueError("train split must contain P-labelled windows only")

    x_train = as_batch(data.train)
    x_eval = as_batch(data.eval) if data.eval else x_train[:0]
    select_on = x_eval if len(x_eval) else x_train

    module = build_model(config, seed=hp.seed)
    opt = torch.optim.Adam(module.parameters(), lr=hp.learning_rate)
    rng = np.random.default_rng(hp.seed)
    gen = torch.Generator().manual_seed(hp.seed)

    history = []
    t0 = time.perf_counter()
    status, diagnostic = "OK", None

    def snapshot(epoch):
        entry = {
            "epoch": epoch,
            "train": _epoch_losses(module, x_train, config.beta),
            "eval": _epoch_losses(module, x_eval, config.beta),
        }
        history.append(entry)
        return entry

    best = (float("nan"), 0, copy.deepcopy(module.state_dict()))
    try:
        snapshot(0)
        sel = _epoch_losses(module, select_on, config.beta)["total"]
        best = (sel, 0, best[2])
        since_best = 0
        for epoch in range(1, hp.epochs + 1):
            module.train()
            order = rng.permutation(len(x_train))
            for i in range(0, len(order), hp.batch_size):
                xb = torch.from_numpy(x_train[order[i : i + hp.batch_size]])
                x_hat, latent = module(xb, sample=True, generator=gen)
                total, _, _ = vae_loss(xb, x_hat, latent, config.beta)
                opt.zero_grad()
                total.backward()
                opt.step()
            entry = snapshot(epoch)
            sel = (entry["eval"] or entry["train"])["total"]
            if not math.isfinite(sel):
                raise DivergenceError(f"non-finite eval loss at epoch {epoch}")
            if sel < best[0]:
                best = (sel, epoch, copy.deepcopy(module.state_dict()))
                since_best = 0
            else:
                since_best += 1
                if since_best >= hp.patience:
                    break
    except DivergenceError as exc:
        status, diagnostic = "FAILED", str(exc)
        log.warning("trial %s diverged: %s", config, exc)

    module.load_state_dict(best[2])
    module.eval()
    meta = {
        "status": status,
        "diagnostic": diagnostic,
        "seed": hp.seed,
        "params": asdict(hp),
        "epochs_run": len(history) - 1,
        "best_epoch": best[1],
        "best_eval_total": best[0],
        "history": history,
        "wall_time_s": time.perf_counter() - t0,
    }
    return TrainedModel(config=config, module=module, training_meta=meta)


def reconstruct(model: TrainedModel, x, batch_size: int = 256) -> np.ndarray:
    """Deterministic (z = mu) reconstruction.

    A single window gives a (32, 92) array; a batch gives (n, 32, 92).
    """
    single = isinstance(x, SpectrogramWindow) or (isinstance(x, np.ndarray) and x.ndim == 2)
    xb = as_batch(x)
    out = []
    model.module.eval()
    with torch.no_grad():
        for i in range(0, len(xb), batch_size):
            x_hat, _ = model.module(torch.from_numpy(xb[i : i + batch_size]), sample=False)
            out.append(x_hat.numpy()[:, 0])
    res = np.concatenate(out) if out else np.zeros((0,) + xb.shape[2:], np.float32)
    return res[0] if single else res


# --- checkpoints -----------------------------------------------------------


def save_checkpoint(model: TrainedModel, path) -> None:
    tensors, chunks, offset = [], [], 0
    for name, t in model.module.state_dict().items():
        arr = t.detach().cpu().numpy().astype("<f4")
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        # wall time would make otherwise identical checkpoints differ
        "training_meta": {k: v for k, v in model.training_meta.items() if k != "wall_time_s"},
        "tensors": tensors,
    }
    blob = json.dumps(header, default=float).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for c in chunks:
            f.write(c)


def load_checkpoint(path) -> TrainedModel:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12 : 12 + hlen])
    if header.get("format") != CHECKPOINT_FORMAT or header.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint format {header.get('format')!r}")
    body = raw[12 + hlen :]
    config = ModelConfig.from_dict(header["config"])
    module = VAE(config)
    state = {}
    for t in header["tensors"]:
        n = int(np.prod(t["shape"])) if t["shape"] else 1
        arr = np.frombuffer(body, dtype="<f4", count=n, offset=t["offset"]).reshape(t["shape"])
        state[t["name"]] = torch.from_numpy(arr.astype(np.float32))
    module.load_state_dict(state)
    module.eval()
    return TrainedModel(config=config, module=module, training_meta=header["training_meta"])

