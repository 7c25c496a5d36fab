"""Training loop: MSE denoising with per-step fresh noise and a noise-level channel."""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .data import load_split
from .model import UNet3D, save_weights

NOISE_SIGMA_RANGE = (0.0, 0.2)


@dataclass
class TrainConfig:
    batch_size: int = 16
    max_epochs: int = 2000
    lr: float = 1e-3
    lr_drop_factor: float = 0.1
    lr_patience: int = 25
    early_stop_patience: int = 50
    seed: int = 0


def _noisy_batch(clean: torch.Tensor, sigmas: torch.Tensor) -> torch.Tensor:
    noise = torch.randn_like(clean) * sigmas.view(-1, 1, 1, 1)
    level = sigmas.view(-1, 1, 1, 1).expand_as(clean)
    return torch.stack([clean + noise, level], dim=1)


def train(manifest_path, out_path, cfg: TrainConfig | None = None,
          log_path=None, progress=print) -> dict:
    """Train on the manifest's train split, select weights by validation loss.

    Every step draws a fresh noise realization per example with sigma uniform
    in [0, 0.2]; the same sigma fills that example's noise-level channel.
    Validation noise is drawn from a fixed-seed stream so the early-stopping
    signal is comparable across epochs. Returns the training summary.
    """
    cfg = cfg or TrainConfig()
    torch.manual_seed(cfg.seed)
    train_vols = torch.from_numpy(np.stack(load_split(manifest_path, "train")))
    val_vols = torch.from_numpy(np.stack(load_split(manifest_path, "val")))

    val_gen = torch.Generator().manual_seed(cfg.seed + 1)
    val_sigmas = torch.rand(val_vols.shape[0], generator=val_gen) * NOISE_SIGMA_RANGE[1]
    val_noise = torch.randn(val_vols.shape, generator=val_gen)

    model = UNet3D()
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    sched = torch.optim.lr_scheduler.ReduceLROnPlateau(
        opt, factor=cfg.lr_drop_factor, patience=cfg.lr_patience)

    best = {"val_loss": math.inf, "epoch": -1}
    log_rows = []
    n = train_vols.shape[0]
    for epoch in range(cfg.max_epochs):
        t0 = time.time()
        model.train()
        perm = torch.randperm(n)
        train_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            clean = train_vols[idx]
            sigmas = torch.rand(len(idx)) * NOISE_SIGMA_RANGE[1]
            x = _noisy_batch(clean, sigmas)
            opt.zero_grad()
            loss = F.mse_loss(model(x)[:, 0], clean)
            loss.backward()
            opt.step()
            train_loss += loss.item() * len(idx)
        train_loss /= n

        model.eval()
        with torch.no_grad():
            noisy = val_vols + val_noise * val_sigmas.view(-1, 1, 1, 1)
            level = val_sigmas.view(-1, 1, 1, 1).expand_as(val_vols)
            val_loss = F.mse_loss(model(torch.stack([noisy, level], dim=1))[:, 0],
                                  val_vols).item()
        sched.step(val_loss)

        row = {"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss,
               "lr": opt.param_groups[0]["lr"], "seconds": round(time.time() - t0, 2)}
        log_rows.append(row)
        progress(f"epoch {epoch}: train {train_loss:.3e} val {val_loss:.3e} "
                 f"lr {row['lr']:.1e} ({row['seconds']}s)")
        if val_loss < best["val_loss"]:
            best = {"val_loss": val_loss, "epoch": epoch}
            save_weights(out_path, model, meta={"epoch": epoch, "val_loss": val_loss})
        if epoch - best["epoch"] >= cfg.early_stop_patience:
            progress(f"early stop: no val improvement for {cfg.early_stop_patience} epochs")
            break

    if log_path:
        with open(log_path, "w", encoding="utf-8") as fh:
            for row in log_rows:
                fh.write(json.dumps(row) + "\n")
    return {"best_epoch": best["epoch"], "best_val_loss": best["val_loss"],
            "epochs_run": len(log_rows)}
