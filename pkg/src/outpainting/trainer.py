"""Three-phase adversarial training.

Phase 1 fits the generator to the masked reconstruction loss, phase 2 warms
up the discriminator against the frozen generator, and phase 3 alternates a
discriminator step and a generator step on the same minibatch.
"""
import csv
import hashlib
import io
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch

from .dataset import DatasetManifest, load_split, prefetch_batches
from .network import Discriminator, Generator, make_discriminator, make_generator
from .objectives import disc_loss, gen_loss, mse_loss, normalize, renormalize, rmse
from .preprocess import OutpaintGeometry, assemble_input, build_mask

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 1
LOSS_LOG_HEADER = ["iteration", "phase", "train_mse", "dev_mse", "disc_loss", "gen_loss"]


class Phase(str, Enum):
    P1 = "P1_generator_mse"
    P2 = "P2_discriminator"
    P3 = "P3_adversarial"


class CheckpointFormatError(RuntimeError):
    pass


class TrainingDivergedError(RuntimeError):
    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record


@dataclass
class TrainingSchedule:
    t1: int
    t2: int
    t3: int
    alpha: float = 0.0004
    batch_size: int = 16
    learning_rate: float = 1e-3
    seed: int = 0
    eval_interval: int = 500
    checkpoint_interval: int = 5000

    def __post_init__(self):
        if min(self.t1, self.t2, self.t3) < 0:
            raise ValueError("phase lengths must be non-negative")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.eval_interval < 1 or self.checkpoint_interval < 1:
            raise ValueError("eval and checkpoint intervals must be >= 1")

    @property
    def total(self) -> int:
        return self.t1 + self.t2 + self.t3

    def boundaries(self) -> Tuple[int, int, int]:
        return self.t1, self.t1 + self.t2, self.total


def phase_of(iteration: int, schedule: TrainingSchedule) -> Phase:
    if not 0 <= iteration < schedule.total:
        raise ValueError(f"iteration {iteration} outside [0, {schedule.total})")
    if iteration < schedule.t1:
        return Phase.P1
    if iteration < schedule.t1 + schedule.t2:
        return Phase.P2
    return Phase.P3


@dataclass
class LossRecord:
    iteration: int
    phase: Phase
    train_mse: float
    dev_mse: Optional[float] = None
    disc_loss: Optional[float] = None
    gen_loss: Optional[float] = None

    def csv_row(self) -> List[str]:
        fmt = lambda v: "" if v is None else repr(float(v))
        return [str(self.iteration), self.phase.value, fmt(self.train_mse), fmt(self.dev_mse),
                fmt(self.disc_loss), fmt(self.gen_loss)]


@dataclass
class TrainingState:
    """Everything needed to continue training bit-for-bit: the checkpoint payload."""

    generator: Generator
    discriminator: Discriminator
    g_opt: torch.optim.Optimizer
    d_opt: torch.optim.Optimizer
    schedule: TrainingSchedule
    geometry: OutpaintGeometry
    dilations: Tuple[int, int, int] = (2, 4, 8)
    use_local: bool = False
    iteration: int = 0

    @classmethod
    def create(cls, schedule: TrainingSchedule, geometry: OutpaintGeometry,
               dilations: Sequence[int] = (2, 4, 8), use_local: bool = False) -> "TrainingState":
        torch.manual_seed(schedule.seed)
        gen = make_generator(dilations, seed=schedule.seed)
        disc = make_discriminator(geometry.m, geometry.total_width, use_local, seed=schedule.seed + 1)
        return cls(gen, disc, _adam(gen, schedule), _adam(disc, schedule), schedule, geometry,
                   tuple(int(d) for d in dilations), use_local)

    @property
    def mask(self) -> np.ndarray:
        return build_mask(self.geometry)


def _adam(module: torch.nn.Module, schedule: TrainingSchedule) -> torch.optim.Adam:
    return torch.optim.Adam(module.parameters(), lr=schedule.learning_rate)


def _batch_tensors(batch, mask: np.ndarray, dtype) -> Tuple[torch.Tensor, torch.Tensor]:
    images = np.stack([np.asarray(b) for b in batch]).astype(np.float32)
    truth, gen_input = assemble_input(images, mask)
    to_t = lambda a: torch.from_numpy(np.ascontiguousarray(a.transpose(0, 3, 1, 2))).to(dtype)
    return to_t(truth), to_t(gen_input)


def _check_finite(record: LossRecord, *values):
    if not all(math.isfinite(float(v)) for v in values):
        raise TrainingDivergedError(f"non-finite loss at iteration {record.iteration}: {record}", record)


def train_step(state: TrainingState, batch, geometry: Optional[OutpaintGeometry] = None
               ) -> Tuple[TrainingState, LossRecord]:
    """Run one iteration of the schedule in place and return ``(state, record)``."""
    geometry = geometry or state.geometry
    if geometry != state.geometry:
        raise ValueError(f"batch geometry {geometry} differs from the model's {state.geometry}")
    phase = phase_of(state.iteration, state.schedule)
    mask = build_mask(geometry)
    dtype = next(state.generator.parameters()).dtype
    truth, gen_input = _batch_tensors(batch, mask, dtype)
    gen, disc = state.generator, state.discriminator
    record = LossRecord(state.iteration, phase, float("nan"))

    if phase is Phase.P1:
        state.g_opt.zero_grad(set_to_none=True)
        loss = mse_loss(gen(gen_input), truth, mask)
        record.train_mse = loss.item()
        _check_finite(record, record.train_mse)
        loss.backward()
        state.g_opt.step()
    elif phase is Phase.P2:
        with torch.no_grad():
            fake = gen(gen_input)
            record.train_mse = mse_loss(fake, truth, mask).item()
        record.disc_loss = _disc_update(state, truth, fake)
        _check_finite(record, record.train_mse, record.disc_loss)
    else:
        fake = gen(gen_input)
        mse = mse_loss(fake, truth, mask)
        record.train_mse = mse.item()
        record.disc_loss = _disc_update(state, truth, fake.detach())
        state.g_opt.zero_grad(set_to_none=True)
        loss = gen_loss(mse, disc(fake), state.schedule.alpha)
        record.gen_loss = loss.item()
        _check_finite(record, record.train_mse, record.disc_loss, record.gen_loss)
        loss.backward()
        state.g_opt.step()
        state.d_opt.zero_grad(set_to_none=True)

    state.iteration += 1
    return state, record


def _disc_update(state: TrainingState, real: torch.Tensor, fake: torch.Tensor) -> float:
    state.d_opt.zero_grad(set_to_none=True)
    loss = disc_loss(state.discriminator(real), state.discriminator(fake))
    value = loss.item()
    if math.isfinite(value):
        loss.backward()
        state.d_opt.step()
    return value


def evaluate_mse(generator: Generator, images: Sequence[np.ndarray], mask: np.ndarray,
                 chunk: int = 16) -> float:
    """Mean masked MSE of the generator over normalized ``images``."""
    dtype = next(generator.parameters()).dtype
    total = 0.0
    with torch.no_grad():
        for start in range(0, len(images), chunk):
            part = images[start:start + chunk]
            truth, gen_input = _batch_tensors(part, mask, dtype)
            total += mse_loss(generator(gen_input), truth, mask).item() * len(part)
    return total / len(images)


# ---------------------------------------------------------------- checkpoints

def _state_payload(state: TrainingState) -> dict:
    return {
        "format_version": CHECKPOINT_FORMAT,
        "generator": state.generator.state_dict(),
        "discriminator": state.discriminator.state_dict(),
        "g_opt": state.g_opt.state_dict(),
        "d_opt": state.d_opt.state_dict(),
        "iteration": state.iteration,
        "schedule": asdict(state.schedule),
        "geometry": asdict(state.geometry),
        "dilations": list(state.dilations),
        "use_local": state.use_local,
        "torch_rng": torch.get_rng_state(),
    }


def _atomic_write(path: Path, data: bytes):
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def save_checkpoint(state: TrainingState, path) -> Path:
    """Write ``path`` (torch binary) and its JSON sidecar, each via temp file + rename."""
    path = Path(path)
    buf = io.BytesIO()
    torch.save(_state_payload(state), buf)
    data = buf.getvalue()
    _atomic_write(path, data)
    meta = {
        "format_version": CHECKPOINT_FORMAT,
        "iteration": state.iteration,
        "schedule": asdict(state.schedule),
        "geometry": asdict(state.geometry),
        "dilations": list(state.dilations),
        "use_local": state.use_local,
        "sha256": hashlib.sha256(data).hexdigest(),
        "size": len(data),
    }
    _atomic_write(sidecar_path(path), (json.dumps(meta, indent=2, sort_keys=True) + "\n").encode())
    return path


def load_checkpoint(path) -> TrainingState:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    try:
        meta = json.loads(sidecar_path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"missing or unreadable sidecar for {path}: {exc}") from exc
    if meta.get("format_version") != CHECKPOINT_FORMAT:
        raise CheckpointFormatError(
            f"{path} has format {meta.get('format_version')}, expected {CHECKPOINT_FORMAT}")
    data = path.read_bytes()
    if len(data) != meta["size"] or hashlib.sha256(data).hexdigest() != meta["sha256"]:
        raise CheckpointFormatError(f"{path} is truncated or corrupt (checksum mismatch)")
    try:
        payload = torch.load(io.BytesIO(data), weights_only=True)
    except Exception as exc:  # torch raises several unrelated types on bad data
        raise CheckpointFormatError(f"cannot decode checkpoint {path}: {exc}") from exc

    schedule = TrainingSchedule(**payload["schedule"])
    geometry = OutpaintGeometry(**payload["geometry"])
    state = TrainingState.create(schedule, geometry, payload["dilations"], payload["use_local"])
    state.generator.load_state_dict(payload["generator"])
    state.discriminator.load_state_dict(payload["discriminator"])
    state.g_opt.load_state_dict(payload["g_opt"])
    state.d_opt.load_state_dict(payload["d_opt"])
    state.iteration = int(payload["iteration"])
    torch.set_rng_state(payload["torch_rng"])
    return state


def checkpoint_name(iteration: int) -> str:
    return f"checkpoint_{iteration:07d}.pt"


def find_latest_checkpoint(out_dir) -> Optional[Path]:
    found = sorted(Path(out_dir).glob("checkpoint_*.pt"))
    return found[-1] if found else None


# ---------------------------------------------------------------- loss log

class LossLog:
    """CSV loss log; rows past the resume point are dropped when reopened."""

    def __init__(self, path, start_iteration: int = 0):
        self.path = Path(path)
        rows = []
        if start_iteration > 0 and self.path.exists():
            with open(self.path, newline="") as fh:
                rows = [r for r in csv.reader(fh)][1:]
            rows = [r for r in rows if int(r[0]) < start_iteration]
        with open(self.path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(LOSS_LOG_HEADER)
            writer.writerows(rows)

    def append(self, record: LossRecord):
        with open(self.path, "a", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow(record.csv_row())


def read_loss_log(path) -> List[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------- driver

def run_training(manifest: DatasetManifest, schedule: TrainingSchedule, out_dir,
                 geometry: Optional[OutpaintGeometry] = None, dilations: Sequence[int] = (2, 4, 8),
                 use_local: bool = False, resume: bool = True, stop_at: Optional[int] = None,
                 prefetch_workers: int = 2) -> TrainingState:
    """Train for the full schedule, writing checkpoints and ``loss_log.csv`` into ``out_dir``.

    With ``resume`` the latest checkpoint in ``out_dir`` is continued.
    ``stop_at`` halts (with a checkpoint) before that iteration, which is
    how interrupted runs are simulated.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if geometry is None:
        h, w = manifest.target_size
        geometry = OutpaintGeometry(h, w // 2, w // 4)
    if geometry.shape != tuple(manifest.target_size):
        raise ValueError(f"geometry {geometry.shape} does not match images {manifest.target_size}")

    latest = find_latest_checkpoint(out) if resume else None
    if latest is not None:
        state = load_checkpoint(latest)
        if state.schedule != schedule or state.geometry != geometry:
            raise ValueError(f"checkpoint {latest} was written for a different schedule or geometry")
        logger.info("resuming from %s at iteration %d", latest, state.iteration)
    else:
        state = TrainingState.create(schedule, geometry, dilations, use_local)

    log = LossLog(out / "loss_log.csv", state.iteration)
    mask = state.mask
    val_images = [normalize(p) for p in load_split(manifest.val_paths, manifest.target_size)]
    boundaries = set(schedule.boundaries())
    end = schedule.total if stop_at is None else min(stop_at, schedule.total)

    batches = prefetch_batches(manifest, schedule.batch_size, range(state.iteration, end),
                               workers=prefetch_workers)
    for batch in batches:
        try:
            _, record = train_step(state, batch, geometry)
        except TrainingDivergedError as exc:
            last = find_latest_checkpoint(out)
            logger.error("%s; last durable checkpoint: %s", exc, last)
            raise
        done = state.iteration
        if val_images and (done % schedule.eval_interval == 0 or done == schedule.total):
            record.dev_mse = evaluate_mse(state.generator, val_images, mask)
        log.append(record)
        if done % schedule.checkpoint_interval == 0 or done in boundaries:
            _checkpoint(state, out)
        if done % 100 == 0:
            logger.info("iter %d %s train_mse=%.4f", done, record.phase.value, record.train_mse)
    if state.iteration == end and end < schedule.total:
        _checkpoint(state, out)
    return state


def _checkpoint(state: TrainingState, out: Path):
    try:
        save_checkpoint(state, out / checkpoint_name(state.iteration))
    except OSError as exc:
        raise OSError(f"checkpoint write failed at iteration {state.iteration}; "
                      f"last durable checkpoint: {find_latest_checkpoint(out)}") from exc


# ---------------------------------------------------------------- overfit check

@dataclass
class OverfitReport:
    iterations: int
    schedule: dict
    baseline_rmse: float
    initial_rmse: float
    final_rmse: float
    curve: List[Tuple[int, float]] = field(default_factory=list)

    def rmse_at_fraction(self, fraction: float) -> float:
        target = math.ceil(fraction * self.iterations)
        return next(r for it, r in self.curve if it >= target)


def overfit_schedule(iterations: int, seed: int = 0, alpha: float = 0.0004,
                     learning_rate: float = 1e-3, phase3_fraction: float = 0.1) -> TrainingSchedule:
    t3 = int(round(iterations * phase3_fraction))
    return TrainingSchedule(iterations - t3, 0, t3, alpha=alpha, batch_size=1,
                            learning_rate=learning_rate, seed=seed)


def output_rmse(generator: Generator, pixels: np.ndarray, mask: np.ndarray) -> float:
    """Masked RMSE of the renormalized generator output against ``pixels``."""
    dtype = next(generator.parameters()).dtype
    truth, gen_input = _batch_tensors([normalize(pixels)], mask, dtype)
    with torch.no_grad():
        out = generator(gen_input)[0].permute(1, 2, 0).numpy()
    return rmse(pixels, renormalize(out), mask)


def overfit_single_image(pixels: np.ndarray, iterations: int, seed: int = 0,
                         dilations: Sequence[int] = (2, 4, 8), marks: int = 10,
                         schedule: Optional[TrainingSchedule] = None) -> OverfitReport:
    """Train on one image (also the test image) and track masked RMSE at ``marks`` evenly spaced points."""
    h, w = pixels.shape[:2]
    geometry = OutpaintGeometry(h, w // 2, w // 4)
    mask = build_mask(geometry)
    schedule = schedule or overfit_schedule(iterations, seed)
    state = TrainingState.create(schedule, geometry, dilations, use_local=False)
    baseline = rmse(pixels, renormalize(assemble_input(normalize(pixels), mask).generator_input[..., :3]), mask)
    initial = output_rmse(state.generator, pixels, mask)
    checkpoints = {math.ceil(iterations * i / marks) for i in range(1, marks + 1)}
    curve = []
    batch = [normalize(pixels)]
    while state.iteration < schedule.total:
        train_step(state, batch, geometry)
        if state.iteration in checkpoints:
            curve.append((state.iteration, output_rmse(state.generator, pixels, mask)))
            logger.info("overfit iter %d rmse %.3f", *curve[-1])
    final = curve[-1][1] if curve else initial
    return OverfitReport(iterations, asdict(schedule), baseline, initial, final, curve)
