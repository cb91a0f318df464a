"""Training loop: component estimation, reconstruction, loss, Adam update.

One step runs the scene net and the transmission net(s) on the raw image,
takes the closed-form background light (a constant — it carries no
gradient), recomposes the observation under the selected formation model,
applies the total loss, and performs one bias-corrected Adam update over
every trainable weight. The transmission nets have no direct supervision;
their only gradient path is the reconstruction terms, so disabling those
terms provably zeroes their gradients.

Checkpoints are a small binary container: magic "MUIE1", a length-prefixed
JSON config block, then named float32 tensors.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import gbl, metrics
from .autodiff import Tensor
from .errors import CheckpointError, TrainingDivergedError
from .formation import FormationModel, reconstruct_tensor
from .imageio import resize_bilinear
from .losses import LossBreakdown, LossWeights, total_loss
from .nets import Enhancer, JNetConfig

# Full-scale recipe uses lr = 2e-8 with batch size 1; at desk scale that
# cannot move a fresh model measurably, so the default is 1e-3.
FULL_SCALE_LR = 2e-8

CHECKPOINT_MAGIC = b"MUIE1"


@dataclass
class TrainConfig:
    formation_model: FormationModel = FormationModel.REVISED
    loss_weights: LossWeights = field(default_factory=LossWeights)
    jnet: JNetConfig = field(default_factory=JNetConfig)
    tnet_channels: int = 16
    size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 1
    steps: int = 500
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.formation_model, str):
            self.formation_model = FormationModel(self.formation_model)
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["formation_model"] = self.formation_model.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["loss_weights"] = LossWeights(**d.get("loss_weights", {}))
        d["jnet"] = JNetConfig(**d.get("jnet", {}))
        return cls(**d)


@dataclass
class AdamState:
    """First/second moment accumulators per parameter name, plus the step."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def init(cls, params: dict[str, Tensor]) -> "AdamState":
        return cls(m={n: np.zeros_like(p.data) for n, p in params.items()},
                   v={n: np.zeros_like(p.data) for n, p in params.items()})


def adam_step(params: dict[str, Tensor], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam update in place, reading each parameter's .grad."""
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = p.grad
        if g is None:
            raise ValueError(f"parameter {name} has no gradient")
        state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * g * g
        m_hat = state.m[name] / c1
        v_hat = state.v[name] / c2
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)


def build_model(config: TrainConfig) -> Enhancer:
    return Enhancer(config.jnet, config.tnet_channels, config.size,
                    config.formation_model, config.seed)


def forward_components(model: Enhancer, raw_chw: Tensor):
    """Run the estimators; under single-map models the backscatter net is
    skipped entirely (its gradients stay exactly zero)."""
    j = model.jnet(raw_chw)
    t_d = model.tdnet(raw_chw)
    t_b = (model.tbnet(raw_chw)
           if model.formation_model is FormationModel.REVISED else None)
    return j, t_d, t_b


def _component_stats(name: str, arr: np.ndarray) -> str:
    return (f"{name}: min={np.min(arr):.4g} max={np.max(arr):.4g} "
            f"mean={np.mean(arr):.4g} finite={bool(np.all(np.isfinite(arr)))}")


def train_step(raw_hwc: np.ndarray, label_hwc: np.ndarray, model: Enhancer,
               state: AdamState, config: TrainConfig) -> LossBreakdown:
    """One optimization step on an (H,W,3) raw/label pair at the model size."""
    if raw_hwc.shape != label_hwc.shape:
        raise ValueError(f"raw/label shapes differ: {raw_hwc.shape} vs {label_hwc.shape}")
    x = Tensor(np.moveaxis(raw_hwc, 2, 0))
    label = Tensor(np.moveaxis(label_hwc, 2, 0))

    model.zero_grads()
    j, t_d, t_b = forward_components(model, x)
    a_const = Tensor(gbl.estimate_background_light(raw_hwc))  # no gradient path
    recon = reconstruct_tensor(model.formation_model, j, t_d, t_b, a_const,
                               psf=model.psf)
    breakdown = total_loss(j, label, x, recon, config.loss_weights)
    if not np.isfinite(breakdown.total):
        parts = [
            _component_stats("J", j.data),
            _component_stats("T_D", t_d.data),
            _component_stats("recon", recon.data),
            _component_stats("A", a_const.data),
        ]
        if t_b is not None:
            parts.append(_component_stats("T_B", t_b.data))
        raise TrainingDivergedError(
            "non-finite loss; component statistics:\n  " + "\n  ".join(parts))
    breakdown.tensor.backward()
    adam_step(model.named_params(), state, config.lr, config.beta1,
              config.beta2, config.adam_eps)
    return breakdown


@dataclass
class TrainingReport:
    steps: list[dict]
    initial_psnr: float
    final_psnr: float

    @property
    def initial_total(self) -> float:
        return self.steps[0]["total"] if self.steps else float("nan")

    @property
    def final_total(self) -> float:
        return self.steps[-1]["total"] if self.steps else float("nan")


def _psnr_of_output(model: Enhancer, raw_hwc: np.ndarray, label_hwc: np.ndarray) -> float:
    j = model.jnet(Tensor(np.moveaxis(raw_hwc, 2, 0)))
    _, psnr = metrics.mse_psnr(np.moveaxis(j.data, 0, 2), label_hwc)
    return psnr


def overfit_single(raw_hwc: np.ndarray, label_hwc: np.ndarray, steps: int,
                   config: TrainConfig, log_path=None
                   ) -> tuple[Enhancer, AdamState, TrainingReport]:
    """Desk-scale driver: repeat `train_step` on one resized pair.

    Returns the trained model, optimizer state, and a report carrying the
    loss curve and the initial/final PSNR of the scene estimate.
    """
    raw = resize_bilinear(raw_hwc, config.size, config.size)
    label = resize_bilinear(label_hwc, config.size, config.size)
    model = build_model(config)
    state = AdamState.init(model.named_params())
    initial_psnr = _psnr_of_output(model, raw, label)
    records: list[dict] = []
    log_file = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for step in range(steps):
            breakdown = train_step(raw, label, model, state, config)
            record = {"step": step, **breakdown.as_record()}
            records.append(record)
            if log_file:
                log_file.write(json.dumps(record, sort_keys=True) + "\n")
    finally:
        if log_file:
            log_file.close()
    final_psnr = _psnr_of_output(model, raw, label)
    return model, state, TrainingReport(records, initial_psnr, final_psnr)


def train_pairs(pairs: list[tuple[np.ndarray, np.ndarray]], steps: int,
                config: TrainConfig, log_path=None
                ) -> tuple[Enhancer, AdamState, TrainingReport]:
    """Train over (raw, label) pairs, cycling in manifest order for `steps`."""
    if not pairs:
        raise ValueError("no training pairs")
    resized = [(resize_bilinear(r, config.size, config.size),
                resize_bilinear(l, config.size, config.size)) for r, l in pairs]
    model = build_model(config)
    state = AdamState.init(model.named_params())
    first_raw, first_label = resized[0]
    initial_psnr = _psnr_of_output(model, first_raw, first_label)
    records: list[dict] = []
    log_file = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for step in range(steps):
            raw, label = resized[step % len(resized)]
            breakdown = train_step(raw, label, model, state, config)
            record = {"step": step, **breakdown.as_record()}
            records.append(record)
            if log_file:
                log_file.write(json.dumps(record, sort_keys=True) + "\n")
    finally:
        if log_file:
            log_file.close()
    final_psnr = _psnr_of_output(model, first_raw, first_label)
    return model, state, TrainingReport(records, initial_psnr, final_psnr)


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------

def _write_tensor(f, name: str, arr: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    f.write(struct.pack("<I", len(encoded)))
    f.write(encoded)
    f.write(struct.pack("<I", arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    f.write(arr.astype("<f4").tobytes())


def save_checkpoint(path, weights: dict[str, Tensor], state: AdamState | None,
                    config: TrainConfig) -> None:
    """Serialize weights (and optimizer moments, if given) with the config."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {"config": config.to_dict(), "step": state.step if state else 0}
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    tensors: list[tuple[str, np.ndarray]] = [(n, p.data) for n, p in weights.items()]
    if state is not None:
        tensors += [("adam.m." + n, state.m[n]) for n in weights]
        tensors += [("adam.v." + n, state.v[n]) for n in weights]
    with path.open("wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        f.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors:
            _write_tensor(f, name, arr)


@dataclass
class Checkpoint:
    config: TrainConfig
    step: int
    tensors: dict[str, np.ndarray]


def _read_exact(f, count: int, what: str) -> bytes:
    data = f.read(count)
    if len(data) != count:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return data


def load_checkpoint(path) -> Checkpoint:
    """Parse a checkpoint; rejects bad magic and truncation outright."""
    path = Path(path)
    with path.open("rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: unknown checkpoint magic {magic!r}")
        (header_len,) = struct.unpack("<I", _read_exact(f, 4, "header length"))
        try:
            header = json.loads(_read_exact(f, header_len, "header"))
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"{path}: malformed config block: {exc}") from exc
        (count,) = struct.unpack("<I", _read_exact(f, 4, "tensor count"))
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", _read_exact(f, 4, "tensor name length"))
            name = _read_exact(f, name_len, "tensor name").decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(f, 4, f"rank of {name}"))
            shape = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank, f"shape of {name}"))
            n_values = int(np.prod(shape)) if rank else 1
            payload = _read_exact(f, 4 * n_values, f"data of {name}")
            tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float64)
    try:
        config = TrainConfig.from_dict(header["config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: invalid config block: {exc}") from exc
    return Checkpoint(config=config, step=int(header.get("step", 0)), tensors=tensors)


def bind_weights(model: Enhancer, tensors: dict[str, np.ndarray]) -> None:
    """Copy checkpoint tensors into a model; mismatches name the tensor."""
    for name, p in model.named_params().items():
        if name not in tensors:
            raise CheckpointError(f"checkpoint is missing tensor {name!r}")
        arr = tensors[name]
        if arr.shape != p.data.shape:
            raise CheckpointError(
                f"checkpoint tensor {name!r} has shape {arr.shape}, "
                f"model expects {p.data.shape}")
        p.data = arr.copy()


def load_adam_state(checkpoint: Checkpoint, params: dict[str, Tensor]) -> AdamState:
    state = AdamState.init(params)
    state.step = checkpoint.step
    for name in params:
        for prefix, store in (("adam.m.", state.m), ("adam.v.", state.v)):
            key = prefix + name
            if key in checkpoint.tensors:
                arr = checkpoint.tensors[key]
                if arr.shape != params[name].data.shape:
                    raise CheckpointError(
                        f"checkpoint tensor {key!r} has shape {arr.shape}, "
                        f"model expects {params[name].data.shape}")
                store[name] = arr.copy()
    return state
