"""Binary checkpoint format for model state.

Layout (all integers little-endian):

  magic b"MBRC" | version u32 | M N K d L activation_id as u32 each
  then exactly ten named arrays in a fixed order:
    P, Q, W_view, W_add, W_purchase, W_beh, theta, W_fus, W_int, W_pre
  each as: name_len u16 | name utf-8 | ndim u8 | dims u32[ndim] | float32 data
  then optional tagged sections, in order:
    b"OPTS": optimizer hyperparameters, step count, and moment arrays
    b"CFGT": the resolved config text, so a checkpoint is self-describing

The three behavior-type embeddings are stored as separate arrays even though
the model holds them as rows of one tensor.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import TrainConfig
from .data import NUM_BEHAVIORS
from .model import ACTIVATION_IDS, ParameterSet

MAGIC = b"MBRC"
VERSION = 1
ARRAY_ORDER = (
    "P", "Q", "W_view", "W_add", "W_purchase",
    "W_beh", "theta", "W_fus", "W_int", "W_pre",
)
OPTS_TAG = b"OPTS"
CFG_TAG = b"CFGT"


class CheckpointError(ValueError):
    pass


def _pack_array(name: str, arr: np.ndarray) -> bytes:
    data = np.ascontiguousarray(arr, dtype="<f4")
    encoded = name.encode("utf-8")
    parts = [struct.pack("<H", len(encoded)), encoded,
             struct.pack("<B", data.ndim),
             struct.pack(f"<{data.ndim}I", *data.shape)]
    parts.append(data.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError("truncated checkpoint")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    @property
    def remaining(self) -> int:
        return len(self.blob) - self.pos


def _read_array(r: _Reader) -> tuple:
    (name_len,) = r.unpack("<H")
    name = r.take(name_len).decode("utf-8")
    (ndim,) = r.unpack("<B")
    dims = r.unpack(f"<{ndim}I") if ndim else ()
    count = 1
    for d in dims:
        count *= d
    data = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(dims).copy()
    return name, data


def _params_arrays(params: ParameterSet) -> dict:
    tensors = {name: t.detach().cpu().numpy() for name, t in params.named()}
    w_type = tensors.pop("W_type")
    out = {
        "P": tensors["P"],
        "Q": tensors["Q"],
        "W_view": w_type[0],
        "W_add": w_type[1],
        "W_purchase": w_type[2],
        "W_beh": tensors["W_beh"],
        "theta": tensors["theta"],
        "W_fus": tensors["W_fus"],
        "W_int": tensors["W_int"],
        "W_pre": tensors["W_pre"],
    }
    return out


def save_checkpoint(
    path,
    params: ParameterSet,
    cfg: TrainConfig,
    optimizer_state: dict | None = None,
) -> None:
    arrays = _params_arrays(params)
    parts = [MAGIC, struct.pack("<I", VERSION)]
    parts.append(struct.pack(
        "<6I",
        params.num_users,
        params.num_items,
        NUM_BEHAVIORS,
        params.embed_dim,
        params.num_layers,
        ACTIVATION_IDS[cfg.activation],
    ))
    for name in ARRAY_ORDER:
        parts.append(_pack_array(name, arrays[name]))

    if optimizer_state is not None:
        parts.append(OPTS_TAG)
        parts.append(struct.pack(
            "<ddddI",
            optimizer_state["lr"],
            optimizer_state["beta1"],
            optimizer_state["beta2"],
            optimizer_state["eps"],
            optimizer_state["step_count"],
        ))
        moment_names = sorted(optimizer_state["m"])
        parts.append(struct.pack("<H", 2 * len(moment_names)))
        for slot in ("m", "v"):
            for name in moment_names:
                arr = optimizer_state[slot][name].detach().cpu().numpy()
                parts.append(_pack_array(f"{slot}.{name}", arr))

    cfg_text = cfg.to_text().encode("utf-8")
    parts.append(CFG_TAG)
    parts.append(struct.pack("<I", len(cfg_text)))
    parts.append(cfg_text)
    Path(path).write_bytes(b"".join(parts))


@dataclass
class Checkpoint:
    num_users: int
    num_items: int
    num_behaviors: int
    embed_dim: int
    num_layers: int
    activation_id: int
    arrays: dict
    config_text: str | None = None
    optimizer_state: dict | None = None

    def config(self) -> TrainConfig | None:
        if self.config_text is None:
            return None
        return TrainConfig.from_text(self.config_text)

    def to_params(self, cfg: TrainConfig) -> ParameterSet:
        if cfg.embed_dim != self.embed_dim:
            raise CheckpointError(
                f"config embed_dim {cfg.embed_dim} != checkpoint {self.embed_dim}"
            )
        if cfg.effective_layers != self.num_layers:
            raise CheckpointError(
                f"config resolves to {cfg.effective_layers} layers, "
                f"checkpoint holds {self.num_layers}"
            )
        if ACTIVATION_IDS[cfg.activation] != self.activation_id:
            raise CheckpointError("activation mismatch with checkpoint header")
        a = self.arrays
        w_type = np.stack([a["W_view"], a["W_add"], a["W_purchase"]])
        tensors = {
            "P": a["P"], "Q": a["Q"], "W_type": w_type, "W_beh": a["W_beh"],
            "theta": a["theta"], "W_fus": a["W_fus"], "W_int": a["W_int"],
            "W_pre": a["W_pre"],
        }
        out = {k: torch.from_numpy(v.copy()) for k, v in tensors.items()}
        for name, t in out.items():
            t.requires_grad_(
                name != "W_int" or cfg.wint_through_gradient
            )
        return ParameterSet(**out)


def load_checkpoint(path) -> Checkpoint:
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != MAGIC:
        raise CheckpointError("not a model checkpoint (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    m, n, k, d, layers, act_id = r.unpack("<6I")
    if k != NUM_BEHAVIORS:
        raise CheckpointError(f"checkpoint has {k} behaviors, expected {NUM_BEHAVIORS}")

    arrays = {}
    for expected in ARRAY_ORDER:
        name, data = _read_array(r)
        if name != expected:
            raise CheckpointError(f"expected array {expected!r}, found {name!r}")
        arrays[name] = data

    ckpt = Checkpoint(m, n, k, d, layers, act_id, arrays)
    while r.remaining:
        tag = r.take(4)
        if tag == OPTS_TAG:
            lr, b1, b2, eps, step = r.unpack("<ddddI")
            (count,) = r.unpack("<H")
            moments = {"m": {}, "v": {}}
            for _ in range(count):
                name, data = _read_array(r)
                slot, _, base = name.partition(".")
                if slot not in moments or not base:
                    raise CheckpointError(f"bad optimizer array name {name!r}")
                moments[slot][base] = torch.from_numpy(data.copy())
            ckpt.optimizer_state = {
                "lr": lr, "beta1": b1, "beta2": b2, "eps": eps,
                "step_count": step, "m": moments["m"], "v": moments["v"],
            }
        elif tag == CFG_TAG:
            (length,) = r.unpack("<I")
            ckpt.config_text = r.take(length).decode("utf-8")
        else:
            raise CheckpointError(f"unknown checkpoint section {tag!r}")
    return ckpt
