"""Binary checkpoint format.

Layout (little-endian)::

    b"NMTX" | u32 version | u32 n | n bytes JSON header (hyperparams, vocabularies)
    u32 count | count x tensor
    u8 has_optimizer | [u32 n | n bytes JSON counters | u32 count | count x tensor]

    tensor := u16 name_len | name | u8 ndim | ndim x u32 dims | float32 data
"""

from __future__ import annotations

import json
import struct

import numpy as np
import torch

from ..vocab import Vocabulary
from .model import ModelConfig, TransformerNMT
from .train import Adam, TrainConfig, TrainState

MAGIC = b"NMTX"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _write_tensor(f, name: str, t: torch.Tensor):
    data = t.detach().cpu().numpy().astype("<f4")
    raw = name.encode("utf-8")
    f.write(struct.pack("<H", len(raw)) + raw)
    f.write(struct.pack("<B", data.ndim))
    f.write(struct.pack(f"<{data.ndim}I", *data.shape))
    f.write(data.tobytes())


def _read_exact(f, n):
    buf = f.read(n)
    if len(buf) != n:
        raise CheckpointError("truncated checkpoint")
    return buf


def _read_tensor(f):
    (n,) = struct.unpack("<H", _read_exact(f, 2))
    name = _read_exact(f, n).decode("utf-8")
    (ndim,) = struct.unpack("<B", _read_exact(f, 1))
    shape = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim))
    count = int(np.prod(shape)) if ndim else 1
    data = np.frombuffer(_read_exact(f, 4 * count), dtype="<f4").reshape(shape)
    return name, torch.from_numpy(data.astype(np.float32))


def _write_json(f, obj):
    raw = json.dumps(obj, sort_keys=True).encode("utf-8")
    f.write(struct.pack("<I", len(raw)) + raw)


def _read_json(f):
    (n,) = struct.unpack("<I", _read_exact(f, 4))
    return json.loads(_read_exact(f, n).decode("utf-8"))


def save_checkpoint(model: TransformerNMT, state: TrainState | None, path) -> None:
    header = {"model": model.hyperparams(), "src_vocab": model.src_vocab.tokens,
              "tgt_vocab": model.tgt_vocab.tokens}
    params = dict(model.named_parameters())
    with open(path, "wb") as f:
        f.write(MAGIC + struct.pack("<I", VERSION))
        _write_json(f, header)
        f.write(struct.pack("<I", len(params)))
        for name, p in params.items():
            _write_tensor(f, name, p)
        f.write(struct.pack("<B", state is not None))
        if state is not None:
            adam = state.adam
            counters = {"step": adam.step, "epoch": state.epoch, "batch_in_epoch": state.batch_in_epoch,
                        "best": state.best if np.isfinite(state.best) else None, "bad": state.bad,
                        "checkpoints": state.checkpoints, "train": vars(adam.cfg) | {"freeze": list(adam.cfg.freeze)}}
            _write_json(f, counters)
            f.write(struct.pack("<I", 2 * len(adam.m)))
            for name in adam.m:
                _write_tensor(f, "m:" + name, adam.m[name])
                _write_tensor(f, "v:" + name, adam.v[name])


def load_checkpoint(path):
    """Returns ``(model, state)``; ``state`` is None when no optimizer block was saved."""
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise CheckpointError(f"{path}: not an NMTX checkpoint (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(f, 4))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        header = _read_json(f)
        cfg = ModelConfig(**header["model"])
        model = TransformerNMT(Vocabulary(header["src_vocab"]), Vocabulary(header["tgt_vocab"]), cfg)
        params = dict(model.named_parameters())
        (count,) = struct.unpack("<I", _read_exact(f, 4))
        seen = set()
        with torch.no_grad():
            for _ in range(count):
                name, t = _read_tensor(f)
                if name not in params:
                    raise CheckpointError(f"{path}: unexpected tensor {name!r}")
                if tuple(params[name].shape) != tuple(t.shape):
                    raise CheckpointError(f"{path}: shape mismatch for {name}: "
                                          f"{tuple(t.shape)} vs {tuple(params[name].shape)}")
                params[name].copy_(t)
                seen.add(name)
        missing = set(params) - seen
        if missing:
            raise CheckpointError(f"{path}: missing tensors {sorted(missing)}")
        state = None
        flag = f.read(1)
        if flag and flag[0]:
            counters = _read_json(f)
            tcfg = TrainConfig(**counters["train"])
            adam = Adam(tcfg)
            adam.step = counters["step"]
            (n,) = struct.unpack("<I", _read_exact(f, 4))
            for _ in range(n):
                name, t = _read_tensor(f)
                kind, pname = name.split(":", 1)
                (adam.m if kind == "m" else adam.v)[pname] = t
            best = counters["best"]
            state = TrainState(adam, counters["epoch"], counters["batch_in_epoch"],
                               float("inf") if best is None else best, counters["bad"], counters["checkpoints"])
    return model, state
