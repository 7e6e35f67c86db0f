"""Versioned dataset and checkpoint files.

Both formats are a UTF-8 header of ``key: value`` lines, starting with a
magic line and closed by ``end_header``, followed by a binary payload of
little-endian float64 values in the order the header declares.

Dataset payload, per sequence: ``T`` frames, each a little-endian uint64
length followed by that many float64 values; then, for each annotated frame
listed in the header, ``count x 5`` float64 rows ``(class_id, cx, cy, w, h)``.

Checkpoint payload: every ``tensor:`` line's values, flattened C-order.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import BoxGeometry
from .grid_codec import ModelConfig
from .optimizer import OptState
from .rnn import GruLayerParams, GruNetwork
from .sequence import VideoSequence

DATASET_MAGIC = "VIDREFINE-DATASET"
CHECKPOINT_MAGIC = "VIDREFINE-CHECKPOINT"
FORMAT_VERSION = 1
END = "end_header"


class FormatError(ValueError):
    """File is not a readable dataset/checkpoint."""


class MalformedHeaderError(FormatError):
    pass


class VersionError(FormatError):
    pass


class LengthMismatchError(FormatError):
    pass


class ConfigMismatchError(ValueError):
    pass


def _split_header(blob: bytes, magic: str) -> tuple[list[tuple[str, str]], memoryview]:
    first = blob.split(b"\n", 1)[0]
    if first != magic.encode():
        raise FormatError(f"bad magic {first[:40]!r}, expected {magic!r}")
    marker = ("\n" + END + "\n").encode()
    pos = blob.find(marker)
    if pos < 0:
        raise MalformedHeaderError(f"header has no {END!r} line")
    lines = blob[:pos].decode("utf-8").split("\n")[1:]
    entries = []
    for n, line in enumerate(lines, start=2):
        key, sep, value = line.partition(": ")
        if not sep or not key:
            raise MalformedHeaderError(f"header line {n} is not 'key: value': {line!r}")
        entries.append((key, value))
    if not entries or entries[0][0] != "format_version":
        raise MalformedHeaderError("first header entry must be format_version")
    try:
        version = int(entries[0][1])
    except ValueError:
        raise MalformedHeaderError(f"format_version {entries[0][1]!r} is not an integer") from None
    if version != FORMAT_VERSION:
        raise VersionError(f"format_version {version} is not supported (this build reads {FORMAT_VERSION})")
    return entries, memoryview(blob)[pos + len(marker):]


def _int(entries: dict, key: str) -> int:
    try:
        return int(entries[key])
    except KeyError:
        raise MalformedHeaderError(f"header lacks {key!r}") from None
    except ValueError:
        raise MalformedHeaderError(f"header {key!r} is not an integer: {entries[key]!r}") from None


class _Reader:
    def __init__(self, buf: memoryview):
        self.buf = buf
        self.pos = 0

    def floats(self, n: int, what: str) -> np.ndarray:
        end = self.pos + 8 * n
        if end > len(self.buf):
            raise FormatError(f"payload truncated while reading {what}")
        out = np.frombuffer(self.buf[self.pos:end], dtype="<f8").astype(float)
        self.pos = end
        return out

    def u64(self, what: str) -> int:
        end = self.pos + 8
        if end > len(self.buf):
            raise FormatError(f"payload truncated while reading {what}")
        v = int(np.frombuffer(self.buf[self.pos:end], dtype="<u8")[0])
        self.pos = end
        return v

    def done(self):
        if self.pos != len(self.buf):
            raise FormatError(f"{len(self.buf) - self.pos} trailing payload bytes")


def _f64(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


# -- datasets ---------------------------------------------------------------

def dataset_bytes(dataset: Sequence[VideoSequence], cfg: ModelConfig) -> bytes:
    lengths = {s.T for s in dataset}
    if len(lengths) > 1:
        raise ValueError(f"sequences have inconsistent lengths {sorted(lengths)}")
    T = lengths.pop() if lengths else 0
    head = [
        DATASET_MAGIC,
        f"format_version: {FORMAT_VERSION}",
        f"S: {cfg.S}",
        f"B: {cfg.B}",
        f"C: {cfg.C}",
        f"T: {T}",
        f"n_sequences: {len(dataset)}",
    ]
    payload = []
    for s in dataset:
        if s.pseudo.shape[1] != cfg.frame_dim:
            raise LengthMismatchError(
                f"sequence {s.seq_id!r}: vector length {s.pseudo.shape[1]} != {cfg.frame_dim}"
            )
        frames = sorted(s.ground_truth)
        annotated = {str(t): len(s.ground_truth[t]) for t in frames}
        head.append("sequence: " + json.dumps({"id": s.seq_id, "annotated": annotated}))
        for row in s.pseudo:
            payload.append(np.array([row.size], dtype="<u8").tobytes())
            payload.append(_f64(row))
        for t in frames:
            rows = [(c, b.cx, b.cy, b.w, b.h) for c, b in s.ground_truth[t]]
            payload.append(_f64(np.array(rows, dtype=float).reshape(-1, 5)))
    head.append(END)
    return ("\n".join(head) + "\n").encode() + b"".join(payload)


def parse_dataset(blob: bytes) -> tuple[list[VideoSequence], ModelConfig]:
    """Returns the sequences and a ModelConfig carrying the header's S, B, C, T."""
    entries, payload = _split_header(blob, DATASET_MAGIC)
    scalars = {k: v for k, v in entries if k != "sequence"}
    seq_lines = [v for k, v in entries if k == "sequence"]
    S, B, C, T = (_int(scalars, k) for k in ("S", "B", "C", "T"))
    n = _int(scalars, "n_sequences")
    if len(seq_lines) != n:
        raise MalformedHeaderError(f"header declares {n} sequences but lists {len(seq_lines)}")
    try:
        cfg = ModelConfig(S=S, B=B, C=C, T=max(T, 1))
    except ValueError as e:
        raise MalformedHeaderError(str(e)) from None

    reader = _Reader(payload)
    out = []
    for k, line in enumerate(seq_lines):
        try:
            meta = json.loads(line)
            seq_id = str(meta["id"])
            annotated = {int(t): int(c) for t, c in meta["annotated"].items()}
        except (ValueError, KeyError, TypeError, AttributeError):
            raise MalformedHeaderError(f"sequence line {k} is malformed: {line!r}") from None
        frames = []
        for t in range(T):
            size = reader.u64(f"sequence {seq_id!r} frame {t} length")
            if size != cfg.frame_dim:
                raise LengthMismatchError(
                    f"sequence {seq_id!r} frame {t}: vector length {size} != {cfg.frame_dim} "
                    f"(S={S}, B={B}, C={C})"
                )
            frames.append(reader.floats(size, f"sequence {seq_id!r} frame {t}"))
        gt = {}
        for t in sorted(annotated):
            rows = reader.floats(5 * annotated[t], f"sequence {seq_id!r} ground truth {t}").reshape(-1, 5)
            gt[t] = [(int(r[0]), BoxGeometry(float(r[1]), float(r[2]), float(r[3]), float(r[4]))) for r in rows]
        pseudo = np.stack(frames) if frames else np.zeros((0, cfg.frame_dim))
        out.append(VideoSequence(seq_id, pseudo, gt))
    reader.done()
    return out, cfg


def save_dataset(path: str | os.PathLike, dataset: Sequence[VideoSequence], cfg: ModelConfig) -> None:
    Path(path).write_bytes(dataset_bytes(dataset, cfg))


def load_dataset(path: str | os.PathLike) -> tuple[list[VideoSequence], ModelConfig]:
    return parse_dataset(Path(path).read_bytes())


# -- checkpoints ------------------------------------------------------------

@dataclass
class Checkpoint:
    net: GruNetwork
    cfg: ModelConfig
    opt_state: OptState | None = None
    seeds: dict[str, int] = field(default_factory=dict)


def _config_json(cfg: ModelConfig) -> str:
    d = asdict(cfg)
    if d["active_classes"] is not None:
        d["active_classes"] = list(d["active_classes"])
    return json.dumps(d, sort_keys=True)


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    net = ckpt.net
    arch = {
        "candidate": net.candidate,
        "dropout_prob": net.dropout_prob,
        "hidden": list(net.hidden_sizes),
        "in_dim": net.in_dim,
        "out_dim": net.out_dim,
    }
    head = [
        CHECKPOINT_MAGIC,
        f"format_version: {FORMAT_VERSION}",
        "config: " + _config_json(ckpt.cfg),
        "network: " + json.dumps(arch, sort_keys=True),
        "seeds: " + json.dumps({k: int(v) for k, v in ckpt.seeds.items()}, sort_keys=True),
    ]
    tensors = dict(net.params())
    opt = ckpt.opt_state
    if opt is not None:
        hyper = {"lr": opt.lr, "rho": opt.rho, "mu": opt.mu, "eps": opt.eps, "clip_norm": opt.clip_norm}
        head.append("optimizer: " + json.dumps(hyper, sort_keys=True))
        for name in net.params():
            tensors["opt.cache." + name] = opt.cache[name]
            tensors["opt.velocity." + name] = opt.velocity[name]
    else:
        head.append("optimizer: null")
    for name, arr in tensors.items():
        shape = "x".join(str(d) for d in arr.shape)
        head.append(f"tensor: {name} {shape}")
    head.append(END)
    return ("\n".join(head) + "\n").encode() + b"".join(_f64(a) for a in tensors.values())


def parse_checkpoint(blob: bytes) -> Checkpoint:
    entries, payload = _split_header(blob, CHECKPOINT_MAGIC)
    meta = {}
    specs = []
    for key, value in entries[1:]:
        if key == "tensor":
            name, _, shape = value.partition(" ")
            try:
                dims = tuple(int(d) for d in shape.split("x"))
            except ValueError:
                raise MalformedHeaderError(f"bad tensor shape in {value!r}") from None
            specs.append((name, dims))
        else:
            try:
                meta[key] = json.loads(value)
            except ValueError:
                raise MalformedHeaderError(f"header {key!r} is not valid JSON") from None
    for key in ("config", "network", "seeds", "optimizer"):
        if key not in meta:
            raise MalformedHeaderError(f"header lacks {key!r}")

    reader = _Reader(payload)
    tensors = {}
    for name, dims in specs:
        tensors[name] = reader.floats(int(np.prod(dims)), f"tensor {name}").reshape(dims)
    reader.done()

    try:
        cfg_d = dict(meta["config"])
        if cfg_d.get("active_classes") is not None:
            cfg_d["active_classes"] = tuple(cfg_d["active_classes"])
        cfg = ModelConfig(**cfg_d)
        arch = meta["network"]
        layers = []
        for k in range(len(arch["hidden"])):
            layers.append(GruLayerParams(**{
                n: tensors[f"layers.{k}.{n}"]
                for n in ("Wxr", "Wxu", "Wxc", "Whr", "Whu", "Whc", "br", "bu", "bc")
            }))
        net = GruNetwork(layers, tensors["out.W"], tensors["out.b"], arch["dropout_prob"], arch["candidate"])
        opt = None
        if meta["optimizer"] is not None:
            opt = OptState(**meta["optimizer"])
            opt.cache = {n: tensors["opt.cache." + n] for n in net.params()}
            opt.velocity = {n: tensors["opt.velocity." + n] for n in net.params()}
    except (KeyError, TypeError, ValueError) as e:
        raise MalformedHeaderError(f"checkpoint contents inconsistent: {e}") from None
    return Checkpoint(net, cfg, opt, {k: int(v) for k, v in meta["seeds"].items()})


def save_checkpoint(path: str | os.PathLike, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(checkpoint_bytes(ckpt))


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    return parse_checkpoint(Path(path).read_bytes())


def check_compatible(cfg: ModelConfig, data_cfg: ModelConfig) -> None:
    for key in ("S", "B", "C"):
        a, b = getattr(cfg, key), getattr(data_cfg, key)
        if a != b:
            raise ConfigMismatchError(f"checkpoint {key}={a} but dataset {key}={b}")
