"""Binary checkpoint format.

Layout (all integers little-endian)::

    magic      8 bytes   b"CRNCKPT1"
    version    u32       FORMAT_VERSION
    count      u32       number of sections
    section*   u32 name length, name (utf-8), u64 payload length, payload

Sections, in write order:

    config       utf-8 text, the normalized key=value config dump
    counters     utf-8 JSON: iteration, epoch, per-epoch metrics log
    rng          utf-8 JSON: numpy bit-generator state of the training RNG
    generator    array bundle of generator weights
    discriminator array bundle of discriminator weights
    adam_g       array bundle: "m/<param>", "v/<param>", "t/<param>" (step as 0-d array)
    adam_d       same for the discriminator optimizer
    mean_shapes  array bundle: one vector per category plus "__global__"

Array bundle: u32 count, then per array u32 name length, name, u8 ndim,
ndim x u64 extents and the values as little-endian float64 in C order.
"""
from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from .config import RunConfig, dump_config, parse_config_text
from .errors import FormatError
from .optim import Adam, AdamState
from .train import MeanShapeTable, TrainState, init_state

MAGIC = b"CRNCKPT1"
FORMAT_VERSION = 1
_GLOBAL = "__global__"


def _pack_bundle(arrays: dict[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8")  # ascontiguousarray would promote 0-d to 1-d
        raw = name.encode()
        buf.write(struct.pack("<I", len(raw)) + raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


def _unpack_bundle(payload: bytes) -> dict[str, np.ndarray]:
    view = memoryview(payload)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise FormatError("truncated array bundle")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<I", take(4))
    out = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = bytes(take(name_len)).decode()
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        size = int(np.prod(shape, dtype=np.int64))
        flat = np.frombuffer(bytes(take(8 * size)), dtype="<f8").astype(np.float64)
        out[name] = np.reshape(flat, shape)
    return out


def _adam_arrays(opt: Adam) -> dict[str, np.ndarray]:
    out = {}
    for name, st in opt.states.items():
        out[f"m/{name}"] = st.m
        out[f"v/{name}"] = st.v
        out[f"t/{name}"] = np.array(float(st.step))
    return out


def _restore_adam(opt: Adam, arrays: dict[str, np.ndarray]) -> None:
    for name in opt.params:
        try:
            opt.states[name] = AdamState(arrays[f"m/{name}"].copy(), arrays[f"v/{name}"].copy(),
                                         int(arrays[f"t/{name}"]))
        except KeyError:
            raise FormatError(f"optimizer state for {name} missing") from None


def encode_checkpoint(state: TrainState) -> bytes:
    cfg = RunConfig(state.net, state.train)
    counters = {"iteration": state.iteration, "epoch": state.epoch, "metrics_log": state.metrics_log}
    shapes = dict(state.mean_shapes.vectors)
    shapes[_GLOBAL] = state.mean_shapes.global_mean
    sections = [
        ("config", dump_config(cfg).encode()),
        ("counters", json.dumps(counters, sort_keys=True).encode()),
        ("rng", json.dumps(state.rng.bit_generator.state, sort_keys=True).encode()),
        ("generator", _pack_bundle({k: p.data for k, p in state.gen.named().items()})),
        ("discriminator", _pack_bundle({k: p.data for k, p in state.disc.named().items()})),
        ("adam_g", _pack_bundle(_adam_arrays(state.opt_g))),
        ("adam_d", _pack_bundle(_adam_arrays(state.opt_d))),
        ("mean_shapes", _pack_bundle(shapes)),
    ]
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", FORMAT_VERSION, len(sections)))
    for name, payload in sections:
        raw = name.encode()
        buf.write(struct.pack("<I", len(raw)) + raw)
        buf.write(struct.pack("<Q", len(payload)) + payload)
    return buf.getvalue()


def decode_checkpoint(blob: bytes) -> TrainState:
    if blob[:8] != MAGIC:
        raise FormatError("not a checkpoint file: bad magic header")
    if len(blob) < 16:
        raise FormatError("truncated checkpoint header")
    version, count = struct.unpack("<II", blob[8:16])
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    pos = 16
    sections = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack("<I", blob[pos:pos + 4])
            name = blob[pos + 4:pos + 4 + n].decode()
            pos += 4 + n
            (size,) = struct.unpack("<Q", blob[pos:pos + 8])
            pos += 8
            if pos + size > len(blob):
                raise FormatError(f"section {name} is truncated")
            sections[name] = blob[pos:pos + size]
            pos += size
    except struct.error:
        raise FormatError("truncated checkpoint") from None
    missing = {"config", "counters", "rng", "generator", "discriminator", "adam_g", "adam_d",
               "mean_shapes"} - sections.keys()
    if missing:
        raise FormatError(f"checkpoint lacks sections {sorted(missing)}")

    cfg = parse_config_text(sections["config"].decode(), env={})
    state = init_state(cfg.net, cfg.train)
    state.gen.load_arrays(_unpack_bundle(sections["generator"]))
    state.disc.load_arrays(_unpack_bundle(sections["discriminator"]))
    _restore_adam(state.opt_g, _unpack_bundle(sections["adam_g"]))
    _restore_adam(state.opt_d, _unpack_bundle(sections["adam_d"]))
    shapes = _unpack_bundle(sections["mean_shapes"])
    global_mean = shapes.pop(_GLOBAL)
    state.mean_shapes = MeanShapeTable(shapes, global_mean)
    counters = json.loads(sections["counters"])
    state.iteration = counters["iteration"]
    state.epoch = counters["epoch"]
    state.metrics_log = counters["metrics_log"]
    state.rng.bit_generator.state = json.loads(sections["rng"])
    return state


def save_checkpoint(path, state: TrainState) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_checkpoint(state))
    tmp.replace(path)


def load_checkpoint(path) -> TrainState:
    return decode_checkpoint(Path(path).read_bytes())
