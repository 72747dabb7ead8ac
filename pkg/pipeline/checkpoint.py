"""
Binary checkpoint format.

Layout (little-endian):
    8 bytes   magic "PDPMCKPT"
    u32       format version
    u32       section count
    sections: 4-byte tag, u64 payload length, payload

Sections:
    CONF  canonical key=value run config (utf-8)
    SCHD  u32 T, then T f64 betas
    PARM  named f64 parameter arrays (theta., phi., alpha. prefixes)
    OPTM  named f64 optimizer arrays
    RNGS  key=value text: seed, next step
Unknown, duplicate or missing sections are rejected.
"""

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Tuple

import numpy as np

from config import RunConfig
from pipeline.diffusion import DiffusionSchedule
from pipeline.nets import ShapeModel
from utils.errors import CheckpointError, ConfigError
from utils.rng import RngStream
from utils.textfmt import parse_key_values, render_key_values

logger = logging.getLogger(__name__)

MAGIC = b"PDPMCKPT"
VERSION = 1
REQUIRED_SECTIONS = (b"CONF", b"SCHD", b"PARM", b"OPTM", b"RNGS")


@dataclass
class Checkpoint:
    config: RunConfig
    schedule: DiffusionSchedule
    params: Dict[str, np.ndarray]
    optimizer: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @property
    def mode(self) -> str:
        return self.config.train.mode

    @property
    def seed(self) -> int:
        return self.config.train.seed

    def has_flow(self) -> bool:
        return any(name.startswith("alpha.") for name in self.params)

    def build_model(self):
        """Rebuild the ShapeModel and load the stored parameters."""
        model = ShapeModel.build(self.config.train, RngStream(self.seed), with_flow=self.has_flow())
        model.load_state_dict(self.params)
        return model

    # ─────────────────────────── encoding ─────────────────────────────────

    def to_bytes(self) -> bytes:
        sections = [
            (b"CONF", self.config.to_text().encode("utf-8")),
            (b"SCHD", struct.pack("<I", self.schedule.T) + _f64(self.schedule.beta)),
            (b"PARM", _pack_arrays(self.params)),
            (b"OPTM", _pack_arrays(self.optimizer)),
            (b"RNGS", render_key_values({"seed": self.seed, "step": self.step}).encode("utf-8")),
        ]
        out = [MAGIC, struct.pack("<II", VERSION, len(sections))]
        for tag, payload in sections:
            out.append(tag + struct.pack("<Q", len(payload)) + payload)
        return b"".join(out)

    @classmethod
    def from_bytes(cls, blob: bytes, source: str = "<bytes>") -> "Checkpoint":
        if blob[:8] != MAGIC:
            raise CheckpointError(f"{source}: not a checkpoint (bad magic)")
        reader = _Reader(blob, 8, source)
        version, count = reader.unpack("<II")
        if version != VERSION:
            raise CheckpointError(f"{source}: unsupported checkpoint version {version} (expected {VERSION})")

        sections: Dict[bytes, bytes] = {}
        for _ in range(count):
            tag = reader.take(4)
            (length,) = reader.unpack("<Q")
            if tag not in REQUIRED_SECTIONS:
                raise CheckpointError(f"{source}: unknown section {tag!r}")
            if tag in sections:
                raise CheckpointError(f"{source}: duplicate section {tag!r}")
            sections[tag] = reader.take(length)
        if reader.pos != len(blob):
            raise CheckpointError(f"{source}: {len(blob) - reader.pos} trailing bytes")
        missing = [t.decode() for t in REQUIRED_SECTIONS if t not in sections]
        if missing:
            raise CheckpointError(f"{source}: missing sections {missing}")

        try:
            config = RunConfig.from_text(sections[b"CONF"].decode("utf-8"), source=f"{source}#CONF")
        except ConfigError as e:
            raise CheckpointError(f"{source}: bad config section: {e}") from e

        sched_reader = _Reader(sections[b"SCHD"], 0, f"{source}#SCHD")
        (T,) = sched_reader.unpack("<I")
        betas = np.frombuffer(sched_reader.take(8 * T), dtype="<f8").astype(np.float64)
        schedule = DiffusionSchedule.from_betas(betas)

        rng_state = parse_key_values(sections[b"RNGS"].decode("utf-8"))
        return cls(
            config=config,
            schedule=schedule,
            params=_unpack_arrays(sections[b"PARM"], f"{source}#PARM"),
            optimizer=_unpack_arrays(sections[b"OPTM"], f"{source}#OPTM"),
            step=int(rng_state.get("step", "0")),
        )

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_bytes(self.to_bytes())
        tmp.replace(path)
        logger.info("Checkpoint saved: %s (step %d)", path, self.step)
        return path

    @classmethod
    def load(cls, path) -> "Checkpoint":
        path = Path(path)
        try:
            blob = path.read_bytes()
        except OSError as e:
            raise CheckpointError(f"{path}: {e}") from e
        ckpt = cls.from_bytes(blob, source=str(path))
        logger.debug("Loaded checkpoint %s: mode=%s step=%d", path, ckpt.mode, ckpt.step)
        return ckpt


def _f64(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def _pack_arrays(arrays: Dict[str, np.ndarray]) -> bytes:
    parts = [struct.pack("<I", len(arrays))]
    for name in sorted(arrays):
        value = np.asarray(arrays[name], dtype=np.float64)
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)) + encoded)
        parts.append(struct.pack("<B", value.ndim) + struct.pack(f"<{value.ndim}I", *value.shape))
        parts.append(_f64(value))
    return b"".join(parts)


def _unpack_arrays(payload: bytes, source: str) -> Dict[str, np.ndarray]:
    reader = _Reader(payload, 0, source)
    (count,) = reader.unpack("<I")
    arrays: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        (ndim,) = reader.unpack("<B")
        shape: Tuple[int, ...] = reader.unpack(f"<{ndim}I") if ndim else ()
        size = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(reader.take(8 * size), dtype="<f8").astype(np.float64)
        arrays[name] = data.reshape(shape)
    if reader.pos != len(payload):
        raise CheckpointError(f"{source}: trailing bytes in array table")
    return arrays


class _Reader:
    def __init__(self, blob: bytes, pos: int, source: str):
        self.blob = blob
        self.pos = pos
        self.source = source

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError(f"{self.source}: truncated at byte {self.pos}")
        chunk = self.blob[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))
