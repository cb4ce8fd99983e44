"""Single-file model container.

Layout::

    FORMSCREEN-MODEL 1\n
    key=value\n            (manifest, keys sorted)
    ...
    END-MANIFEST\n
    BLOCK <name> <rows> <cols>\n
    <rows*cols little-endian float64>
    ...

The manifest is plain text so two artifacts can be diffed. Nothing in the
file depends on wall-clock time, so saving the same models twice gives the
same bytes.
"""
from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConventionError, DatasetError
from .formulation import DescriptorConvention
from .gcn import GcnModel
from .regressor import RegressorModel

MAGIC = b"FORMSCREEN-MODEL 1\n"
END = b"END-MANIFEST\n"
ENCODER_MODE = "multi-task"
GCN_KEYS = ("conv1", "conv2", "head1.W", "head1.b", "head2.W", "head2.b")


def config_hash(obj) -> str:
    """sha256 of the canonical JSON form of a config mapping."""
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()


@dataclass
class ModelArtifact:
    encoder: GcnModel
    regressor: RegressorModel | None = None
    meta: dict[str, str] = field(default_factory=dict)

    def manifest(self) -> dict[str, str]:
        m = {k: str(v) for k, v in self.meta.items()}
        m["encoder.mode"] = ENCODER_MODE
        m["encoder.version"] = self.encoder.version
        m["encoder.labels"] = "homo_ev,lumo_ev,dipole_debye"
        if self.regressor is not None:
            for k, v in self.regressor.convention.as_dict().items():
                m[f"convention.{k}"] = v
            m["regressor.hidden"] = ",".join(str(h) for h in self.regressor.hidden)
            m["regressor.input_width"] = str(self.regressor.input_width)
        return m

    def blocks(self) -> list[tuple[str, np.ndarray]]:
        out = [(f"encoder.{k}", self.encoder.weights[k]) for k in GCN_KEYS]
        out.append(("encoder.label_mean", self.encoder.label_mean.reshape(1, -1)))
        out.append(("encoder.label_std", self.encoder.label_std.reshape(1, -1)))
        if self.regressor is not None:
            for k, (W, b) in enumerate(self.regressor.layers):
                out.append((f"regressor.{k}.W", W))
                out.append((f"regressor.{k}.b", b))
        return out

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(MAGIC)
        for k, v in sorted(self.manifest().items()):
            if "\n" in k or "\n" in v or "=" in k:
                raise ValueError(f"manifest entry {k!r} cannot be stored")
            buf.write(f"{k}={v}\n".encode())
        buf.write(END)
        for name, a in self.blocks():
            a = np.atleast_2d(a)
            buf.write(f"BLOCK {name} {a.shape[0]} {a.shape[1]}\n".encode())
            buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
        return buf.getvalue()

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    def check_convention(self, convention: DescriptorConvention) -> None:
        if self.regressor is None:
            raise ConventionError("artifact holds no regressor")
        if self.regressor.convention != convention:
            raise ConventionError(
                f"descriptor convention {convention.as_dict()} does not match the model manifest "
                f"{self.regressor.convention.as_dict()}"
            )

    @classmethod
    def from_bytes(cls, data: bytes, source: str = "<bytes>") -> "ModelArtifact":
        buf = io.BytesIO(data)
        if buf.readline() != MAGIC:
            raise DatasetError(f"{source}: not a model artifact")
        manifest: dict[str, str] = {}
        while True:
            line = buf.readline()
            if not line:
                raise DatasetError(f"{source}: truncated manifest")
            if line == END:
                break
            k, sep, v = line.decode().rstrip("\n").partition("=")
            if not sep:
                raise DatasetError(f"{source}: bad manifest line {line!r}")
            manifest[k] = v
        blocks: dict[str, np.ndarray] = {}
        while True:
            line = buf.readline()
            if not line:
                break
            parts = line.decode(errors="replace").split()
            if len(parts) != 4 or parts[0] != "BLOCK":
                raise DatasetError(f"{source}: bad block header {line!r}")
            rows, cols = int(parts[2]), int(parts[3])
            raw = buf.read(8 * rows * cols)
            if len(raw) != 8 * rows * cols:
                raise DatasetError(f"{source}: block {parts[1]} is truncated")
            blocks[parts[1]] = np.frombuffer(raw, dtype="<f8").reshape(rows, cols).astype(np.float64)
        return cls._assemble(manifest, blocks, source)

    @classmethod
    def _assemble(cls, manifest, blocks, source) -> "ModelArtifact":
        try:
            weights = {k: blocks[f"encoder.{k}"] for k in GCN_KEYS}
            enc = GcnModel(weights, blocks["encoder.label_mean"][0], blocks["encoder.label_std"][0])
        except KeyError as exc:
            raise DatasetError(f"{source}: missing block {exc}") from None
        if enc.version != manifest.get("encoder.version"):
            raise DatasetError(f"{source}: encoder weights do not match the recorded version")
        enc.freeze()
        reg = None
        n_layers = sum(1 for k in blocks if k.startswith("regressor.") and k.endswith(".W"))
        if n_layers:
            try:
                conv = DescriptorConvention(**{
                    k: manifest[f"convention.{k}"]
                    for k in ("gr_version", "mol_scale", "loading_scale", "separator_encoding")
                })
            except KeyError as exc:
                raise DatasetError(f"{source}: manifest lacks {exc}") from None
            layers = [(blocks[f"regressor.{k}.W"], blocks[f"regressor.{k}.b"]) for k in range(n_layers)]
            reg = RegressorModel(layers, conv)
            if conv.gr_version != enc.version:
                raise ConventionError(
                    f"{source}: regressor was trained on encoder {conv.gr_version}, "
                    f"artifact holds encoder {enc.version}"
                )
        derived = {"encoder.mode", "encoder.version", "encoder.labels", "regressor.hidden",
                   "regressor.input_width"}
        meta = {k: v for k, v in manifest.items() if k not in derived and not k.startswith("convention.")}
        return cls(enc, reg, meta)

    @classmethod
    def load(cls, path) -> "ModelArtifact":
        path = Path(path)
        if not path.is_file():
            raise DatasetError(f"model artifact not found: {path}")
        return cls.from_bytes(path.read_bytes(), str(path))
