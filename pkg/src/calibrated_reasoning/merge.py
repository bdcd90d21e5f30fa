"""Linear weight interpolation between two parameter maps, plus the
accuracy/ECE zone classification used to read the resulting frontier.

Tensor maps are stored in a small self-describing container (``.tmap``)::

    8 bytes   magic  b"TMAP\\x00\\x00\\x00\\x01"
    8 bytes   little-endian uint64 header length H
    H bytes   UTF-8 JSON {name: {"shape": [...], "dtype": "f32", "offset": int}}
    payload   concatenated little-endian float32 data, names in sorted order

``offset`` is relative to the start of the payload.
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import InputError, MalformedTensorFile, MissingBaseline, MissingTensor, ShapeMismatch

MAGIC = b"TMAP\x00\x00\x00\x01"
DEFAULT_GRID = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)

TensorMap = dict  # name -> float32 ndarray


def as_tensor_map(entries: Mapping[str, object]) -> TensorMap:
    return {name: np.ascontiguousarray(np.asarray(v, dtype=np.float32)) for name, v in entries.items()}


def save_tmap(tmap: Mapping[str, np.ndarray], path) -> None:
    header = {}
    chunks = []
    offset = 0
    for name in sorted(tmap):
        arr = np.ascontiguousarray(tmap[name], dtype="<f4")
        header[name] = {"shape": list(arr.shape), "dtype": "f32", "offset": offset}
        raw = arr.tobytes(order="C")
        chunks.append(raw)
        offset += len(raw)
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for c in chunks:
            fh.write(c)


def load_tmap(path) -> TensorMap:
    data = Path(path).read_bytes()
    if len(data) < 16:
        raise MalformedTensorFile(path, len(data), "file shorter than the 16-byte preamble")
    if data[:8] != MAGIC:
        raise MalformedTensorFile(path, 0, "bad magic")
    (hlen,) = struct.unpack("<Q", data[8:16])
    if 16 + hlen > len(data):
        raise MalformedTensorFile(path, 8, f"header length {hlen} runs past end of file")
    try:
        header = json.loads(data[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedTensorFile(path, 16, f"header is not JSON: {exc}") from None
    if not isinstance(header, dict):
        raise MalformedTensorFile(path, 16, "header must be a JSON object")
    base = 16 + hlen
    payload_len = len(data) - base
    out: TensorMap = {}
    expected_end = 0
    for name in sorted(header):
        meta = header[name]
        try:
            shape = [int(d) for d in meta["shape"]]
            off = int(meta["offset"])
            dtype = meta["dtype"]
        except (KeyError, TypeError, ValueError):
            raise MalformedTensorFile(path, 16, f"bad header entry for {name!r}") from None
        if dtype != "f32":
            raise MalformedTensorFile(path, 16, f"{name!r}: unsupported dtype {dtype!r}")
        if any(d < 0 for d in shape):
            raise MalformedTensorFile(path, 16, f"{name!r}: negative dimension")
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if off < 0 or off + nbytes > payload_len:
            raise MalformedTensorFile(path, base + max(off, 0), f"{name!r}: data runs past end of payload")
        arr = np.frombuffer(data, dtype="<f4", count=nbytes // 4, offset=base + off)
        out[name] = arr.astype(np.float32).reshape(shape)
        expected_end = max(expected_end, off + nbytes)
    if expected_end != payload_len:
        raise MalformedTensorFile(path, base + expected_end, "trailing bytes after last tensor")
    return out


def _check_compatible(base: Mapping, tuned: Mapping) -> None:
    for name in sorted(set(base) | set(tuned)):
        if name not in base or name not in tuned:
            raise MissingTensor(name)
        if np.shape(base[name]) != np.shape(tuned[name]):
            raise ShapeMismatch(name, np.shape(base[name]), np.shape(tuned[name]))


def merge(base: Mapping[str, np.ndarray], tuned: Mapping[str, np.ndarray], lam: float) -> TensorMap:
    """(1 - lam) * base + lam * tuned, elementwise, in float32."""
    if not 0.0 <= lam <= 1.0:
        raise InputError(f"lambda must be in [0, 1], got {lam}")
    _check_compatible(base, tuned)
    out: TensorMap = {}
    lam32 = np.float32(lam)
    keep = np.float32(1.0) - lam32
    for name in sorted(base):
        b = np.asarray(base[name], dtype=np.float32)
        t = np.asarray(tuned[name], dtype=np.float32)
        # endpoints copy so that signed zeros survive bit-for-bit
        if lam == 0.0:
            out[name] = b.copy()
        elif lam == 1.0:
            out[name] = t.copy()
        else:
            out[name] = keep * b + lam32 * t
    return out


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def sweep(
    base: Mapping[str, np.ndarray],
    tuned: Mapping[str, np.ndarray],
    lambdas: Sequence[float],
    out_dir,
) -> list[tuple[float, Path]]:
    """One merged ``.tmap`` per lambda plus ``merge_manifest.json`` in ``out_dir``."""
    lambdas = [float(x) for x in lambdas]
    if any(not 0.0 <= x <= 1.0 for x in lambdas):
        raise InputError("every lambda must lie in [0, 1]")
    if any(b <= a for a, b in zip(lambdas, lambdas[1:])):
        raise InputError("lambda grid must be strictly increasing")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    manifest = []
    for lam in lambdas:
        path = out_dir / f"merged_lambda_{lam:.4f}.tmap"
        save_tmap(merge(base, tuned, lam), path)
        outputs.append((lam, path))
        manifest.append({"lambda": lam, "path": path.name, "sha256": _sha256(path)})
    (out_dir / "merge_manifest.json").write_text(json.dumps({"outputs": manifest}, indent=2) + "\n")
    return outputs


# -- frontier zones -----------------------------------------------------------------

PARETO_SUPERIOR = "pareto_superior"
CALIBRATION_COST = "calibration_cost"
DOMINATED = "dominated"
MIXED = "mixed"


@dataclass(frozen=True)
class MethodScore:
    method: str
    accuracy: float
    ece: float
    model: str = ""


def zone(d_acc: float, d_ece: float) -> str:
    if d_acc > 0:
        return PARETO_SUPERIOR if d_ece < 0 else CALIBRATION_COST
    return MIXED if d_ece < 0 else DOMINATED


def pareto_classify(rows: Iterable, baseline: str = "Base Model") -> list[dict]:
    """Zone of every row relative to the baseline row of the same list.

    Accuracy up and ECE down is ``pareto_superior``; ties with the baseline
    on both axes count as ``dominated``.
    """
    rows = [r if isinstance(r, MethodScore) else MethodScore(**r) for r in rows]
    base = next((r for r in rows if r.method == baseline), None)
    if base is None:
        raise MissingBaseline(f"no row for baseline method {baseline!r}")
    return [
        {"method": r.method, "zone": zone(r.accuracy - base.accuracy, r.ece - base.ece)}
        for r in rows
    ]


def classify_by_model(rows: Iterable[MethodScore], baseline: str = "Base Model") -> list[dict]:
    groups: dict[str, list[MethodScore]] = {}
    for r in rows:
        groups.setdefault(r.model, []).append(r)
    out = []
    for model, rs in groups.items():
        for row in pareto_classify(rs, baseline):
            out.append({"model": model, **row})
    return out


def read_scores_csv(path=None) -> list[MethodScore]:
    """Rows of a results table CSV (columns include model, method, accuracy, ece).

    With no path, the bundled MATH results table is returned.
    """
    if path is None:
        text = resources.files("calibrated_reasoning").joinpath("data/math_results.csv").read_text()
    else:
        text = Path(path).read_text(encoding="utf-8")
    reader = csv.DictReader(text.splitlines())
    missing = {"method", "accuracy", "ece"} - set(reader.fieldnames or ())
    if missing:
        raise InputError(f"results table lacks columns {sorted(missing)}")
    out = []
    for line, row in enumerate(reader, start=2):
        try:
            out.append(
                MethodScore(
                    method=row["method"],
                    accuracy=float(row["accuracy"]),
                    ece=float(row["ece"]),
                    model=row.get("model", "") or "",
                )
            )
        except ValueError as exc:
            raise InputError(f"results table line {line}: {exc}") from None
    return out
