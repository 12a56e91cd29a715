"""File formats: checkpoints, structure files, conditioning lists, CIF export.

Checkpoints and structure files are JSON.  Tensor payloads are stored as
base64-encoded little-endian float64 bytes with an explicit shape manifest,
so reload is bit-exact and the files are byte-reproducible for fixed seeds.
"""

from __future__ import annotations

import base64
import hashlib
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .field import Backbone, BackboneConfig
from .flow import TrainConfig
from .lattice import cell_parameters, k_to_L
from .symmetry import Crystal

CHECKPOINT_VERSION = 1
STRUCTURE_VERSION = 1

# enough species names for desk-scale datasets; indices beyond this wrap to Xn
ELEMENT_SYMBOLS = (
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne",
    "Na", "Mg", "Al", "Si", "P", "S", "Cl", "Ar", "K", "Ca",
    "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn",
)


def species_symbol(index: int) -> str:
    if 0 <= index < len(ELEMENT_SYMBOLS):
        return ELEMENT_SYMBOLS[index]
    return f"X{index}"


def _encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode_array(obj: dict) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(obj["shape"]).copy()


def save_checkpoint(path: str | Path, backbone: Backbone, cfg: TrainConfig | None = None) -> None:
    doc = {
        "version": CHECKPOINT_VERSION,
        "backbone": backbone.config.to_dict(),
        "train_config": cfg.to_dict() if cfg is not None else None,
        "params": {k: _encode_array(v) for k, v in sorted(backbone.params.items())},
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")


def load_checkpoint(path: str | Path) -> tuple[Backbone, TrainConfig | None]:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    config = BackboneConfig(**doc["backbone"])
    params = {k: _decode_array(v) for k, v in doc["params"].items()}
    backbone = Backbone(config, params=params)
    cfg = TrainConfig(**doc["train_config"]) if doc.get("train_config") else None
    return backbone, cfg


def save_structure(path: str | Path, crystal: Crystal, group_number: int,
                   dimension: int, wyckoff_labels: list[str],
                   seed: int | None = None, extra: dict | None = None) -> None:
    """Lossless internal structure file (unlike CIF)."""
    doc = {
        "version": STRUCTURE_VERSION,
        "group": group_number,
        "dimension": dimension,
        "wyckoffs": list(wyckoff_labels),
        "seed": seed,
        "k": _encode_array(crystal.k),
        "F": _encode_array(crystal.F),
        "A": _encode_array(crystal.A),
    }
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")


def load_structure(path: str | Path) -> tuple[Crystal, dict]:
    doc = json.loads(Path(path).read_text())
    crystal = Crystal(k=_decode_array(doc["k"]), F=_decode_array(doc["F"]),
                      A=_decode_array(doc["A"]))
    meta = {k: doc[k] for k in ("group", "dimension", "wyckoffs", "seed") if k in doc}
    return crystal, meta


@dataclass(frozen=True)
class ConditioningEntry:
    group: int
    dimension: int
    wyckoffs: list[str]
    atoms: list[int] | None = None  # species indices aligned to expanded rows


def load_conditioning(path: str | Path) -> list[ConditioningEntry]:
    """JSON-lines conditioning file: one (G, W, optional atoms) per line."""
    entries = []
    for line_no, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
            entries.append(ConditioningEntry(
                group=int(obj["group"]),
                dimension=int(obj.get("dimension", 3)),
                wyckoffs=[str(w) for w in obj["wyckoffs"]],
                atoms=[int(a) for a in obj["atoms"]] if obj.get("atoms") is not None else None,
            ))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"{path}:{line_no}: bad conditioning entry: {exc}") from exc
    return entries


def write_cif(path: str | Path, crystal: Crystal, group_number: int,
              species: list[str] | None = None) -> None:
    """Minimal CIF: cell from k, fractional coordinates, species symbols."""
    L = k_to_L(crystal.k)
    lengths, angles = cell_parameters(L)
    if species is None:
        species = [species_symbol(int(i)) for i in np.argmax(crystal.A, axis=1)]
    lines = [
        "data_sgflow",
        f"# space group number {group_number}",
        f"_cell_length_a {lengths[0]:.9f}",
        f"_cell_length_b {lengths[1]:.9f}",
        f"_cell_length_c {lengths[2]:.9f}",
        f"_cell_angle_alpha {angles[0]:.9f}",
        f"_cell_angle_beta {angles[1]:.9f}",
        f"_cell_angle_gamma {angles[2]:.9f}",
        "loop_",
        "_atom_site_type_symbol",
        "_atom_site_fract_x",
        "_atom_site_fract_y",
        "_atom_site_fract_z",
    ]
    for sym, row in zip(species, crystal.F):
        lines.append(f"{sym} {row[0]:.9f} {row[1]:.9f} {row[2]:.9f}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_cif(path: str | Path) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Internal reader for round-trip checks: (lengths+angles, F, species)."""
    cell = {}
    rows, species = [], []
    in_loop = False
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line.startswith("_cell_"):
            key, val = line.split()
            cell[key] = float(val)
        elif line == "loop_":
            in_loop = True
        elif in_loop and line and not line.startswith("_") and not line.startswith("#"):
            parts = line.split()
            species.append(parts[0])
            rows.append([float(x) for x in parts[1:4]])
    params = np.array([
        cell["_cell_length_a"], cell["_cell_length_b"], cell["_cell_length_c"],
        cell["_cell_angle_alpha"], cell["_cell_angle_beta"], cell["_cell_angle_gamma"],
    ])
    return params, np.array(rows), species


def write_manifest(path: str | Path, command: str, seed: int | None,
                   config_doc: dict | None = None,
                   input_files: list[str | Path] | None = None) -> str:
    """Run manifest with content hashes; returns the manifest id."""
    hashes = {}
    for f in input_files or []:
        f = Path(f)
        if f.exists():
            hashes[str(f)] = hashlib.sha256(f.read_bytes()).hexdigest()
    body = {
        "command": command,
        "seed": seed,
        "config": config_doc,
        "input_hashes": hashes,
        "version": "sgflow-0.1.0",
    }
    manifest_id = hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()[:16]
    body["id"] = manifest_id
    body["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(json.dumps(body, indent=1, sort_keys=True) + "\n")
    tmp.replace(path)
    return manifest_id
