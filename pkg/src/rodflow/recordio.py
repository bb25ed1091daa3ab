"""Diagnostics CSV, frame dumps, and binary checkpoints.

records.csv schema (fixed 12 columns, '.17g' floats, lossless round-trip):

    step,bending,twisting,penalty,tp,total,twist,uniformity,vy,vb,violation,wall_ms

Frame dumps are plain TSV, one row per director node with the curve data of
the folded node repeated on the last row of a closed rod:

    # rodflow frame v1
    # step=120 L=6.2831853071795862 periodic=1
    node  z  px py pz  dx dy dz  bx by bz

Checkpoints are npz containers (written under a .bin name) holding the dof
arrays, the configuration, the boundary targets and the step counter; a
version field guards the layout.
"""

from __future__ import annotations

import io
import math
import os
import zipfile

import numpy as np

from .flow import DiagnosticsRecord
from .mesh import DirectorField, HermiteCurve, Mesh1D
from .model import BoundaryCondition, EnergyBreakdown, FlowConfig, RodState

__all__ = [
    "RECORD_FIELDS",
    "write_records",
    "read_records",
    "records_to_rows",
    "write_frame",
    "read_frame",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointError",
    "CHECKPOINT_VERSION",
]

RECORD_FIELDS = ("step", "bending", "twisting", "penalty", "tp", "total",
                 "twist", "uniformity", "vy", "vb", "violation", "wall_ms")

CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def records_to_rows(records) -> list[list[float]]:
    rows = []
    for r in records:
        e = r.energy
        rows.append([r.step, e.bending, e.twisting, e.penalty, e.tangent_point, e.total,
                     r.total_twist, r.uniformity, r.vel_y, r.vel_b, r.violation, r.wall_ms])
    return rows


def write_records(records, path, append: bool = False) -> None:
    """Write diagnostics records as CSV; `append` skips the header."""
    mode = "a" if append and os.path.exists(path) else "w"
    with open(path, mode, encoding="ascii", newline="\n") as f:
        if mode == "w":
            f.write(",".join(RECORD_FIELDS) + "\n")
        for row in records_to_rows(records):
            f.write(str(int(row[0])) + "," + ",".join(_fmt(v) for v in row[1:]) + "\n")


def read_records(path) -> list[DiagnosticsRecord]:
    out = []
    with open(path, "r", encoding="ascii") as f:
        header = f.readline().strip()
        if header != ",".join(RECORD_FIELDS):
            raise IOError(f"unexpected records header in {path}: {header!r}")
        for line in f:
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != len(RECORD_FIELDS):
                raise IOError(f"malformed record row in {path}: {line!r}")
            step = int(parts[0])
            vals = [float(p) for p in parts[1:]]
            energy = EnergyBreakdown(vals[0], vals[1], vals[2], vals[3], vals[4])
            out.append(DiagnosticsRecord(step, energy, vals[5], vals[6], vals[7],
                                         vals[8], vals[9], vals[10]))
    return out


def write_frame(path, step: int, state: RodState) -> None:
    """Dump nodal positions, derivatives and directors as TSV."""
    mesh = state.mesh
    ncn = mesh.n_curve_nodes
    with open(path, "w", encoding="ascii", newline="\n") as f:
        f.write("# rodflow frame v1\n")
        f.write(f"# step={int(step)} L={_fmt(mesh.length)} periodic={1 if mesh.periodic else 0}\n")
        f.write("node\tz\tpx\tpy\tpz\tdx\tdy\tdz\tbx\tby\tbz\n")
        for i in range(mesh.n_director_nodes):
            ci = i % ncn if mesh.periodic else i
            p = state.curve.positions[ci]
            d = state.curve.derivatives[ci]
            b = state.director.values[i]
            cells = [str(i)] + [_fmt(v) for v in (mesh.nodes[i], *p, *d, *b)]
            f.write("\t".join(cells) + "\n")


def read_frame(path):
    """Rebuild (step, RodState) from a frame dump."""
    step = None
    length = None
    periodic = None
    rows = []
    with open(path, "r", encoding="ascii") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    if tok.startswith("step="):
                        step = int(tok[5:])
                    elif tok.startswith("L="):
                        length = float(tok[2:])
                    elif tok.startswith("periodic="):
                        periodic = bool(int(tok[9:]))
                continue
            if line.startswith("node"):
                continue
            rows.append([float(v) for v in line.split("\t")])
    if step is None or length is None or periodic is None:
        raise IOError(f"frame dump {path} is missing its header")
    arr = np.array(rows)
    z = arr[:, 1].copy()
    z[-1] = length
    mesh = Mesh1D(z, periodic)
    ncn = mesh.n_curve_nodes
    curve = HermiteCurve(arr[:ncn, 2:5], arr[:ncn, 5:8])
    director = DirectorField(arr[:, 8:11])
    return step, RodState(curve, director, mesh)


def save_checkpoint(path, state: RodState, cfg: FlowConfig, bc: BoundaryCondition,
                    step: int, scenario: str = "") -> None:
    payload = {
        "version": np.array([CHECKPOINT_VERSION]),
        "step": np.array([int(step)]),
        "scenario": np.array([scenario]),
        "mesh_nodes": state.mesh.nodes,
        "periodic": np.array([1 if state.mesh.periodic else 0]),
        "positions": state.curve.positions,
        "derivatives": state.curve.derivatives,
        "director": state.director.values,
        "cfg": np.array([cfg.kappa, cfg.epsilon, cfg.tau, cfg.rho, cfg.q,
                         cfg.eps_stop, float(cfg.max_steps)]),
        "star_weights": np.array(cfg.star_weights, dtype=float),
        "dagger_weights": np.array(cfg.dagger_weights, dtype=float),
        "bc_kind": np.array([bc.kind]),
        "bc_director": bc.director_ends,
    }
    if bc.kind == "clamped_both":
        payload["bc_curve_pos"] = bc.curve_pos
        payload["bc_curve_deriv"] = bc.curve_deriv
    np.savez(path, **payload)
    # np.savez appends .npz; keep the requested name
    if not str(path).endswith(".npz") and os.path.exists(str(path) + ".npz"):
        os.replace(str(path) + ".npz", path)


def load_checkpoint(path):
    """Restore (state, cfg, bc, step, scenario); rejects foreign layouts."""
    try:
        with np.load(path, allow_pickle=False) as z:
            if "version" not in z:
                raise CheckpointError(f"{path} is not a rodflow checkpoint")
            ver = int(z["version"][0])
            if ver != CHECKPOINT_VERSION:
                raise CheckpointError(
                    f"checkpoint version mismatch in {path}: found {ver}, expected {CHECKPOINT_VERSION}"
                )
            mesh = Mesh1D(z["mesh_nodes"], bool(int(z["periodic"][0])))
            state = RodState(HermiteCurve(z["positions"], z["derivatives"]),
                             DirectorField(z["director"]), mesh)
            c = z["cfg"]
            cfg = FlowConfig(kappa=float(c[0]), epsilon=float(c[1]), tau=float(c[2]),
                             rho=float(c[3]), q=float(c[4]), eps_stop=float(c[5]),
                             max_steps=int(c[6]),
                             star_weights=tuple(z["star_weights"]),
                             dagger_weights=tuple(z["dagger_weights"]))
            kind = str(z["bc_kind"][0])
            if kind == "clamped_both":
                bc = BoundaryCondition(kind, z["bc_director"], z["bc_curve_pos"], z["bc_curve_deriv"])
            else:
                bc = BoundaryCondition(kind, z["bc_director"])
            step = int(z["step"][0])
            scenario = str(z["scenario"][0])
    except CheckpointError:
        raise
    except (OSError, ValueError, KeyError, zipfile.BadZipFile) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return state, cfg, bc, step, scenario
