"""Reading and writing fields, masks and flow traces.

Fields: one JSON header line (grid, kind, dtype) followed by the values as
little-endian float64 in C order. Masks: binary PGM (P5) with 0 outside and
255 inside, rows along array axis 0. A 3-D mask is a directory of 2-D slices
along axis 0 plus ``mask.json`` carrying the grid.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .anisotropy import Anisotropy
from .fields import Grid, ScalarField, SetMask, VectorField

DTYPE = "<f8"


def write_field(path, f: ScalarField | VectorField) -> None:
    kind = "vector" if isinstance(f, VectorField) else "scalar"
    header = {"grid": f.grid.to_dict(), "kind": kind, "dtype": DTYPE,
              "components": f.grid.dim if kind == "vector" else 1}
    with open(path, "wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode())
        fh.write(np.ascontiguousarray(f.values, dtype=DTYPE).tobytes())


def read_field(path) -> ScalarField | VectorField:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        raw = fh.read()
    if header.get("dtype", DTYPE) != DTYPE:
        raise ValueError(f"unsupported dtype {header['dtype']!r}")
    grid = Grid.from_dict(header["grid"])
    values = np.frombuffer(raw, dtype=DTYPE).astype(float)
    if header.get("kind") == "vector":
        return VectorField(grid, values.reshape(grid.shape + (grid.dim,)))
    return ScalarField(grid, values.reshape(grid.shape))


def _write_pgm(path, img: np.ndarray) -> None:
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(np.where(img, 255, 0).astype(np.uint8).tobytes())


def read_pgm(path) -> np.ndarray:
    """Boolean image (pixel > 127) from a binary 8-bit PGM."""
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos].decode())
    pos += 1
    if tokens[0] != "P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval > 255:
        raise ValueError(f"{path}: 16-bit PGM not supported")
    img = np.frombuffer(data[pos:pos + w * h], dtype=np.uint8)
    if img.size != w * h:
        raise ValueError(f"{path}: truncated image")
    return img.reshape(h, w) > maxval // 2


def write_mask(path, m: SetMask) -> None:
    """2-D masks go to one PGM; 3-D masks to a directory of slices."""
    if m.grid.dim == 2:
        _write_pgm(path, m.inside)
        return
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    for i in range(m.grid.shape[0]):
        _write_pgm(d / f"{i:04d}.pgm", m.inside[i])
    (d / "mask.json").write_text(json.dumps({"grid": m.grid.to_dict(),
                                             "slices": m.grid.shape[0]}, sort_keys=True))


def read_mask(path, grid: Grid | None = None) -> SetMask:
    p = Path(path)
    if p.is_dir():
        meta = json.loads((p / "mask.json").read_text())
        g = grid or Grid.from_dict(meta["grid"])
        inside = np.stack([read_pgm(p / f"{i:04d}.pgm") for i in range(meta["slices"])])
        return SetMask(g, inside)
    img = read_pgm(p)
    if grid is None:
        raise ValueError("a 2-D mask file needs a grid")
    return SetMask(grid, img)


def write_trace(outdir, tr, fields: bool = False) -> dict:
    """Frames, optional fields and a manifest skeleton for a flow trace."""
    out = Path(outdir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    for rec in tr.steps:
        ext = ".pgm" if rec.mask.grid.dim == 2 else ""
        write_mask(out / "frames" / f"{rec.k:04d}{ext}", rec.mask)
        if fields and rec.u is not None:
            (out / "fields").mkdir(exist_ok=True)
            write_field(out / "fields" / f"u_{rec.k:04d}.bin", rec.u)
            write_field(out / "fields" / f"z_{rec.k:04d}.bin", rec.z)
    return {
        "grid": tr.grid.to_dict(),
        "anisotropy": tr.anisotropy.to_dict(),
        "flow": tr.params.to_dict(),
        "steps": [rec.diagnostics() for rec in tr.steps],
        "extinction_time": tr.extinction_time,
        "terminated_reason": tr.terminated_reason.value,
    }


def load_trace(outdir):
    """Rebuild a FlowTrace from a run directory (manifest.json + frames)."""
    from .flow import FlowParams, FlowTrace, StepRecord, Termination

    out = Path(outdir)
    mpath = out / "manifest.json"
    if not mpath.is_file():
        raise FileNotFoundError(f"no manifest.json in {outdir}")
    man = json.loads(mpath.read_text())
    grid = Grid.from_dict(man["grid"])
    a = Anisotropy.from_dict(man["anisotropy"])
    fl = man["flow"]
    fp = FlowParams(h=fl["h"], t_max=fl["t_max"], margin=fl.get("margin"),
                    record_fields=fl.get("record_fields", False))
    tr = FlowTrace(params=fp, anisotropy=a,
                   extinction_time=man.get("extinction_time"),
                   terminated_reason=Termination(man["terminated_reason"]))
    ext = ".pgm" if grid.dim == 2 else ""
    for s in man["steps"]:
        k = s["k"]
        mask = read_mask(out / "frames" / f"{k:04d}{ext}", grid if grid.dim == 2 else None)
        rec = StepRecord(k, s["t"], mask, residual=s.get("residual", 0.0), gap=s.get("gap", 0.0),
                         iters=s.get("iters", 0), converged=s.get("converged", True))
        up = out / "fields" / f"u_{k:04d}.bin"
        if up.is_file():
            rec.u = read_field(up)
            rec.z = read_field(out / "fields" / f"z_{k:04d}.bin")
        tr.steps.append(rec)
    if not tr.steps:
        raise ValueError(f"trace in {outdir} has no steps")
    return tr

