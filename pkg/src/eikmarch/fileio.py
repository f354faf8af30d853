"""On-disk formats: EIKFIELD binary fields, a plain-CSV field format for
small grids, EIKSURV survey files, and the key=value inversion config.

EIKFIELD v1: one ASCII header line
    EIKFIELD v1 <dim> <n1> <n2> [<n3>] <h> <ox> <oy> [<oz>]
followed by raw little-endian float64 values in linear-index order
(last axis fastest).

EIKSURV v1: one ASCII header line
    EIKSURV v1 <dim> <n_src> <n_rec>
followed by little-endian int64 source multi-indices (n_src x dim),
int64 linear receiver indices (n_rec), and float64 d_obs (n_src x n_rec).
"""

from __future__ import annotations

import numpy as np

from .grid import RegularGrid, ScalarField, SourceSpec
from .tomography import BoundMap, InversionConfig, Survey


class FormatError(ValueError):
    """Malformed or mismatched file content."""


_F8 = np.dtype("<f8")
_I8 = np.dtype("<i8")


def _fmt_float(x: float) -> str:
    return repr(float(x))


def write_field(field: ScalarField, path):
    g = field.grid
    header = "EIKFIELD v1 {} {} {} {}\n".format(
        g.dim,
        " ".join(str(c) for c in g.counts),
        _fmt_float(g.spacing),
        " ".join(_fmt_float(o) for o in g.origin),
    )
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(np.ascontiguousarray(field.values, dtype=_F8).tobytes())


def read_field(path) -> ScalarField:
    with open(path, "rb") as f:
        header = f.readline().decode("ascii", errors="replace").split()
        if len(header) < 3 or header[0] != "EIKFIELD" or header[1] != "v1":
            raise FormatError(f"{path}: not an EIKFIELD v1 file")
        try:
            dim = int(header[2])
            counts = tuple(int(x) for x in header[3:3 + dim])
            h = float(header[3 + dim])
            origin = tuple(float(x) for x in header[4 + dim:4 + 2 * dim])
        except (ValueError, IndexError) as e:
            raise FormatError(f"{path}: bad EIKFIELD header") from e
        grid = RegularGrid(counts, h, origin)
        raw = f.read(grid.n_nodes * 8)
        if len(raw) != grid.n_nodes * 8:
            raise FormatError(f"{path}: truncated EIKFIELD payload")
        return ScalarField(grid, np.frombuffer(raw, dtype=_F8).copy())


def write_field_csv(field: ScalarField, path):
    """Small-field CSV: a metadata comment, then one value per line."""
    g = field.grid
    with open(path, "w") as f:
        f.write("# EIKFIELD-CSV v1 dim={} counts={} h={} origin={}\n".format(
            g.dim,
            ",".join(str(c) for c in g.counts),
            _fmt_float(g.spacing),
            ",".join(_fmt_float(o) for o in g.origin),
        ))
        f.write("value\n")
        for v in field.values:
            f.write(_fmt_float(v) + "\n")


def read_field_csv(path) -> ScalarField:
    with open(path) as f:
        meta = f.readline().strip()
        if not meta.startswith("# EIKFIELD-CSV v1"):
            raise FormatError(f"{path}: not an EIKFIELD-CSV v1 file")
        kv = dict(part.split("=", 1) for part in meta.split()[3:])
        try:
            counts = tuple(int(x) for x in kv["counts"].split(","))
            h = float(kv["h"])
            origin = tuple(float(x) for x in kv["origin"].split(","))
        except (KeyError, ValueError) as e:
            raise FormatError(f"{path}: bad EIKFIELD-CSV header") from e
        if f.readline().strip() != "value":
            raise FormatError(f"{path}: missing column header")
        values = np.array([float(line) for line in f if line.strip()])
    return ScalarField(RegularGrid(counts, h, origin), values)


def write_survey(survey: Survey, path):
    src = np.array([s.index for s in survey.sources], dtype=_I8)
    with open(path, "wb") as f:
        f.write(f"EIKSURV v1 {survey.grid.dim} {survey.n_src} "
                f"{survey.n_rec}\n".encode("ascii"))
        f.write(np.ascontiguousarray(src).tobytes())
        f.write(np.ascontiguousarray(survey.receivers, dtype=_I8).tobytes())
        f.write(np.ascontiguousarray(survey.d_obs, dtype=_F8).tobytes())


def read_survey(path, grid: RegularGrid) -> Survey:
    with open(path, "rb") as f:
        header = f.readline().decode("ascii", errors="replace").split()
        if len(header) != 5 or header[0] != "EIKSURV" or header[1] != "v1":
            raise FormatError(f"{path}: not an EIKSURV v1 file")
        dim, n_src, n_rec = (int(x) for x in header[2:])
        if dim != grid.dim:
            raise FormatError(f"{path}: survey is {dim}D, grid is {grid.dim}D")
        src = np.frombuffer(f.read(n_src * dim * 8), dtype=_I8)
        rec = np.frombuffer(f.read(n_rec * 8), dtype=_I8)
        d = np.frombuffer(f.read(n_src * n_rec * 8), dtype=_F8)
        if src.size != n_src * dim or rec.size != n_rec or d.size != n_src * n_rec:
            raise FormatError(f"{path}: truncated EIKSURV payload")
    sources = tuple(SourceSpec(tuple(row)) for row in src.reshape(n_src, dim))
    return Survey(grid, sources, rec.copy(), d.reshape(n_src, n_rec).copy())


_CONFIG_KEYS = ("alpha", "n_gn", "n_cg", "ls_shrink", "ls_max", "armijo_c",
                "fm_order", "m_lo", "m_hi")


def write_inversion_config(cfg: InversionConfig, path, mprime_ref_path):
    """Config as key=value lines; the reference model is stored alongside
    as an EIKFIELD and referenced by (relative) path."""
    write_field(cfg.mprime_ref, mprime_ref_path)
    with open(path, "w") as f:
        f.write(f"alpha = {_fmt_float(cfg.alpha)}\n")
        f.write(f"n_gn = {cfg.n_gn}\n")
        f.write(f"n_cg = {cfg.n_cg}\n")
        f.write(f"ls_shrink = {_fmt_float(cfg.ls_shrink)}\n")
        f.write(f"ls_max = {cfg.ls_max}\n")
        f.write(f"armijo_c = {_fmt_float(cfg.armijo_c)}\n")
        f.write(f"fm_order = {cfg.fm_order}\n")
        f.write(f"m_lo = {_fmt_float(cfg.bounds.m_lo)}\n")
        f.write(f"m_hi = {_fmt_float(cfg.bounds.m_hi)}\n")
        f.write(f"mprime_ref_file = {mprime_ref_path}\n")


def read_inversion_config(path) -> InversionConfig:
    kv = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise FormatError(f"{path}: bad config line {line!r}")
            key, val = (part.strip() for part in line.split("=", 1))
            kv[key] = val
    missing = [k for k in (*_CONFIG_KEYS, "mprime_ref_file") if k not in kv]
    if missing:
        raise FormatError(f"{path}: missing config keys {missing}")
    try:
        bounds = BoundMap(float(kv["m_lo"]), float(kv["m_hi"]))
        mprime_ref = read_field(kv["mprime_ref_file"])
        return InversionConfig(
            bounds=bounds, mprime_ref=mprime_ref,
            alpha=float(kv["alpha"]), n_gn=int(kv["n_gn"]),
            n_cg=int(kv["n_cg"]), ls_shrink=float(kv["ls_shrink"]),
            ls_max=int(kv["ls_max"]), armijo_c=float(kv["armijo_c"]),
            fm_order=int(kv["fm_order"]),
        )
    except (ValueError, OSError) as e:
        raise FormatError(f"{path}: bad config value ({e})") from e
