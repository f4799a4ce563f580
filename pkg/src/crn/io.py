"""Point-cloud files and dataset manifests.

XYZ: one point per line, three whitespace-separated decimals. Written with
17 significant digits and LF endings so values survive a round trip.

PLY subset: ASCII only, a single ``vertex`` element whose properties are
exactly ``x``, ``y`` and ``z`` (float or double), no other elements.

Manifest: one pair per line, ``input-path target-path source category``
separated by single spaces; relative paths resolve against the manifest's
directory.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ContractError, FormatError
from .selfsup import SOURCES, TrainingPair


class CloudParseError(FormatError):
    def __init__(self, path, lineno: int, message: str):
        super().__init__(f"{path}:{lineno}: {message}")
        self.lineno = lineno


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def _parse_xyz_lines(lines, path, first_lineno: int = 1) -> np.ndarray:
    points = []
    for offset, line in enumerate(lines):
        lineno = first_lineno + offset
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 3:
            raise CloudParseError(path, lineno, f"expected 3 values, found {len(parts)}")
        try:
            xyz = [float(p) for p in parts]
        except ValueError:
            raise CloudParseError(path, lineno, f"not a number in {line.strip()!r}") from None
        if not all(np.isfinite(xyz)):
            raise ValueError(f"{path}:{lineno}: non-finite coordinate in {line.strip()!r}")
        points.append(xyz)
    return np.array(points, dtype=np.float64).reshape(-1, 3)


def _read_ply(lines: list[str], path) -> np.ndarray:
    if not lines or lines[0].strip() != "ply":
        raise CloudParseError(path, 1, "missing 'ply' magic")
    count, props, end = None, [], None
    for i, line in enumerate(lines[1:], 2):
        tok = line.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            if tok[1:2] != ["ascii"]:
                raise CloudParseError(path, i, "only ascii PLY is supported")
        elif tok[0] == "element":
            if tok[1] != "vertex" or count is not None:
                raise CloudParseError(path, i, f"unsupported element {tok[1]!r}")
            count = int(tok[2])
        elif tok[0] == "property":
            if tok[1] not in ("float", "double", "float32", "float64"):
                raise CloudParseError(path, i, f"unsupported property type {tok[1]!r}")
            props.append(tok[2])
        elif tok[0] == "end_header":
            end = i
            break
        else:
            raise CloudParseError(path, i, f"unexpected header line {line.strip()!r}")
    if end is None or count is None:
        raise CloudParseError(path, len(lines), "incomplete PLY header")
    if props != ["x", "y", "z"]:
        raise CloudParseError(path, end, f"vertex properties must be x y z, got {props}")
    body = lines[end:end + count]
    if sum(1 for line in body if line.strip()) != count:
        raise CloudParseError(path, end + len(body), f"expected {count} vertices")
    return _parse_xyz_lines(body, path, end + 1)


def read_cloud(path) -> np.ndarray:
    path = Path(path)
    text = path.read_text()
    lines = text.splitlines()
    if path.suffix.lower() == ".ply" or (lines and lines[0].strip() == "ply"):
        return _read_ply(lines, path)
    return _parse_xyz_lines(lines, path)


def cloud_text(cloud, fmt: str = "xyz") -> str:
    cloud = np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    body = "".join(f"{_fmt(x)} {_fmt(y)} {_fmt(z)}\n" for x, y, z in cloud)
    if fmt == "xyz":
        return body
    if fmt == "ply":
        header = (
            "ply\nformat ascii 1.0\n"
            f"element vertex {len(cloud)}\n"
            "property double x\nproperty double y\nproperty double z\nend_header\n"
        )
        return header + body
    raise ContractError(f"unknown cloud format {fmt!r}")


def write_cloud(cloud, path, fmt: str | None = None) -> None:
    path = Path(path)
    fmt = fmt or ("ply" if path.suffix.lower() == ".ply" else "xyz")
    text = cloud_text(cloud, fmt)
    try:
        with open(path, "w", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write cloud to {path}: {exc.strerror}") from exc


def write_manifest(pairs: list[TrainingPair], directory, stem: str = "pair") -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, pair in enumerate(pairs):
        inp, tgt = f"{stem}{i:05d}_input.xyz", f"{stem}{i:05d}_target.xyz"
        write_cloud(pair.input, directory / inp)
        write_cloud(pair.target, directory / tgt)
        lines.append(f"{inp} {tgt} {pair.source} {pair.category}\n")
    manifest = directory / "manifest.txt"
    manifest.write_text("".join(lines))
    return manifest


def read_manifest(path) -> list[TrainingPair]:
    path = Path(path)
    root = path.parent
    pairs = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 4:
            raise CloudParseError(path, lineno, "expected: input target source category")
        inp, tgt, source, category = parts
        if source not in SOURCES:
            raise CloudParseError(path, lineno, f"unknown source tag {source!r}")
        pairs.append(TrainingPair(read_cloud(root / inp), read_cloud(root / tgt), source, category))
    return pairs
