"""Gmsh bridge: POS background-field export, .geo emission, mesh generation
via the ``gmsh`` executable, and MSH ASCII parsing."""

from __future__ import annotations

import os
import shutil
import subprocess
import tempfile
import warnings
from pathlib import Path

import numpy as np

from .mesh import Mesh, MeshError, PolygonDomain, VertexField, check_mesh, uniform_mesh
from .refine import fallback_refine, grade_size_field

GMSH_ENV_VAR = "PARAFEM_GMSH"


class GeneratorError(Exception):
    pass


def gmsh_executable(config_path: str | None = None) -> str:
    """Resolve the gmsh executable: env var first, then config, then PATH."""
    exe = os.environ.get(GMSH_ENV_VAR)
    if exe:
        return exe
    if config_path:
        return config_path
    return "gmsh"


def gmsh_available(exe: str | None = None) -> str | None:
    """Return the gmsh version string, or None if the executable is missing."""
    exe = exe or gmsh_executable()
    if shutil.which(exe) is None:
        return None
    try:
        out = subprocess.run(
            [exe, "--version"], capture_output=True, text=True, timeout=30
        )
    except OSError:
        return None
    text = (out.stdout + out.stderr).strip()
    return text.splitlines()[0] if text else None


def write_background_field(size: VertexField, path) -> None:
    """Write a Gmsh POS ASCII view: one scalar triangle per element."""
    vals = size.values
    if np.any(vals <= 0.0):
        raise MeshError("background field sizes must be strictly positive")
    mesh = size.mesh
    lines = ['View "size" {']
    for tri in mesh.elements:
        p = mesh.vertices[tri]
        coords = ",".join(f"{p[i, 0]:.17g},{p[i, 1]:.17g},0" for i in range(3))
        svals = ",".join(f"{vals[i]:.17g}" for i in tri)
        lines.append(f"ST({coords}){{{svals}}};")
    lines.append("};")
    Path(path).write_text("\n".join(lines) + "\n")


def write_geo(domain: PolygonDomain, path, pos_file: str | None = None,
              uniform_h: float | None = None) -> None:
    """Write a plane-surface .geo for the polygon, optionally with a
    background field loaded from a POS view."""
    b = domain.boundary
    n = len(b)
    lines = []
    h = uniform_h if uniform_h is not None else domain.diameter
    for i, (x, y) in enumerate(b, start=1):
        lines.append(f"Point({i}) = {{{x:.17g}, {y:.17g}, 0, {h:.17g}}};")
    for i in range(1, n + 1):
        j = i % n + 1
        lines.append(f"Line({i}) = {{{i}, {j}}};")
    loop = ", ".join(str(i) for i in range(1, n + 1))
    lines.append(f"Curve Loop(1) = {{{loop}}};")
    lines.append("Plane Surface(1) = {1};")
    if pos_file is not None:
        lines.append(f'Merge "{pos_file}";')
        lines.append("Field[1] = PostView;")
        lines.append("Field[1].ViewIndex = 0;")
        lines.append("Background Field = 1;")
        lines.append("Mesh.CharacteristicLengthExtendFromBoundary = 0;")
        lines.append("Mesh.CharacteristicLengthFromPoints = 0;")
    Path(path).write_text("\n".join(lines) + "\n")


def parse_msh(path) -> Mesh:
    """Parse an MSH ASCII file (2.2 required, 4.1 supported) into a Mesh.

    Points and line elements are skipped; tetrahedra are an error. The domain
    is reconstructed as the bounding box unless set by the caller afterwards.
    """
    text = Path(path).read_text().splitlines()
    sections = _split_sections(text)
    if "MeshFormat" not in sections:
        raise GeneratorError("missing $MeshFormat section")
    version = sections["MeshFormat"][0].split()[0]
    if version.startswith("2."):
        verts, tris = _parse_msh2(sections)
    elif version.startswith("4."):
        verts, tris = _parse_msh4(sections)
    else:
        raise GeneratorError(f"unsupported MSH version {version}")
    if len(verts) == 0:
        raise GeneratorError("empty $Nodes section")
    if len(tris) == 0:
        raise GeneratorError("no triangles in mesh file")
    b = np.asarray(verts)
    domain = PolygonDomain(
        np.array(
            [
                [b[:, 0].min(), b[:, 1].min()],
                [b[:, 0].max(), b[:, 1].min()],
                [b[:, 0].max(), b[:, 1].max()],
                [b[:, 0].min(), b[:, 1].max()],
            ]
        )
    )
    mesh = Mesh(b, np.asarray(tris, dtype=np.int64), domain)
    check_mesh(mesh)
    return mesh


def _split_sections(lines):
    sections = {}
    name, buf = None, []
    for line in lines:
        s = line.strip()
        if not s:
            continue
        if s.startswith("$End"):
            sections[name] = buf
            name, buf = None, []
        elif s.startswith("$"):
            name = s[1:]
            buf = []
        elif name is not None:
            buf.append(s)
    return sections


def _parse_msh2(sections):
    if "Nodes" not in sections or not sections["Nodes"]:
        raise GeneratorError("missing or empty $Nodes section")
    nodes = sections["Nodes"]
    count = int(nodes[0])
    if count == 0 or len(nodes) - 1 != count:
        raise GeneratorError("malformed $Nodes section")
    ids, coords = [], []
    for line in nodes[1:]:
        parts = line.split()
        ids.append(int(parts[0]))
        coords.append((float(parts[1]), float(parts[2])))
    remap = {nid: i for i, nid in enumerate(ids)}
    tris = []
    for line in sections.get("Elements", [])[1:]:
        parts = [int(t) for t in line.split()]
        etype, ntags = parts[1], parts[2]
        conn = parts[3 + ntags:]
        if etype == 2:
            tris.append([remap[c] for c in conn])
        elif etype in (15, 1):
            continue  # points / boundary lines from Gmsh
        elif etype == 4:
            raise GeneratorError("tetrahedra are not supported")
        else:
            warnings.warn(f"skipping unsupported element type {etype}")
    return np.asarray(coords), tris


def _parse_msh4(sections):
    if "Nodes" not in sections or not sections["Nodes"]:
        raise GeneratorError("missing or empty $Nodes section")
    nodes = sections["Nodes"]
    header = nodes[0].split()
    num_blocks, total = int(header[0]), int(header[1])
    ids, coords = [], []
    i = 1
    for _ in range(num_blocks):
        n_in_block = int(nodes[i].split()[3])
        block_ids = [int(nodes[i + 1 + j]) for j in range(n_in_block)]
        for j in range(n_in_block):
            parts = nodes[i + 1 + n_in_block + j].split()
            coords.append((float(parts[0]), float(parts[1])))
        ids.extend(block_ids)
        i += 1 + 2 * n_in_block
    if len(ids) != total:
        raise GeneratorError("malformed $Nodes section")
    remap = {nid: k for k, nid in enumerate(ids)}
    tris = []
    elems = sections.get("Elements", [])
    num_blocks = int(elems[0].split()[0])
    i = 1
    for _ in range(num_blocks):
        _, _, etype, n_in_block = (int(t) for t in elems[i].split())
        for j in range(n_in_block):
            parts = [int(t) for t in elems[i + 1 + j].split()]
            if etype == 2:
                tris.append([remap[c] for c in parts[1:4]])
            elif etype == 4:
                raise GeneratorError("tetrahedra are not supported")
        i += 1 + n_in_block
    return np.asarray(coords), tris


def generate_mesh(
    domain: PolygonDomain,
    size: VertexField | None = None,
    uniform_h: float | None = None,
    generator: str = "fallback",
    gmsh_path: str | None = None,
    extra_flags: tuple = (),
    workdir=None,
    max_vertices: int | None = None,
) -> Mesh:
    """Produce a conforming mesh of the domain honoring a size field.

    Either a vertex size field on a guide mesh or a uniform target size must
    be given. generator='external' runs the gmsh subprocess; 'fallback' uses
    the built-in size-driven bisection refiner.
    """
    if (size is None) == (uniform_h is None):
        raise ValueError("give exactly one of size or uniform_h")
    if generator == "external":
        return _generate_external(domain, size, uniform_h, gmsh_path, extra_flags, workdir)
    if generator != "fallback":
        raise ValueError(f"unknown generator {generator!r}")
    if uniform_h is not None:
        mesh = uniform_mesh(domain, uniform_h)
        check_mesh(mesh)
        return mesh
    graded = grade_size_field(size)  # gmsh smooths gradation itself
    refined, _ = fallback_refine(graded.mesh, graded, max_vertices=max_vertices)
    check_mesh(refined)
    return refined


def _generate_external(domain, size, uniform_h, gmsh_path, extra_flags, workdir):
    exe = gmsh_executable(gmsh_path)
    if gmsh_available(exe) is None:
        raise GeneratorError(f"gmsh executable {exe!r} not found")
    ctx = tempfile.TemporaryDirectory() if workdir is None else None
    wd = Path(ctx.name if ctx else workdir)
    try:
        geo = wd / "domain.geo"
        out = wd / "out.msh"
        if size is not None:
            pos = wd / "field.pos"
            write_background_field(size, pos)
            write_geo(domain, geo, pos_file=pos.name)
        else:
            write_geo(domain, geo, uniform_h=uniform_h)
        cmd = [exe, "-2", "-format", "msh2", "-o", str(out), *extra_flags, str(geo)]
        proc = subprocess.run(cmd, capture_output=True, text=True, cwd=wd)
        if proc.returncode != 0:
            raise GeneratorError(
                f"gmsh failed (exit {proc.returncode}): {proc.stderr.strip()[:500]}"
            )
        mesh = parse_msh(out)
        return Mesh(mesh.vertices, mesh.elements, domain)
    finally:
        if ctx:
            ctx.cleanup()
