"""CIF ingestion and specimen geometry.

Parses a pragmatic subset of CIF (cell parameters, one atom-site loop and an
optional symmetry-operator loop), orients the lattice along a zone axis,
tiles and crops it into a specimen block and bins the atoms into slices.

Lengths are stored in nm throughout; CIF files carry Angstrom.
"""

from __future__ import annotations

import json
import math
import re
import shlex
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import constants
from .errors import (
    DegenerateZoneAxis,
    EmptyBlock,
    MalformedLoop,
    MissingCellParameter,
    NonPositiveSliceThickness,
    UnknownElementSymbol,
    UnsupportedCif,
)

ELEMENT_SYMBOLS = (
    "H He Li Be B C N O F Ne Na Mg Al Si P S Cl Ar K Ca Sc Ti V Cr Mn Fe Co Ni "
    "Cu Zn Ga Ge As Se Br Kr Rb Sr Y Zr Nb Mo Tc Ru Rh Pd Ag Cd In Sn Sb Te I Xe "
    "Cs Ba La Ce Pr Nd Pm Sm Eu Gd Tb Dy Ho Er Tm Yb Lu Hf Ta W Re Os Ir Pt Au "
    "Hg Tl Pb Bi Po At Rn Fr Ra Ac Th Pa U Np Pu Am Cm Bk Cf Es Fm Md No Lr"
).split()
ATOMIC_NUMBERS = {s: z for z, s in enumerate(ELEMENT_SYMBOLS, start=1)}

DEDUP_TOLERANCE_NM = 0.01
DEFAULT_PAD_XY_NM = 0.8
DEFAULT_PAD_Z_NM = 0.3
DEFAULT_SLICE_THICKNESS_NM = 0.2

_CELL_TAGS = (
    "_cell_length_a",
    "_cell_length_b",
    "_cell_length_c",
    "_cell_angle_alpha",
    "_cell_angle_beta",
    "_cell_angle_gamma",
)
_SYMOP_TAGS = ("_symmetry_equiv_pos_as_xyz", "_space_group_symop_operation_xyz")


@dataclass(frozen=True)
class Site:
    Z: int
    fractional_coords: tuple[float, float, float]
    occupancy: float = 1.0


@dataclass(frozen=True)
class CrystalStructure:
    cell_lengths: tuple[float, float, float]
    cell_angles: tuple[float, float, float]
    sites: tuple[Site, ...]

    def __post_init__(self):
        if any(not length > 0 for length in self.cell_lengths):
            raise ValueError(f"cell lengths must be positive, got {self.cell_lengths}")
        if any(not 0 < angle < 180 for angle in self.cell_angles):
            raise ValueError(f"cell angles must lie in (0, 180), got {self.cell_angles}")
        for site in self.sites:
            if not 1 <= site.Z <= 103:
                raise ValueError(f"atomic number out of range: {site.Z}")
            if not 0 < site.occupancy <= 1:
                raise ValueError(f"occupancy must lie in (0, 1], got {site.occupancy}")

    def lattice_vectors(self) -> np.ndarray:
        """Rows are the a, b, c lattice vectors in Cartesian nm (a along x)."""
        a, b, c = self.cell_lengths
        alpha, beta, gamma = np.radians(self.cell_angles)
        cx = c * math.cos(beta)
        cy = c * (math.cos(alpha) - math.cos(beta) * math.cos(gamma)) / math.sin(gamma)
        cz = math.sqrt(max(c * c - cx * cx - cy * cy, 0.0))
        return np.array(
            [
                [a, 0.0, 0.0],
                [b * math.cos(gamma), b * math.sin(gamma), 0.0],
                [cx, cy, cz],
            ]
        )


@dataclass(frozen=True)
class SimGeometry:
    """The subset of simulation parameters that fixes the specimen geometry."""

    zone_axis: tuple[int, int, int]
    width: float
    depth: float
    tilt: tuple[float, float] = (0.0, 0.0)
    seed: int = 0


@dataclass(frozen=True)
class SpecimenBlock:
    Z: np.ndarray  # (N,) int
    positions: np.ndarray  # (N, 3) nm
    extent: tuple[float, float, float]
    pad_xy: float = DEFAULT_PAD_XY_NM
    pad_z: float = DEFAULT_PAD_Z_NM
    zone_axis: tuple[int, int, int] = (0, 0, 1)
    tilt: tuple[float, float] = (0.0, 0.0)

    def __len__(self):
        return len(self.Z)

    @property
    def padded_extent(self) -> tuple[float, float, float]:
        w_x, w_y, depth = self.extent
        return (w_x + 2 * self.pad_xy, w_y + 2 * self.pad_xy, depth + 2 * self.pad_z)

    def to_json(self) -> str:
        return json.dumps(
            {
                "extent_nm": list(self.extent),
                "pad_xy_nm": self.pad_xy,
                "pad_z_nm": self.pad_z,
                "zone_axis": list(self.zone_axis),
                "tilt_deg": list(self.tilt),
                "atoms": [
                    {"Z": int(z), "position_nm": [float(v) for v in pos]}
                    for z, pos in zip(self.Z, self.positions)
                ],
            },
            indent=1,
        )


@dataclass(frozen=True)
class SliceStack:
    slices: tuple[np.ndarray, ...]  # atom indices into the block, per slice
    dz: float
    block: SpecimenBlock = field(repr=False)

    def __len__(self):
        return len(self.slices)

    def atoms(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Atomic numbers and positions of slice ``i``."""
        idx = self.slices[i]
        return self.block.Z[idx], self.block.positions[idx]


# --------------------------------------------------------------------------
# CIF parsing

_NUMBER = re.compile(r"^([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)(?:\(\d+\))?$")


def _number(token: str, line: int) -> float:
    m = _NUMBER.match(token)
    if not m:
        raise MalformedLoop("expected a number", token=token, line=line)
    return float(m.group(1))


def element_from_label(token: str, line: int | None = None) -> int:
    """Atomic number from a CIF type symbol or site label (``Na1``, ``O2-``, ``CL``)."""
    m = re.match(r"([A-Za-z]{1,2})", token)
    if m:
        letters = m.group(1)
        for candidate in (letters, letters[:1]):
            symbol = candidate.capitalize()
            if symbol in ATOMIC_NUMBERS:
                return ATOMIC_NUMBERS[symbol]
    raise UnknownElementSymbol("unknown element symbol", token=token, line=line)


def _tokenize(line: str) -> list[str]:
    try:
        return shlex.split(line, posix=True)
    except ValueError:
        return line.split()


def _logical_lines(text: str):
    """Yield (line_number, stripped_line), folding ;-delimited text fields into one token."""
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        raw = lines[i]
        if raw.startswith(";"):
            start = i + 1
            i += 1
            while i < len(lines) and not lines[i].startswith(";"):
                i += 1
            i += 1
            yield start, "'<text>'"
            continue
        stripped = raw.strip()
        if stripped.startswith("#"):
            stripped = ""
        elif "#" in stripped and "'" not in stripped and '"' not in stripped:
            stripped = re.sub(r"\s#.*$", "", stripped)
        if stripped:
            yield i + 1, stripped
        i += 1


def parse_symop(op: str, line: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Parse an operator such as ``-x+1/2,y,-z`` into a rotation matrix and translation."""
    parts = op.replace(" ", "").lower().split(",")
    if len(parts) != 3:
        raise MalformedLoop("symmetry operator needs three components", token=op, line=line)
    rot = np.zeros((3, 3))
    trans = np.zeros(3)
    for row, expr in enumerate(parts):
        for sign, term in re.findall(r"([+-]?)([^+-]+)", expr):
            s = -1.0 if sign == "-" else 1.0
            m = re.fullmatch(r"(\d*\.?\d*/?\d*\.?\d*)\*?([xyz])?", term)
            if not m or (not m.group(1) and not m.group(2)):
                raise MalformedLoop("bad symmetry operator term", token=op, line=line)
            coeff, axis = m.group(1), m.group(2)
            if axis:
                value = float(Fraction(coeff)) if coeff else 1.0
                rot[row, "xyz".index(axis)] += s * value
            else:
                trans[row] += s * float(Fraction(coeff))
    return rot, trans


def _read_loop(items, start):
    """Collect tags and value rows of a loop_ starting at items[start]."""
    tags = []
    i = start
    while i < len(items) and items[i][1].startswith("_"):
        tags.append((items[i][0], items[i][1].split()[0].lower()))
        if len(items[i][1].split()) > 1:
            raise MalformedLoop("loop tag followed by a value", token=items[i][1], line=items[i][0])
        i += 1
    values = []
    while i < len(items):
        lineno, text = items[i]
        if text.startswith("_") or text.lower().startswith(("loop_", "data_")):
            break
        values.extend((lineno, tok) for tok in _tokenize(text))
        i += 1
    return tags, values, i


def parse_cif(text: str) -> CrystalStructure:
    """Parse CIF text into a `CrystalStructure`, applying symmetry operators if present."""
    items = list(_logical_lines(text))
    blocks = [ln for ln, t in items if t.lower().startswith("data_")]
    if len(blocks) > 1:
        raise UnsupportedCif("multi-block CIF files are not supported", line=blocks[1])
    if any(t.lower().startswith(("save_", "global_")) for _, t in items):
        raise UnsupportedCif("CIF dictionaries are not supported")

    scalars: dict[str, tuple[int, str]] = {}
    site_loop = None
    symops: list[tuple[int, str]] = []
    i = 0
    while i < len(items):
        lineno, text_line = items[i]
        low = text_line.lower()
        if low.startswith("loop_"):
            tags, values, i = _read_loop(items, i + 1)
            names = [t for _, t in tags]
            if not names:
                raise MalformedLoop("empty loop", line=lineno)
            if len(values) % len(names):
                bad_line, bad_token = values[-(len(values) % len(names))]
                raise MalformedLoop(
                    f"{len(values)} values do not fill {len(names)} columns",
                    token=bad_token,
                    line=bad_line,
                )
            rows = [values[k : k + len(names)] for k in range(0, len(values), len(names))]
            if "_atom_site_fract_x" in names:
                if site_loop is not None:
                    raise UnsupportedCif("more than one atom-site loop", line=lineno)
                site_loop = (lineno, names, rows)
            else:
                for tag in _SYMOP_TAGS:
                    if tag in names:
                        col = names.index(tag)
                        symops = [row[col] for row in rows]
            continue
        if text_line.startswith("_"):
            tokens = _tokenize(text_line)
            tag = tokens[0].lower()
            if len(tokens) > 1:
                scalars[tag] = (lineno, tokens[1])
            elif i + 1 < len(items) and not items[i + 1][1].startswith(("_", "loop_")):
                scalars[tag] = (items[i + 1][0], items[i + 1][1])
                i += 1
        i += 1

    cell = []
    for tag in _CELL_TAGS:
        if tag not in scalars:
            raise MissingCellParameter("missing cell parameter", token=tag)
        lineno, token = scalars[tag]
        cell.append(_number(token, lineno))
    lengths = tuple(constants.angstrom_to_nm(v) for v in cell[:3])
    angles = tuple(cell[3:])

    if site_loop is None:
        raise MalformedLoop("no atom-site loop with fractional coordinates")
    loop_line, names, rows = site_loop
    for tag in ("_atom_site_fract_y", "_atom_site_fract_z"):
        if tag not in names:
            raise MalformedLoop("atom-site loop lacks a coordinate column", token=tag, line=loop_line)
    if "_atom_site_type_symbol" in names:
        elem_col = names.index("_atom_site_type_symbol")
    elif "_atom_site_label" in names:
        elem_col = names.index("_atom_site_label")
    else:
        raise MalformedLoop("atom-site loop lacks element symbols", line=loop_line)
    occ_col = names.index("_atom_site_occupancy") if "_atom_site_occupancy" in names else None
    xyz_cols = [names.index(f"_atom_site_fract_{c}") for c in "xyz"]

    base = []
    for row in rows:
        lineno, token = row[elem_col]
        Z = element_from_label(token, lineno)
        xyz = np.array([_number(row[c][1], row[c][0]) for c in xyz_cols])
        occ = 1.0
        if occ_col is not None and row[occ_col][1] not in ("?", "."):
            occ = _number(row[occ_col][1], row[occ_col][0])
        if not 0 < occ <= 1:
            raise MalformedLoop("occupancy outside (0, 1]", token=row[occ_col][1], line=lineno)
        base.append((Z, xyz, occ))

    ops = [parse_symop(op, ln) for ln, op in symops] or [(np.eye(3), np.zeros(3))]
    structure = CrystalStructure(lengths, angles, ())
    sites = expand_sites(base, ops, structure.lattice_vectors())
    return CrystalStructure(lengths, angles, tuple(sites))


def _wrap(frac):
    w = np.mod(frac, 1.0)
    w[w >= 1.0] = 0.0
    return w


def expand_sites(base, ops, lattice, tol=DEDUP_TOLERANCE_NM) -> list[Site]:
    """Apply every operator to every site, dropping images within ``tol`` nm of a kept site."""
    kept: list[Site] = []
    kept_frac: list[np.ndarray] = []
    for Z, xyz, occ in base:
        for rot, trans in ops:
            frac = _wrap(rot @ xyz + trans)
            duplicate = False
            for other, f in zip(kept, kept_frac):
                d = frac - f
                d -= np.round(d)
                if np.linalg.norm(d @ lattice) < tol:
                    duplicate = True
                    break
            if not duplicate:
                kept.append(Site(Z, tuple(float(v) for v in frac), occ))
                kept_frac.append(frac)
    return kept


def write_cif(crystal: CrystalStructure, name: str = "structure") -> str:
    """Serialize to the CIF subset understood by `parse_cif` (sites already expanded)."""
    out = [f"data_{name}"]
    for tag, value in zip(_CELL_TAGS[:3], crystal.cell_lengths):
        out.append(f"{tag} {constants.nm_to_angstrom(value)!r}")
    for tag, value in zip(_CELL_TAGS[3:], crystal.cell_angles):
        out.append(f"{tag} {float(value)!r}")
    out += [
        "loop_",
        "_atom_site_label",
        "_atom_site_type_symbol",
        "_atom_site_fract_x",
        "_atom_site_fract_y",
        "_atom_site_fract_z",
        "_atom_site_occupancy",
    ]
    for k, site in enumerate(crystal.sites):
        sym = ELEMENT_SYMBOLS[site.Z - 1]
        x, y, z = site.fractional_coords
        out.append(f"{sym}{k + 1} {sym} {x!r} {y!r} {z!r} {site.occupancy!r}")
    return "\n".join(out) + "\n"


# --------------------------------------------------------------------------
# Geometry


def _rotation_about(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = axis / np.linalg.norm(axis)
    x, y, z = axis
    c, s = math.cos(angle), math.sin(angle)
    C = 1 - c
    return np.array(
        [
            [c + x * x * C, x * y * C - z * s, x * z * C + y * s],
            [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
            [z * x * C - y * s, z * y * C + x * s, c + z * z * C],
        ]
    )


def zone_axis_rotation(lattice: np.ndarray, zone_axis: Sequence[int]) -> np.ndarray:
    """Rotation taking the direction h*a + k*b + l*c onto +z.

    The in-plane azimuth is fixed by sending the projection of ``a`` (or ``b``,
    ``c`` if ``a`` is parallel to the zone axis) onto +x.
    """
    hkl = np.asarray(zone_axis, dtype=float)
    if not np.any(hkl):
        raise DegenerateZoneAxis(f"zone axis {tuple(zone_axis)} is the zero vector")
    u = hkl @ lattice
    ez = u / np.linalg.norm(u)
    for v in lattice:
        p = v - (v @ ez) * ez
        if np.linalg.norm(p) > 1e-9 * np.linalg.norm(v):
            ex = p / np.linalg.norm(p)
            break
    ey = np.cross(ez, ex)
    return np.vstack([ex, ey, ez])


def tilt_rotation(tilt_deg: Sequence[float]) -> np.ndarray:
    """Small rotations about x (first angle) then y (second angle), in degrees."""
    tx, ty = np.radians(tilt_deg)
    return _rotation_about(np.array([0.0, 1.0, 0.0]), ty) @ _rotation_about(
        np.array([1.0, 0.0, 0.0]), tx
    )


def build_block(
    crystal: CrystalStructure,
    params,
    pad_xy: float = DEFAULT_PAD_XY_NM,
    pad_z: float = DEFAULT_PAD_Z_NM,
) -> SpecimenBlock:
    """Orient, tilt, tile and crop ``crystal`` into a width x width x depth block.

    ``params`` needs ``zone_axis``, ``width``, ``depth``, ``tilt`` and ``seed``
    attributes (`SimGeometry` or the dataset's `SimParams`). Partially occupied
    sites are kept with probability equal to their occupancy, drawn from a
    generator seeded by ``params.seed``.
    """
    width, depth = float(params.width), float(params.depth)
    if not (width > 0 and depth > 0):
        raise EmptyBlock(f"non-positive block size width={width} depth={depth}")
    lattice = crystal.lattice_vectors()
    rot = tilt_rotation(params.tilt) @ zone_axis_rotation(lattice, params.zone_axis)
    basis = lattice @ rot.T  # rotated lattice vectors as rows
    box = np.array([width, width, depth])

    if not crystal.sites:
        raise EmptyBlock("crystal has no atomic sites")

    corners = np.array([[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)]) * box
    frac_corners = corners @ np.linalg.inv(basis)
    lo = np.floor(frac_corners.min(axis=0)).astype(int) - 1
    hi = np.ceil(frac_corners.max(axis=0)).astype(int) + 1
    cells = np.stack(
        np.meshgrid(*(np.arange(a, b + 1) for a, b in zip(lo, hi)), indexing="ij"), axis=-1
    ).reshape(-1, 3)

    site_frac = np.array([s.fractional_coords for s in crystal.sites])
    site_Z = np.array([s.Z for s in crystal.sites])
    site_occ = np.array([s.occupancy for s in crystal.sites])

    frac = (cells[:, None, :] + site_frac[None, :, :]).reshape(-1, 3)
    Z = np.tile(site_Z, len(cells))
    occ = np.tile(site_occ, len(cells))
    pos = frac @ basis

    eps = 1e-9
    inside = np.all((pos >= -eps) & (pos < box - eps), axis=1)
    pos, Z, occ = pos[inside], Z[inside], occ[inside]
    if np.any(occ < 1):
        rng = np.random.default_rng(params.seed)
        keep = rng.random(len(occ)) < occ
        pos, Z = pos[keep], Z[keep]
    if len(Z) == 0:
        raise EmptyBlock(
            f"no atoms inside {width:g} x {width:g} x {depth:g} nm block for zone axis "
            f"{tuple(params.zone_axis)}"
        )
    pos = np.clip(pos, 0.0, box)
    order = np.lexsort((pos[:, 0], pos[:, 1], pos[:, 2]))
    return SpecimenBlock(
        Z=Z[order],
        positions=pos[order],
        extent=(width, width, depth),
        pad_xy=pad_xy,
        pad_z=pad_z,
        zone_axis=tuple(int(v) for v in params.zone_axis),
        tilt=tuple(float(v) for v in params.tilt),
    )


def partition_slices(block: SpecimenBlock, dz: float = DEFAULT_SLICE_THICKNESS_NM) -> SliceStack:
    """Bin atoms by depth (including the axial vacuum pad) into slices of thickness ``dz``."""
    if not dz > 0:
        raise NonPositiveSliceThickness(f"slice thickness must be positive, got {dz}")
    total = block.extent[2] + 2 * block.pad_z
    n_slices = max(int(math.ceil(total / dz - 1e-9)), 1)
    z = block.positions[:, 2] + block.pad_z if len(block) else np.zeros(0)
    index = np.clip(np.floor(z / dz).astype(int), 0, n_slices - 1)
    order = np.argsort(index, kind="stable")
    bounds = np.searchsorted(index[order], np.arange(n_slices + 1))
    slices = tuple(order[bounds[i] : bounds[i + 1]] for i in range(n_slices))
    return SliceStack(slices=slices, dz=dz, block=block)
