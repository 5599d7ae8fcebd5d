import itertools

import numpy as np
import pytest

CELL = """data_{name}
_cell_length_a {a}
_cell_length_b {b}
_cell_length_c {c}
_cell_angle_alpha {alpha}
_cell_angle_beta {beta}
_cell_angle_gamma {gamma}
"""


def cell_block(a, b=None, c=None, alpha=90, beta=90, gamma=90, name="test"):
    return CELL.format(name=name, a=a, b=b or a, c=c or a, alpha=alpha, beta=beta, gamma=gamma)


def site_loop(rows):
    lines = ["loop_", "_atom_site_label", "_atom_site_fract_x", "_atom_site_fract_y", "_atom_site_fract_z"]
    lines += [f"{label} {x} {y} {z}" for label, x, y, z in rows]
    return "\n".join(lines) + "\n"


def symop_loop(ops):
    return "loop_\n_symmetry_equiv_pos_as_xyz\n" + "\n".join(f"'{op}'" for op in ops) + "\n"


def _term(sign, axis, shift):
    s = ("-" if sign < 0 else "") + axis
    return s + ("+1/2" if shift else "")


def fm3m_operators():
    """The 192 general positions of Fm-3m: 48 signed axis permutations times 4 centring shifts."""
    ops = []
    centring = [(0, 0, 0), (0, 1, 1), (1, 0, 1), (1, 1, 0)]
    for shift in centring:
        for perm in itertools.permutations("xyz"):
            for signs in itertools.product((1, -1), repeat=3):
                ops.append(",".join(_term(s, ax, t) for s, ax, t in zip(signs, perm, shift)))
    return ops


@pytest.fixture
def cubic_cif():
    return cell_block(5) + site_loop([("Na", 0, 0, 0)])


@pytest.fixture
def rocksalt_cif():
    return cell_block(5.64, name="NaCl") + symop_loop(fm3m_operators()) + site_loop(
        [("Na1", 0, 0, 0), ("Cl1", 0.5, 0, 0)]
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
