"""Shared fixtures: hand-built molecules and a synthetic pocket PDB."""

import numpy as np
import pytest

from poseforge import molio

BENZENE_MOL = """benzene
  fixture

  6  6  0  0  0  0  0  0  0  0999 V2000
    1.3900    0.0000    0.0000 C   0  0  0  0  0  0  0  0  0  0  0  0
    0.6950    1.2037    0.0000 C   0  0  0  0  0  0  0  0  0  0  0  0
   -0.6950    1.2037    0.0000 C   0  0  0  0  0  0  0  0  0  0  0  0
   -1.3900    0.0000    0.0000 C   0  0  0  0  0  0  0  0  0  0  0  0
   -0.6950   -1.2037    0.0000 C   0  0  0  0  0  0  0  0  0  0  0  0
    0.6950   -1.2037    0.0000 C   0  0  0  0  0  0  0  0  0  0  0  0
  1  2  4  0  0  0  0
  2  3  4  0  0  0  0
  3  4  4  0  0  0  0
  4  5  4  0  0  0  0
  5  6  4  0  0  0  0
  6  1  4  0  0  0  0
M  END
"""

ETHANE_HEAVY_MOL = """ethane
  fixture

  2  1  0  0  0  0  0  0  0  0999 V2000
    0.0000    0.0000    0.0000 C   0  0  0  0  0  0  0  0  0  0  0  0
    1.5400    0.0000    0.0000 C   0  0  0  0  0  0  0  0  0  0  0  0
  1  2  1  0  0  0  0
M  END
"""

# Methanol with explicit hydrogens: 3 H atoms that the parser must drop.
METHANOL_WITH_H_MOL = """methanol
  fixture

  5  4  0  0  0  0  0  0  0  0999 V2000
    0.0000    0.0000    0.0000 C   0  0  0  0  0  0  0  0  0  0  0  0
    1.4300    0.0000    0.0000 O   0  0  0  0  0  0  0  0  0  0  0  0
   -0.5000    0.9000    0.0000 H   0  0  0  0  0  0  0  0  0  0  0  0
   -0.5000   -0.9000    0.3000 H   0  0  0  0  0  0  0  0  0  0  0  0
   -0.5000    0.0000   -0.9500 H   0  0  0  0  0  0  0  0  0  0  0  0
  1  2  1  0  0  0  0
  1  3  1  0  0  0  0
  1  4  1  0  0  0  0
  1  5  1  0  0  0  0
M  END
"""

# Three residues: ALA1 near the origin, GLY2 ~5 A away with one atom at 7 A,
# LEU3 centered ~12 A away (outside a 6 A selection).
POCKET_PDB = """HEADER    FIXTURE
ATOM      1  N   ALA A   1       3.000   0.000   0.000  1.00  0.00           N
ATOM      2  CA  ALA A   1       4.400   0.000   0.000  1.00  0.00           C
ATOM      3  CB  ALA A   1       5.100   1.200   0.000  1.00  0.00           C
ATOM      4  H   ALA A   1       3.200   0.900   0.000  1.00  0.00           H
ATOM      5  N   GLY A   2       0.000   5.000   0.000  1.00  0.00           N
ATOM      6  CA  GLY A   2       0.000   6.400   0.300  1.00  0.00           C
ATOM      7  O   GLY A   2       0.000   7.000   1.500  1.00  0.00           O
ATOM      8  N   LEU A   3      12.000   0.000   0.000  1.00  0.00           N
ATOM      9  CA  LEU A   3      13.400   0.200   0.000  1.00  0.00           C
HETATM   10  O   HOH A  99       1.000   1.000   1.000  1.00  0.00           O
END
"""


@pytest.fixture
def benzene():
    return molio.parse_ligand_sdf(BENZENE_MOL)


@pytest.fixture
def ethane():
    return molio.parse_ligand_sdf(ETHANE_HEAVY_MOL)


@pytest.fixture
def pocket_pdb_text():
    return POCKET_PDB


def make_chain(n, spacing=1.5, elements=None, bond_types=None, name="chain"):
    """A straight-line heavy-atom chain, handy as an arbitrary small ligand."""
    coords = np.zeros((n, 3))
    coords[:, 0] = np.arange(n) * spacing
    bonds = [(i, i + 1, (bond_types or ["single"] * (n - 1))[i]) for i in range(n - 1)]
    return molio.MoleculeGraph(
        atom_types=[molio.element_index(e) for e in (elements or ["C"] * n)],
        coords=coords,
        bonds=bonds,
        name=name,
        elements=elements or ["C"] * n,
    )
