"""Atom-frequency split of a learned dictionary into principal and noise parts.

An atom's frequency is the number of columns whose code uses it. Atoms are
ranked by frequency; the modal frequency of the histogram marks the bulk of
rarely used (noise) atoms, and the atoms used more often than that form the
principal sub-dictionary.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from dualsparse.errors import DimensionError
from dualsparse.sparse import SparseCodes, reconstruct


class TypicalRegimeWarning(UserWarning):
    """The principal part kept more than half of the atoms."""


@dataclass
class SubdictSplit:
    """Frequencies, descending order and cut index of one split.

    ``order[:cut]`` are the principal atoms, ``order[cut:]`` the noise atoms.
    """

    frequencies: np.ndarray
    order: np.ndarray
    cut: int
    modal_frequency: int

    def __post_init__(self):
        K = self.frequencies.size
        if sorted(self.order.tolist()) != list(range(K)):
            raise DimensionError("order must be a permutation of the atom indices")
        if not 1 <= self.cut <= K:
            raise DimensionError(f"cut {self.cut} outside [1, {K}]")

    @property
    def n_atoms(self) -> int:
        return self.frequencies.size

    @property
    def principal_atoms(self) -> np.ndarray:
        return self.order[: self.cut]

    @property
    def noise_atoms(self) -> np.ndarray:
        return self.order[self.cut :]


@dataclass
class SubDictionary:
    """A subset of atoms together with their coefficient rows."""

    atoms: np.ndarray
    codes: SparseCodes
    indices: np.ndarray

    @property
    def size(self) -> int:
        return self.indices.size


def atom_frequencies(codes) -> np.ndarray:
    """Nonzero count of every coefficient row."""
    if isinstance(codes, SparseCodes):
        m = codes.matrix
        return np.bincount(m.indices[m.data != 0], minlength=m.shape[0]).astype(np.int64)
    return np.count_nonzero(np.asarray(codes), axis=1).astype(np.int64)


def sort_by_frequency(f) -> np.ndarray:
    """Atom indices by descending frequency; ties keep ascending index."""
    f = np.asarray(f)
    return np.argsort(-f, kind="stable")


def histogram_cut(f_sorted) -> tuple[int, int]:
    """Cut index and modal frequency of a descending frequency vector.

    The histogram uses one bin per integer frequency value. The mode ``f*`` is
    the smallest value with the largest count; the cut counts atoms with a
    frequency strictly above ``f*``. When no atom is above the mode every atom
    is kept.

    Returns:
        ``(P, f*)`` with ``1 <= P <= K``.
    """
    f = np.asarray(f_sorted, dtype=np.int64)
    if f.size == 0:
        raise DimensionError("frequency vector is empty")
    if np.any(np.diff(f) > 0):
        raise DimensionError("frequencies must be sorted in descending order")
    values, counts = np.unique(f, return_counts=True)
    modal = int(values[counts == counts.max()].min())
    P = int(np.count_nonzero(f > modal))
    if P == 0:
        P = f.size
    return P, modal


def compute_split(codes, warn: bool = True) -> SubdictSplit:
    """Frequencies, ranking and histogram cut for a code matrix."""
    f = atom_frequencies(codes)
    order = sort_by_frequency(f)
    P, modal = histogram_cut(f[order])
    if warn and P > f.size / 2:
        warnings.warn(
            f"principal part keeps {P} of {f.size} atoms (modal frequency {modal})", TypicalRegimeWarning, stacklevel=2
        )
    return SubdictSplit(frequencies=f, order=order, cut=P, modal_frequency=modal)


def split(D, codes: SparseCodes, s: SubdictSplit) -> tuple[SubDictionary, SubDictionary]:
    """Reorder atoms by frequency and partition them at the cut."""
    D = np.asarray(D, dtype=np.float64)
    if D.shape[1] != codes.n_atoms or s.n_atoms != codes.n_atoms:
        raise DimensionError(
            f"dictionary has {D.shape[1]} atoms, codes {codes.n_atoms}, split {s.n_atoms}"
        )
    parts = []
    for idx in (s.principal_atoms, s.noise_atoms):
        parts.append(SubDictionary(D[:, idx], codes.select_rows(idx), idx.copy()))
    return parts[0], parts[1]


def principal_reconstruct(part: SubDictionary) -> np.ndarray:
    """Linear combination of the kept atoms with their own coefficient rows."""
    if part.size == 0:
        return np.zeros((part.atoms.shape[0], part.codes.count))
    return reconstruct(part.atoms, part.codes)
