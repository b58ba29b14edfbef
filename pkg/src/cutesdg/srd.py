"""State redistribution (SRD) for small cut elements.

Every element owns a merge neighborhood: itself if its volume reaches
``threshold`` times a background cell area, otherwise itself plus face
neighbors (largest first) until that volume is reached. With ``N_j`` the
number of neighborhoods containing element ``j``:

1. each neighborhood's solution is L2-projected onto ``P^N`` of its union,
   with element ``j`` weighted by ``1/N_j``;
2. each element's new state is the average of the merged polynomials of the
   neighborhoods containing it, projected back onto the element's own space.

The weighting makes the total of every conserved variable invariant, and a
global polynomial of degree ``N`` is reproduced. Since the mesh is fixed the
whole map is assembled once as a sparse matrix.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .basis import LegendreBasis

log = logging.getLogger(__name__)


class SRDError(RuntimeError):
    pass


@dataclass
class MergeNeighborhood:
    owner: int
    members: list
    volume: float

    @property
    def is_singleton(self):
        return len(self.members) == 1


@dataclass
class NeighborhoodTable:
    neighborhoods: list
    overlap: np.ndarray
    threshold: float

    @property
    def n_merged(self):
        return sum(not nb.is_singleton for nb in self.neighborhoods)


def element_adjacency(mesh):
    adj = [set() for _ in mesh.elements]
    for f in mesh.faces:
        if f.right is not None and f.right != f.left:
            adj[f.left].add(f.right)
            adj[f.right].add(f.left)
    return adj


def build_neighborhoods(mesh, threshold: float = 0.5) -> NeighborhoodTable:
    if not 0 < threshold <= 1:
        raise SRDError("SRD threshold must lie in (0, 1]")
    target = threshold * mesh.grid.cell_area
    vols = np.array([e.volume for e in mesh.elements])
    adj = element_adjacency(mesh)
    nbhds = []
    for el in mesh.elements:
        members = [el.id]
        vol = vols[el.id]
        while vol < target:
            cand = set().union(*(adj[m] for m in members)) - set(members)
            if not cand:
                if len(members) == 1:
                    raise SRDError(f"small element {el.id} has no neighbors to merge with")
                raise SRDError(f"neighborhood of element {el.id} cannot reach the target volume")
            best = max(cand, key=lambda j: (vols[j], -j))
            members.append(best)
            vol += vols[best]
        nbhds.append(MergeNeighborhood(el.id, members, float(vol)))
    overlap = np.zeros(len(mesh.elements), dtype=int)
    for nb in nbhds:
        overlap[nb.members] += 1
    table = NeighborhoodTable(nbhds, overlap, threshold)
    log.info("SRD: %d merged neighborhoods, max overlap %d", table.n_merged, overlap.max())
    return table


def srd_operator(disc, table: NeighborhoodTable) -> sp.csr_matrix:
    """Sparse matrix ``S`` with ``apply_srd(u) = S @ u``."""
    ops = disc.mops.ops
    off = disc.dof_offsets
    N = disc.mesh.N
    rows, cols, vals = [], [], []

    def add(block, k, m):
        ii, jj = np.nonzero(block)
        rows.append(ii + off[k])
        cols.append(jj + off[m])
        vals.append(block[ii, jj])

    inv = 1.0 / table.overlap
    for nb in table.neighborhoods:
        if nb.is_singleton:
            k = nb.owner
            add(inv[k] * np.eye(ops[k].dim), k, k)
            continue
        pts = np.vstack([ops[m].xq for m in nb.members])
        wts = np.concatenate([inv[m] * ops[m].wq for m in nb.members])
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        try:
            phi = LegendreBasis(N, lo, hi).orthonormalized(pts, wts)
        except np.linalg.LinAlgError:
            raise SRDError(f"merged projection singular for neighborhood of element {nb.owner}") from None
        # coefficients of the merged polynomial from each member
        to_merged = {m: phi(ops[m].xq).T @ ((inv[m] * ops[m].wq)[:, None] * ops[m].Vq)
                     for m in nb.members}
        for k in nb.members:
            back = inv[k] * (ops[k].Pq @ phi(ops[k].xq))
            for m in nb.members:
                add(back @ to_merged[m], k, m)
    n = disc.n_dofs
    S = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n))
    S.sum_duplicates()
    return S


class StateRedistribution:
    """Precomputed SRD map for one discretization."""

    def __init__(self, disc, threshold: float = 0.5):
        self.table = build_neighborhoods(disc.mesh, threshold)
        self.S = srd_operator(disc, self.table)

    def __call__(self, u):
        return self.S @ u


def apply_srd(disc, table, u):
    return srd_operator(disc, table) @ u
