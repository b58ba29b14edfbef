"""Per-element skew-hybridized SBP operators.

For an element with volume rule ``(x_q, w_q)`` and face rule ``(x_f, w_f, n_f)``:

    M = Vq^T W Vq,  Pq = M^-1 Vq^T W,  E = Vf Pq,
    Q_d = Pq^T M D_d Pq,  B_d = W_f diag(n_d),
    Q_{H,d} = 1/2 [[Q_d - Q_d^T, E^T B_d], [-B_d E, B_d]].

Hybrid ("volume + face") point ordering is all volume points followed by the
face points in the element's loop order.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .basis import LegendreBasis, NodalBasis, TensorLagrangeBasis
from .mesh import CARTESIAN, CutMesh
from .quadrature import (QuadratureRule, cartesian_rule, composite_volume_rule,
                         caratheodory_prune, MomentSystem)

log = logging.getLogger(__name__)


class OperatorError(RuntimeError):
    pass


@dataclass
class ElementOperators:
    basis: object
    xq: np.ndarray
    wq: np.ndarray
    xf: np.ndarray
    wf: np.ndarray
    nf: np.ndarray
    Vq: np.ndarray
    Vf: np.ndarray
    M: np.ndarray
    Pq: np.ndarray
    E: np.ndarray
    D: tuple
    Q: tuple
    B: tuple
    QH: tuple
    chol: tuple = field(repr=False, default=None)

    @property
    def nq(self):
        return len(self.wq)

    @property
    def nf_pts(self):
        return len(self.wf)

    @property
    def dim(self):
        return self.M.shape[0]

    @property
    def W(self):
        return np.diag(self.wq)

    @property
    def Wf(self):
        return np.diag(self.wf)

    @property
    def BH(self):
        return tuple(sla.block_diag(np.zeros((self.nq, self.nq)), Bd) for Bd in self.B)

    @property
    def Vh(self):
        return np.vstack([self.Vq, self.Vf])

    def solve_mass(self, rhs):
        return sla.cho_solve(self.chol, rhs)


def vandermonde(basis, points) -> np.ndarray:
    """``V[i, j] = phi_j(x_i)``."""
    return basis(points)


def differentiation_matrix(basis, d: int) -> np.ndarray:
    """Map nodal coefficients of ``u`` to nodal coefficients of ``du/dx_d``.

    The basis must be nodal: derivatives are evaluated through its modal
    backbone at the nodes.
    """
    return basis.grad(basis.nodes)[:, :, d]


def approximate_fekete_points(modal, candidates, N=None):
    """Greedy column-pivoted QR selection of ``dim`` points from ``candidates``."""
    V = modal(candidates)
    dim = V.shape[1]
    if V.shape[0] < dim:
        raise OperatorError("too few candidate points for approximate Fekete selection")
    _, R, piv = sla.qr(V.T, pivoting=True, mode="economic")
    d = np.abs(np.diag(R))
    if d[dim - 1] <= 1e-12 * d[0]:
        raise OperatorError("candidate cloud is rank deficient for P^N")
    return np.asarray(candidates)[piv[:dim]]


def build_element_operators(basis, vol_rule: QuadratureRule, xf, wf, nf,
                            element_id=None) -> ElementOperators:
    xq, wq = vol_rule.points, vol_rule.weights
    Vq = vandermonde(basis, xq)
    Vf = vandermonde(basis, xf)
    M = Vq.T @ (wq[:, None] * Vq)
    M = 0.5 * (M + M.T)
    try:
        chol = sla.cho_factor(M)
        piv = np.abs(np.diag(chol[0]))
        if piv.min() <= 1e-7 * piv.max():
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        raise OperatorError(f"mass matrix not SPD on element {element_id} "
                            "(insufficient volume quadrature)") from None
    Pq = sla.cho_solve(chol, Vq.T * wq[None, :])
    E = Vf @ Pq
    D, Q, B, QH = [], [], [], []
    for d in range(2):
        Dd = differentiation_matrix(basis, d)
        Qd = Pq.T @ M @ Dd @ Pq
        Bd = np.diag(wf * nf[:, d])
        QHd = 0.5 * np.block([[Qd - Qd.T, E.T @ Bd], [-Bd @ E, Bd]])
        D.append(Dd)
        Q.append(Qd)
        B.append(Bd)
        QH.append(QHd)
    return ElementOperators(basis, xq, wq, xf, wf, nf, Vq, Vf, M, Pq, E,
                            tuple(D), tuple(Q), tuple(B), tuple(QH), chol)


def hybrid_sbp_residual(ops: ElementOperators) -> float:
    """``max_d || Q_{H,d} + Q_{H,d}^T - B_{H,d} ||_max``."""
    return max(np.max(np.abs(QH + QH.T - BH)) for QH, BH in zip(ops.QH, ops.BH))


def constant_annihilation_check(ops: ElementOperators) -> tuple[float, float]:
    """``||Q_{H,d} 1||_inf`` for ``d = 1, 2``."""
    one = np.ones(ops.QH[0].shape[0])
    return tuple(float(np.max(np.abs(QH @ one))) for QH in ops.QH)


def sbp_accuracy_check(ops: ElementOperators, degree: int, reference=None) -> float:
    """Largest error of the hybridized derivative for integrands up to ``degree``.

    The identity checked is ``[Vq; Vf]^T Q_{H,d} [u(x_q); u(x_f)] = (phi_i, du/dx_d)``
    for every test function ``phi_i`` and every monomial ``u`` whose product
    integrand ``phi_i du/dx_d`` has total degree at most ``degree`` (so
    ``degree = 2N - 1`` tests all ``u`` in ``P^N``). The right side is
    integrated with ``reference`` (a :class:`QuadratureRule`, e.g. the unpruned
    composite rule) when given, else with the element's own volume rule.
    Errors are scaled by the element size and basis magnitude.
    """
    N = ops.basis.N
    udeg = degree - N + 1
    xq, xf = ops.xq, ops.xf
    rx, rw = (xq, ops.wq) if reference is None else (reference.points, reference.weights)
    Vr = ops.basis(rx)
    c = np.average(xq, axis=0, weights=ops.wq)
    h = max(np.ptp(np.vstack([xq, xf]), axis=0).max(), 1e-300)
    Vh = ops.Vh
    scale = np.sqrt(ops.wq.sum()) * np.sqrt(np.max(np.diag(ops.M)))
    worst = 0.0
    for i in range(udeg + 1):
        for j in range(udeg + 1 - i):
            def u(p):
                X, Y = (p[:, 0] - c[0]) / h, (p[:, 1] - c[1]) / h
                return X ** i * Y ** j

            def du(p, d):
                X, Y = (p[:, 0] - c[0]) / h, (p[:, 1] - c[1]) / h
                if d == 0:
                    return (i * X ** max(i - 1, 0) * Y ** j / h) if i else 0 * X
                return (j * X ** i * Y ** max(j - 1, 0) / h) if j else 0 * X

            uh = np.concatenate([u(xq), u(xf)])
            for d in range(2):
                lhs = Vh.T @ (ops.QH[d] @ uh)
                rhs = Vr.T @ (rw * du(rx, d))
                err = np.max(np.abs(lhs - rhs)) / scale * h
                worst = max(worst, float(err))
    return worst


@dataclass
class MeshOperators:
    """Operators for every element of a mesh (Cartesian elements share one set)."""

    mesh: CutMesh
    ops: list
    composite_rules: dict
    diagnostics: list


def _cartesian_ops(mesh, el, N):
    (xa, ya), (xb, yb) = el.vertices[0], el.vertices[2]
    basis = TensorLagrangeBasis(N, xa, xb, ya, yb)
    rule = cartesian_rule(xa, xb, ya, yb, N)
    xf, wf, nf = mesh.element_face_points(el.id)
    return build_element_operators(basis, rule, xf, wf, nf, el.id)


def _translate(ops, shift, el_id, mesh):
    xf, wf, nf = mesh.element_face_points(el_id)
    b = ops.basis
    basis = TensorLagrangeBasis(b.N, b.box[0] + shift[0], b.box[1] + shift[0],
                                b.box[2] + shift[1], b.box[3] + shift[1])
    return ElementOperators(basis, ops.xq + shift, ops.wq, xf, wf, nf, ops.Vq, ops.Vf, ops.M,
                            ops.Pq, ops.E, ops.D, ops.Q, ops.B, ops.QH, ops.chol)


def cut_element_operators(mesh, el, N, return_rules=False):
    comp = composite_volume_rule(el, 2 * N - 1)
    # Gram orthonormalization needs products of degree 2N: exact composite rule
    comp_mass = composite_volume_rule(el, 2 * N)
    allpts = np.vstack([comp.points, el.vertices])
    lo, hi = allpts.min(axis=0), allpts.max(axis=0)
    ms = MomentSystem.from_rule(comp, 2 * N - 1, lo, hi)
    pruned = caratheodory_prune(comp, 2 * N - 1, el, N=N, moments=ms)
    modal = LegendreBasis(N, lo, hi).orthonormalized(comp_mass.points, comp_mass.weights)
    xf, wf, nf = mesh.element_face_points(el.id)
    cands = np.vstack([comp.points, xf, el.vertices])
    nodes = approximate_fekete_points(modal, cands, N)
    basis = NodalBasis(modal, nodes)
    ops = build_element_operators(basis, pruned, xf, wf, nf, el.id)
    if return_rules:
        return ops, comp, pruned, ms
    return ops


def build_mesh_operators(mesh: CutMesh, check: bool = True, annihilation_tol: float = 1e-9):
    """Build operators on all elements and run the entropy-stability prerequisites."""
    N = mesh.N
    ops = [None] * len(mesh.elements)
    rules = {}
    ref = None
    diags = []
    for el in mesh.elements:
        if el.kind == CARTESIAN:
            if ref is None:
                ref = (_cartesian_ops(mesh, el, N), el.vertices[0].copy())
                ops[el.id] = ref[0]
            else:
                ops[el.id] = _translate(ref[0], el.vertices[0] - ref[1], el.id, mesh)
        else:
            o, comp, pruned, ms = cut_element_operators(mesh, el, N, return_rules=True)
            ops[el.id] = o
            rules[el.id] = (comp, pruned)
    for el in mesh.elements:
        o = ops[el.id]
        perim = float(o.wf.sum())
        qh1 = constant_annihilation_check(o)
        diag = dict(element=el.id, kind=el.kind, nq=o.nq, nf=o.nf_pts, dim=o.dim,
                    volume=el.volume, perimeter=perim, qh1=max(qh1),
                    hsbp=hybrid_sbp_residual(o), mass_cond=float(np.linalg.cond(o.M)))
        diags.append(diag)
        if check and max(qh1) > annihilation_tol * perim:
            raise OperatorError(f"element {el.id}: ||Q_H 1|| = {max(qh1):.3e} exceeds "
                                f"{annihilation_tol:g} * perimeter")
    return MeshOperators(mesh, ops, rules, diags)


def write_operator_report(mops: MeshOperators, path, degree_check=True):
    """CSV of per-element operator diagnostics."""
    N = mops.mesh.N
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["element", "kind", "nq", "nf", "dim", "volume", "perimeter",
                    "qh1_residual", "hybrid_sbp_residual", "sbp_accuracy_residual",
                    "mass_condition"])
        for d, o in zip(mops.diagnostics, mops.ops):
            acc = sbp_accuracy_check(o, 2 * N - 1) if degree_check else float("nan")
            w.writerow([d["element"], d["kind"], d["nq"], d["nf"], d["dim"], repr(d["volume"]),
                        repr(d["perimeter"]), repr(d["qh1"]), repr(d["hsbp"]), repr(acc),
                        repr(d["mass_cond"])])
