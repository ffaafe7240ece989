"""Dense Hermitian eigensolver for small matrices (cyclic complex Jacobi)."""

from __future__ import annotations

import numpy as np


def jacobi_eigh(H, tol=1e-14, max_sweeps=60):
    """Diagonalize a complex Hermitian matrix by cyclic Jacobi rotations.

    Parameters
    ----------
    H : (n, n) array_like
        Hermitian matrix. Only used through its Hermitian part.
    tol : float
        Convergence threshold on the off-diagonal Frobenius norm, relative
        to the Frobenius norm of ``H``.
    max_sweeps : int
        Upper bound on full sweeps over the strict upper triangle.

    Returns
    -------
    w : (n,) ndarray
        Eigenvalues in ascending order.
    V : (n, n) ndarray
        Unitary matrix whose columns are the matching eigenvectors.
    """
    a = np.array(H, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("expected a square matrix")
    a = 0.5 * (a + a.conj().T)
    n = a.shape[0]
    v = np.eye(n, dtype=complex)
    scale = np.linalg.norm(a)
    if n == 1 or scale == 0.0:
        return a.diagonal().real.copy(), v

    for _ in range(max_sweeps):
        off = np.linalg.norm(a - np.diag(a.diagonal()))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                mag = abs(apq)
                if mag <= 1e-300 or mag <= 1e-18 * scale:
                    continue
                phase = apq / mag
                app = a[p, p].real
                aqq = a[q, q].real
                # real symmetric rotation after removing the phase of a_pq
                theta = 0.5 * np.arctan2(2.0 * mag, aqq - app)
                c = np.cos(theta)
                s = np.sin(theta)
                _rotate(a, v, p, q, c, s, phase)
        a = 0.5 * (a + a.conj().T)

    w = a.diagonal().real.copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


def _rotate(a, v, p, q, c, s, phase):
    # G acts on columns (p, q): [col_p, col_q] <- [col_p, col_q] @ G with
    # G = [[c, s*phase], [-s*conj(phase), c]] chosen to null a[p, q].
    cp = a[:, p].copy()
    cq = a[:, q].copy()
    a[:, p] = c * cp - s * np.conj(phase) * cq
    a[:, q] = s * phase * cp + c * cq
    rp = a[p, :].copy()
    rq = a[q, :].copy()
    a[p, :] = c * rp - s * phase * rq
    a[q, :] = s * np.conj(phase) * rp + c * rq
    vp = v[:, p].copy()
    vq = v[:, q].copy()
    v[:, p] = c * vp - s * np.conj(phase) * vq
    v[:, q] = s * phase * vp + c * vq
