"""Compiled kernels for the marching solver and triangular substitutions.

Everything here works on flat numpy arrays so the hot loops stay inside
numba.  The wrappers in :mod:`eikmarch.fastmarch` and
:mod:`eikmarch.sensitivity` own validation and the public types.
"""

import numpy as np
from numba import njit

# node states during the march
FAR = 0
FRONT = 1
KNOWN = 2

# per-axis stencil direction codes
DIR_NONE = 0
DIR_BACKWARD = 1
DIR_FORWARD = 2

_JIT = dict(cache=True, nogil=True)


# ---------------------------------------------------------------------------
# array-backed binary min-heap of (key, node); ties broken by smaller node
# ---------------------------------------------------------------------------

@njit(**_JIT)
def heap_push(keys, nodes, size, key, node):
    i = size
    while i > 0:
        p = (i - 1) >> 1
        kp = keys[p]
        np_ = nodes[p]
        if kp > key or (kp == key and np_ > node):
            keys[i] = kp
            nodes[i] = np_
            i = p
        else:
            break
    keys[i] = key
    nodes[i] = node
    return size + 1


@njit(**_JIT)
def heap_pop(keys, nodes, size):
    k0 = keys[0]
    n0 = nodes[0]
    size -= 1
    if size > 0:
        key = keys[size]
        node = nodes[size]
        i = 0
        while True:
            c = 2 * i + 1
            if c >= size:
                break
            r = c + 1
            if r < size and (
                keys[r] < keys[c] or (keys[r] == keys[c] and nodes[r] < nodes[c])
            ):
                c = r
            if keys[c] < key or (keys[c] == key and nodes[c] < node):
                keys[i] = keys[c]
                nodes[i] = nodes[c]
                i = c
            else:
                break
        keys[i] = key
        nodes[i] = node
    return k0, n0, size


# ---------------------------------------------------------------------------
# piecewise quadratic local solver
# ---------------------------------------------------------------------------

@njit(**_JIT)
def solve_piecewise(alphas, betas, keep, nterms, kap2):
    """Largest root of sum_k keep_k * alpha_k^2 (t - beta_k)^2 = kap2.

    Terms are removed in decreasing order of beta (a negative discriminant
    counts as an invalid solve) until the root exceeds every retained beta.
    ``keep`` is consumed in place and holds the retained set on return.
    Returns +inf when no term survives.

    The quadratic is formed in the shifted variable t - max(beta): the raw
    coefficients grow like (alpha*t)^2 >> kap2 far from the source and
    their cancellation would spoil the root; after the shift the validity
    condition t > beta_k for every retained term is exactly delta > 0.
    """
    while True:
        imax = -1
        bmax = -np.inf
        nkeep = 0
        for i in range(nterms):
            if keep[i]:
                nkeep += 1
                if betas[i] > bmax:
                    bmax = betas[i]
                    imax = i
        if nkeep == 0:
            return np.inf
        qa = 0.0
        qb = 0.0
        qc = -kap2
        for i in range(nterms):
            if keep[i]:
                al = alphas[i]
                d = betas[i] - bmax
                qa += al * al
                qb += al * al * d
                qc += al * al * d * d
        disc = qb * qb - qa * qc
        if disc >= 0.0:
            delta = (qb + np.sqrt(disc)) / qa
            if delta > 0.0:
                return bmax + delta
        keep[imax] = 0


@njit(**_JIT)
def term_coeffs(factored, plain_fb, order, sgn, h, t0j, g, t1nb1, t1nb2,
                t0nb1, t0nb2):
    """(alpha, beta, ok) for one upwind axis term in the unknown of node j.

    ``sgn`` is +1 for the backward direction and -1 for forward.  In
    factored form the unknown is tau1; the plain-fallback variant uses the
    non-factored operator on tau0*tau1 and ``ok`` reports the near-zero
    alpha guard.
    """
    if factored:
        eps = 1e-14 * (t0j / h + 1.0)
        if not plain_fb:
            if order == 1:
                alpha = t0j / h + sgn * g
                if alpha <= eps:
                    return 0.0, 0.0, False
                beta = t0j * t1nb1 / (h * alpha)
            else:
                alpha = 1.5 * t0j / h + sgn * g
                if alpha <= eps:
                    return 0.0, 0.0, False
                beta = t0j * (4.0 * t1nb1 - t1nb2) / (2.0 * h * alpha)
        else:
            if order == 1:
                alpha = t0j / h
                if alpha <= eps:
                    return 0.0, 0.0, False
                beta = t0nb1 * t1nb1 / t0j
            else:
                alpha = 1.5 * t0j / h
                if alpha <= eps:
                    return 0.0, 0.0, False
                beta = (4.0 * t0nb1 * t1nb1 - t0nb2 * t1nb2) / (3.0 * t0j)
    else:
        eps = 1e-14 * (1.0 / h + 1.0)
        if order == 1:
            alpha = 1.0 / h
            beta = t1nb1
        else:
            alpha = 1.5 / h
            beta = (4.0 * t1nb1 - t1nb2) / 3.0
        if alpha <= eps:
            return 0.0, 0.0, False
    return alpha, beta, True


@njit(**_JIT)
def local_update(j, dim, counts, strides, h, order_max, factored,
                 enforce_mono, tau1, state, tau0, p0, m,
                 sc_dir, sc_ord, sc_plain, sc_nb1, sc_nb2,
                 sc_alpha, sc_beta, sc_keep):
    """Candidate value for front node j from its known neighbors.

    Direction and order selection per axis, then the piecewise quadratic
    solve with the validity drop loop; with ``enforce_mono`` set, axes
    whose non-factored derivative disagrees in sign are recomputed with
    the plain operator of the same order.  The final stencil is left in
    the sc_* scratch arrays (dropped axes zeroed).  Returns -1.0 when no
    valid term exists.
    """
    rem = j
    has_any = False
    for a in range(dim):
        s = strides[a]
        ia = rem // s
        rem -= ia * s
        sc_dir[a] = DIR_NONE
        sc_ord[a] = 0
        sc_plain[a] = 0
        sc_nb1[a] = -1
        sc_nb2[a] = -1
        vb = np.inf
        vf = np.inf
        if ia > 0 and state[j - s] == KNOWN:
            vb = tau0[j - s] * tau1[j - s] if factored else tau1[j - s]
        if ia < counts[a] - 1 and state[j + s] == KNOWN:
            vf = tau0[j + s] * tau1[j + s] if factored else tau1[j + s]
        if vb == np.inf and vf == np.inf:
            continue
        if vb <= vf:  # ties prefer backward
            d = DIR_BACKWARD
            step = -s
        else:
            d = DIR_FORWARD
            step = s
        nb1 = j + step
        sc_dir[a] = d
        sc_nb1[a] = nb1
        o = 1
        if order_max == 2:
            in_bounds = (ia - 2 >= 0) if d == DIR_BACKWARD else (ia + 2 <= counts[a] - 1)
            if in_bounds and state[nb1 + step] == KNOWN:
                nb2 = nb1 + step
                v1 = tau0[nb1] * tau1[nb1] if factored else tau1[nb1]
                v2 = tau0[nb2] * tau1[nb2] if factored else tau1[nb2]
                cond = (v1 >= v2) if d == DIR_BACKWARD else (v1 > v2)
                if cond:
                    o = 2
                    sc_nb2[a] = nb2
        sc_ord[a] = o
        has_any = True
    if not has_any:
        return -1.0

    kap2 = m[j]
    t = np.inf
    for _ in range(dim + 1):
        for a in range(dim):
            sc_keep[a] = 0
            if sc_dir[a] == DIR_NONE:
                continue
            sgn = 1.0 if sc_dir[a] == DIR_BACKWARD else -1.0
            nb1 = sc_nb1[a]
            nb2 = sc_nb2[a]
            t1nb2 = tau1[nb2] if nb2 >= 0 else 0.0
            t0nb2 = tau0[nb2] if (factored and nb2 >= 0) else 0.0
            t0j = tau0[j] if factored else 1.0
            g = p0[a, j] if factored else 0.0
            t0nb1 = tau0[nb1] if factored else 1.0
            alpha, beta, ok = term_coeffs(
                factored, sc_plain[a] != 0, sc_ord[a], sgn, h, t0j, g,
                tau1[nb1], t1nb2, t0nb1, t0nb2,
            )
            if ok:
                sc_alpha[a] = alpha
                sc_beta[a] = beta
                sc_keep[a] = 1
        t = solve_piecewise(sc_alpha, sc_beta, sc_keep, dim, kap2)
        if t == np.inf:
            return -1.0
        if not (factored and enforce_mono):
            break
        changed = False
        for a in range(dim):
            if sc_keep[a] and sc_plain[a] == 0:
                nb1 = sc_nb1[a]
                kj = tau0[j] * t
                if sc_ord[a] == 1:
                    plain_d = kj - tau0[nb1] * tau1[nb1]
                else:
                    nb2 = sc_nb2[a]
                    plain_d = 3.0 * kj - 4.0 * tau0[nb1] * tau1[nb1] \
                        + tau0[nb2] * tau1[nb2]
                if plain_d < 0.0:
                    sc_plain[a] = 1
                    changed = True
        if not changed:
            break
    for a in range(dim):
        if sc_keep[a] == 0:
            sc_dir[a] = DIR_NONE
            sc_ord[a] = 0
            sc_plain[a] = 0
            sc_nb1[a] = -1
            sc_nb2[a] = -1
        elif sc_ord[a] == 1:
            sc_nb2[a] = -1
    return t


# ---------------------------------------------------------------------------
# the march
# ---------------------------------------------------------------------------

@njit(**_JIT)
def fm_march(dim, counts, strides, h, order_max, factored, enforce_mono,
             tau0, p0, m, src, tau1, state, accept_order,
             rec_dir, rec_ord, rec_plain):
    """Single-pass label-setting sweep.  Returns the number of accepted
    nodes, or -1 on an (unreachable) failed local solve."""
    n = tau1.shape[0]
    for k in range(n):
        tau1[k] = np.inf
        state[k] = FAR
        for a in range(dim):
            rec_dir[k, a] = DIR_NONE
            rec_ord[k, a] = 0
            rec_plain[k, a] = 0

    sc_dir = np.empty(3, np.int8)
    sc_ord = np.empty(3, np.int8)
    sc_plain = np.empty(3, np.uint8)
    sc_nb1 = np.empty(3, np.int64)
    sc_nb2 = np.empty(3, np.int64)
    sc_alpha = np.empty(3, np.float64)
    sc_beta = np.empty(3, np.float64)
    sc_keep = np.empty(3, np.uint8)

    cap = n + 64
    hkeys = np.empty(cap, np.float64)
    hnodes = np.empty(cap, np.int64)
    hsize = 0

    tau1[src] = np.sqrt(m[src]) if factored else 0.0
    state[src] = FRONT
    hsize = heap_push(hkeys, hnodes, hsize, 0.0, src)

    na = 0
    while hsize > 0:
        _key, k, hsize = heap_pop(hkeys, hnodes, hsize)
        if state[k] == KNOWN:
            continue  # stale re-insertion
        state[k] = KNOWN
        accept_order[na] = k
        na += 1
        rem = k
        for a in range(dim):
            s = strides[a]
            ia = rem // s
            rem -= ia * s
            for side in range(2):
                if side == 0:
                    if ia == 0:
                        continue
                    j = k - s
                else:
                    if ia == counts[a] - 1:
                        continue
                    j = k + s
                if state[j] == KNOWN:
                    continue
                val = local_update(
                    j, dim, counts, strides, h, order_max, factored,
                    enforce_mono, tau1, state, tau0, p0, m,
                    sc_dir, sc_ord, sc_plain, sc_nb1, sc_nb2,
                    sc_alpha, sc_beta, sc_keep,
                )
                if val < 0.0:
                    return -1
                newkey = tau0[j] * val if factored else val
                cur = tau1[j]
                curkey = tau0[j] * cur if factored else cur
                if newkey < curkey:
                    tau1[j] = val
                    for a2 in range(dim):
                        rec_dir[j, a2] = sc_dir[a2]
                        rec_ord[j, a2] = sc_ord[a2]
                        rec_plain[j, a2] = sc_plain[a2]
                    state[j] = FRONT
                    if hsize >= hkeys.shape[0]:
                        nk = np.empty(2 * hkeys.shape[0], np.float64)
                        nn = np.empty(2 * hkeys.shape[0], np.int64)
                        for q in range(hsize):
                            nk[q] = hkeys[q]
                            nn[q] = hnodes[q]
                        hkeys = nk
                        hnodes = nn
                    hsize = heap_push(hkeys, hnodes, hsize, newkey, j)
    return na


# ---------------------------------------------------------------------------
# sensitivity operator rows from the recorded stencils
# ---------------------------------------------------------------------------

@njit(**_JIT)
def count_row_nnz(n, dim, rec_dir, rec_ord, src, out):
    for k in range(n):
        c = 1
        if k != src:
            for a in range(dim):
                if rec_dir[k, a] != DIR_NONE:
                    c += 1 if rec_ord[k, a] == 1 else 2
        out[k] = c


@njit(**_JIT)
def fill_rows(n, dim, strides, h, tau0, p0, tau1, rec_dir, rec_ord,
              rec_plain, src, indptr, indices, data, diag):
    """CSR rows of A = sum_axes diag(2 * D_axis tau1) * D_axis.

    Row k applies the exact derivative operators recorded for node k, so
    (A tau1)_k = 2 m_k holds at the solution.  The source row has the
    single entry 2 * tau1(src) * |grad tau0(src)|^2.
    """
    for k in range(n):
        pos = indptr[k]
        if k == src:
            s2 = 0.0
            for a in range(dim):
                s2 += p0[a, k] * p0[a, k]
            dv = 2.0 * tau1[k] * s2
            indices[pos] = k
            data[pos] = dv
            diag[k] = dv
            continue
        dsum = 0.0
        p = pos + 1
        for a in range(dim):
            d = rec_dir[k, a]
            if d == DIR_NONE:
                continue
            s = strides[a]
            step = -s if d == DIR_BACKWARD else s
            sgn = 1.0 if d == DIR_BACKWARD else -1.0
            nb1 = k + step
            o = rec_ord[k, a]
            if rec_plain[k, a] == 0:
                t0 = tau0[k]
                g = p0[a, k]
                if o == 1:
                    adiag = t0 / h + sgn * g
                    c1 = -t0 / h
                    gval = adiag * tau1[k] + c1 * tau1[nb1]
                    w = 2.0 * gval
                    dsum += w * adiag
                    indices[p] = nb1
                    data[p] = w * c1
                    p += 1
                else:
                    nb2 = nb1 + step
                    adiag = 1.5 * t0 / h + sgn * g
                    c1 = -2.0 * t0 / h
                    c2 = 0.5 * t0 / h
                    gval = adiag * tau1[k] + c1 * tau1[nb1] + c2 * tau1[nb2]
                    w = 2.0 * gval
                    dsum += w * adiag
                    indices[p] = nb1
                    data[p] = w * c1
                    p += 1
                    indices[p] = nb2
                    data[p] = w * c2
                    p += 1
            else:
                t0k = tau0[k]
                if o == 1:
                    adiag = t0k / h
                    c1 = -tau0[nb1] / h
                    gval = adiag * tau1[k] + c1 * tau1[nb1]
                    w = 2.0 * gval
                    dsum += w * adiag
                    indices[p] = nb1
                    data[p] = w * c1
                    p += 1
                else:
                    nb2 = nb1 + step
                    adiag = 1.5 * t0k / h
                    c1 = -2.0 * tau0[nb1] / h
                    c2 = 0.5 * tau0[nb2] / h
                    gval = adiag * tau1[k] + c1 * tau1[nb1] + c2 * tau1[nb2]
                    w = 2.0 * gval
                    dsum += w * adiag
                    indices[p] = nb1
                    data[p] = w * c1
                    p += 1
                    indices[p] = nb2
                    data[p] = w * c2
                    p += 1
        indices[pos] = k
        data[pos] = dsum
        diag[k] = dsum


@njit(**_JIT)
def check_triangular(order_perm, indptr, indices):
    """Index of the first row whose off-diagonals reference a node not
    accepted earlier, or -1 when the permuted matrix is lower triangular."""
    n = order_perm.shape[0]
    pos = np.empty(n, np.int64)
    for i in range(n):
        pos[order_perm[i]] = i
    for k in range(n):
        for p in range(indptr[k], indptr[k + 1]):
            j = indices[p]
            if j != k and pos[j] >= pos[k]:
                return k
    return -1


@njit(**_JIT)
def forward_subst(order_perm, indptr, indices, data, diag, v, out):
    """Solve A out = v by forward substitution in acceptance order."""
    for i in range(order_perm.shape[0]):
        k = order_perm[i]
        acc = v[k]
        for p in range(indptr[k], indptr[k + 1]):
            j = indices[p]
            if j != k:
                acc -= data[p] * out[j]
        out[k] = acc / diag[k]


@njit(**_JIT)
def transpose_subst(order_perm, indptr, indices, data, diag, v, out, work):
    """Solve A^T out = v by back substitution in reverse acceptance order."""
    n = order_perm.shape[0]
    for k in range(n):
        work[k] = v[k]
    for i in range(n - 1, -1, -1):
        k = order_perm[i]
        w = work[k] / diag[k]
        out[k] = w
        for p in range(indptr[k], indptr[k + 1]):
            j = indices[p]
            if j != k:
                work[j] -= data[p] * w
    return out


@njit(**_JIT)
def csr_matvec(indptr, indices, data, v, out):
    for k in range(indptr.shape[0] - 1):
        acc = 0.0
        for p in range(indptr[k], indptr[k + 1]):
            acc += data[p] * v[indices[p]]
        out[k] = acc


# ---------------------------------------------------------------------------
# full-grid eikonal residual with central differences (the work unit)
# ---------------------------------------------------------------------------

@njit(**_JIT)
def eikonal_residual_central(dim, counts, strides, h, tau, m, out):
    """|grad tau|^2 - m per node; central differences in the interior,
    one-sided on the boundary."""
    n = tau.shape[0]
    inv2h = 0.5 / h
    for k in range(n):
        rem = k
        acc = 0.0
        for a in range(dim):
            s = strides[a]
            ia = rem // s
            rem -= ia * s
            if ia == 0:
                dv = (tau[k + s] - tau[k]) / h
            elif ia == counts[a] - 1:
                dv = (tau[k] - tau[k - s]) / h
            else:
                dv = (tau[k + s] - tau[k - s]) * inv2h
            acc += dv * dv
        out[k] = acc - m[k]
