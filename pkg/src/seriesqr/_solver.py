"""Interior-point kernels for weighted, linearly perturbed quantile regression.

The program solved at one quantile u is, in sum scale and with yt, Zt
already multiplied by the observation weights,

    min_beta  sum_i rho_u(yt_i - Zt_i'beta) + lin'beta.

Its bounded-variable LP dual is

    max_a  yt'a   s.t.   Zt'a = (1 - u)*Zt'1 + lin,   0 <= a <= 1,

where a_i sits at 1 for positive residuals, at 0 for negative ones, and
strictly inside (0, 1) only for interpolated observations. A Mehrotra
predictor-corrector method drives the complementarity gap below
tolerance, then a crossover step moves to an exact interpolation vertex
so the residual sign pattern (and hence the subgradient certificate) is
exact. Grid sweeps warm-start each quantile from the previous one and
fall back to a cold start on any failure. All kernels are
numba-compiled; the public wrappers live in qr.py.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

MAX_ITER = 200
GAP_TOL = 1e-10
STEP_SCALE = 0.9995
FRAC_CUT = 1e-7
INDEP_TOL = 1e-8
WARM_CLIP = 1e-2


_FASTMATH = {"reassoc", "contract", "nsz"}


@njit(cache=True, fastmath=_FASTMATH)
def _objective_sum(Zt, yt, u, lin, beta):
    n, m = Zt.shape
    acc = 0.0
    for i in range(n):
        r = yt[i]
        for j in range(m):
            r -= Zt[i, j] * beta[j]
        if r >= 0.0:
            acc += u * r
        else:
            acc += (u - 1.0) * r
    for j in range(m):
        acc += lin[j] * beta[j]
    return acc


@njit(cache=True)
def _chol_factor(M):
    """In-place lower Cholesky; returns False when not positive definite."""
    m = M.shape[0]
    for j in range(m):
        s = M[j, j]
        for k in range(j):
            s -= M[j, k] * M[j, k]
        if s <= 0.0:
            return False
        M[j, j] = np.sqrt(s)
        inv = 1.0 / M[j, j]
        for i in range(j + 1, m):
            t = M[i, j]
            for k in range(j):
                t -= M[i, k] * M[j, k]
            M[i, j] = t * inv
    return True


@njit(cache=True)
def _chol_solve(L, rhs, out):
    m = L.shape[0]
    for i in range(m):
        t = rhs[i]
        for k in range(i):
            t -= L[i, k] * out[k]
        out[i] = t / L[i, i]
    for i in range(m - 1, -1, -1):
        t = out[i]
        for k in range(i + 1, m):
            t -= L[k, i] * out[k]
        out[i] = t / L[i, i]


@njit(cache=True, fastmath=_FASTMATH)
def _ip_core(Zt, yt, u, lin, max_iter, gap_tol, x0, beta0, warm):
    """Mehrotra predictor-corrector on the dual box LP.

    Returns (beta, x, gap, iterations, status): status 0 on convergence,
    1 when the iteration limit is hit, and 2 when the dual is infeasible,
    which means the perturbed primal objective is unbounded below. With
    warm=True the iterate starts from (x0, beta0) clipped into the box.
    Works on a transposed copy of the design so every inner loop runs
    stride-1 over observations.
    """
    n, m = Zt.shape

    ZT = np.empty((m, n))
    for i in range(n):
        for j in range(m):
            ZT[j, i] = Zt[i, j]

    b = np.empty(m)
    bnorm = 1.0
    for j in range(m):
        acc = 0.0
        for i in range(n):
            acc += ZT[j, i]
        b[j] = (1.0 - u) * acc + lin[j]
        if abs(b[j]) > bnorm:
            bnorm = abs(b[j])
    ynorm = 1.0
    for i in range(n):
        if abs(yt[i]) > ynorm:
            ynorm = abs(yt[i])

    x = np.empty(n)
    s = np.empty(n)
    beta = np.empty(m)
    if warm:
        for i in range(n):
            xi = x0[i]
            if xi < WARM_CLIP:
                xi = WARM_CLIP
            elif xi > 1.0 - WARM_CLIP:
                xi = 1.0 - WARM_CLIP
            x[i] = xi
            s[i] = 1.0 - xi
        for j in range(m):
            beta[j] = beta0[j]
    else:
        for i in range(n):
            x[i] = 1.0 - u
            s[i] = u
        M0 = np.empty((m, m))
        for j in range(m):
            for k in range(j, m):
                acc = 0.0
                for i in range(n):
                    acc += ZT[j, i] * ZT[k, i]
                M0[j, k] = acc
        tr = 0.0
        for j in range(m):
            tr += M0[j, j]
        for j in range(m):
            M0[j, j] += 1e-12 * tr / m + 1e-300
        rhs0 = np.empty(m)
        for j in range(m):
            acc = 0.0
            for i in range(n):
                acc += ZT[j, i] * yt[i]
            rhs0[j] = acc
        if _chol_factor(M0):
            _chol_solve(M0, rhs0, beta)
        else:
            for j in range(m):
                beta[j] = 0.0

    Zb = np.empty(n)
    for i in range(n):
        Zb[i] = 0.0
    for j in range(m):
        bj = beta[j]
        for i in range(n):
            Zb[i] += bj * ZT[j, i]
    sum_abs = 0.0
    for i in range(n):
        sum_abs += abs(yt[i] - Zb[i])
    eps0 = 0.1 * sum_abs / n + 1e-8 * ynorm
    w = np.empty(n)
    q = np.empty(n)
    for i in range(n):
        r = yt[i] - Zb[i]
        if r >= 0.0:
            q[i] = r + eps0
            w[i] = eps0
        else:
            q[i] = eps0
            w[i] = -r + eps0

    rb = np.empty(m)
    rc = np.empty(n)
    d = np.empty(n)
    wx = np.empty(n)
    qs = np.empty(n)
    invx = np.empty(n)
    invs = np.empty(n)
    dzk = np.empty(n)
    tmp = np.empty(n)
    dx = np.empty(n)
    dw = np.empty(n)
    dq = np.empty(n)
    M = np.empty((m, m))
    rhs = np.empty(m)
    dbeta_a = np.empty(m)
    dbeta = np.empty(m)
    gap = 0.0
    status = 1
    it = 0
    stall = 0

    for it in range(1, max_iter + 1):
        for i in range(n):
            Zb[i] = 0.0
        for j in range(m):
            bj = beta[j]
            for i in range(n):
                Zb[i] += bj * ZT[j, i]
        pobj = 0.0
        gap = 0.0
        rcinf = 0.0
        for i in range(n):
            rci = yt[i] - Zb[i] - q[i] + w[i]
            rc[i] = rci
            pobj += yt[i] * x[i]
            gap += x[i] * w[i] + s[i] * q[i]
            if abs(rci) > rcinf:
                rcinf = abs(rci)
        rbinf = 0.0
        for j in range(m):
            acc = 0.0
            for i in range(n):
                acc += ZT[j, i] * x[i]
            rb[j] = b[j] - acc
            if abs(rb[j]) > rbinf:
                rbinf = abs(rb[j])
        if not np.isfinite(gap) or gap > 1e120:
            status = 2
            break
        if (
            gap <= gap_tol * (1.0 + abs(pobj))
            and rbinf <= 1e-8 * (1.0 + bnorm)
            and rcinf <= 1e-8 * (1.0 + ynorm)
        ):
            status = 0
            break
        # complementarity has converged but the equality constraint has
        # not: either mild ill-conditioning (accept; the crossover step
        # restores exactness) or an empty dual polytope (unbounded primal)
        if gap <= 1e4 * gap_tol * (1.0 + abs(pobj)):
            stall += 1
            if stall >= 25:
                if rbinf <= 1e-5 * (1.0 + bnorm) and rcinf <= 1e-5 * (1.0 + ynorm):
                    status = 0
                else:
                    status = 2
                break
        else:
            stall = 0

        for i in range(n):
            ix = 1.0 / x[i]
            is_ = 1.0 / s[i]
            wxi = w[i] * ix
            qsi = q[i] * is_
            invx[i] = ix
            invs[i] = is_
            wx[i] = wxi
            qs[i] = qsi
            d[i] = 1.0 / (wxi + qsi)

        for k in range(m):
            for i in range(n):
                dzk[i] = d[i] * ZT[k, i]
            for j in range(k + 1):
                acc = 0.0
                for i in range(n):
                    acc += ZT[j, i] * dzk[i]
                M[j, k] = acc
        trM = 0.0
        for j in range(m):
            trM += M[j, j]
        ridge = 1e-14 * trM / m + 1e-300
        ok = False
        for attempt in range(4):
            for j in range(m):
                M[j, j] += ridge
                for k in range(j + 1, m):
                    M[k, j] = M[j, k]
            ok = _chol_factor(M)
            if ok:
                break
            # factorization destroyed the lower triangle; rebuild
            for k in range(m):
                for i in range(n):
                    dzk[i] = d[i] * ZT[k, i]
                for j in range(k + 1):
                    acc = 0.0
                    for i in range(n):
                        acc += ZT[j, i] * dzk[i]
                    M[j, k] = acc
            ridge *= 1e5
        if not ok:
            status = 2
            break

        # affine (predictor) direction; step ratios track the minimum with
        # multiply comparisons so a division happens only on a new minimum
        for i in range(n):
            tmp[i] = d[i] * (rc[i] + q[i] - w[i])
        for j in range(m):
            acc = 0.0
            for i in range(n):
                acc += ZT[j, i] * tmp[i]
            rhs[j] = acc - rb[j]
        _chol_solve(M, rhs, dbeta_a)
        for i in range(n):
            Zb[i] = 0.0
        for j in range(m):
            dj = dbeta_a[j]
            for i in range(n):
                Zb[i] += dj * ZT[j, i]
        ap = 1.0
        ad = 1.0
        for i in range(n):
            dxi = tmp[i] - d[i] * Zb[i]
            dwi = -w[i] - wx[i] * dxi
            dqi = -q[i] + qs[i] * dxi
            dx[i] = dxi
            dw[i] = dwi
            dq[i] = dqi
            if dxi < 0.0:
                if x[i] < ap * (-dxi):
                    ap = x[i] / (-dxi)
            elif dxi > 0.0:
                if s[i] < ap * dxi:
                    ap = s[i] / dxi
            if dwi < 0.0:
                if w[i] < ad * (-dwi):
                    ad = w[i] / (-dwi)
            if dqi < 0.0:
                if q[i] < ad * (-dqi):
                    ad = q[i] / (-dqi)
        gap_aff = 0.0
        for i in range(n):
            gap_aff += (x[i] + ap * dx[i]) * (w[i] + ad * dw[i])
            gap_aff += (s[i] - ap * dx[i]) * (q[i] + ad * dq[i])
        mu = gap / (2.0 * n)
        sig = (gap_aff / gap) ** 3
        if sig > 1.0:
            sig = 1.0
        mu_t = sig * mu

        # corrector direction, reusing the factorization
        for i in range(n):
            cw = (mu_t - x[i] * w[i] - dx[i] * dw[i]) * invx[i]
            cq = (mu_t - s[i] * q[i] + dx[i] * dq[i]) * invs[i]
            tmp[i] = d[i] * (rc[i] - cq + cw)
            dw[i] = cw
            dq[i] = cq
        for j in range(m):
            acc = 0.0
            for i in range(n):
                acc += ZT[j, i] * tmp[i]
            rhs[j] = acc - rb[j]
        _chol_solve(M, rhs, dbeta)
        for i in range(n):
            Zb[i] = 0.0
        for j in range(m):
            dj = dbeta[j]
            for i in range(n):
                Zb[i] += dj * ZT[j, i]
        ap = 1.0
        ad = 1.0
        for i in range(n):
            dxi = tmp[i] - d[i] * Zb[i]
            dwi = dw[i] - wx[i] * dxi
            dqi = dq[i] + qs[i] * dxi
            dx[i] = dxi
            dw[i] = dwi
            dq[i] = dqi
            if dxi < 0.0:
                if x[i] < ap * (-dxi):
                    ap = x[i] / (-dxi)
            elif dxi > 0.0:
                if s[i] < ap * dxi:
                    ap = s[i] / dxi
            if dwi < 0.0:
                if w[i] < ad * (-dwi):
                    ad = w[i] / (-dwi)
            if dqi < 0.0:
                if q[i] < ad * (-dqi):
                    ad = q[i] / (-dqi)
        ap = min(STEP_SCALE * ap, 1.0)
        ad = min(STEP_SCALE * ad, 1.0)
        for i in range(n):
            x[i] += ap * dx[i]
            s[i] -= ap * dx[i]
            w[i] += ad * dw[i]
            q[i] += ad * dq[i]
            if x[i] < 1e-30:
                x[i] = 1e-30
            if s[i] < 1e-30:
                s[i] = 1e-30
            if w[i] < 1e-30:
                w[i] = 1e-30
            if q[i] < 1e-30:
                q[i] = 1e-30
        for j in range(m):
            beta[j] += ad * dbeta[j]

    return beta, x, gap, it, status


@njit(cache=True)
def _select_rows(Zt, order, m):
    """Greedily pick the first m linearly independent rows in given order."""
    n = Zt.shape[0]
    Q = np.zeros((m, m))
    rows = np.empty(m, np.int64)
    cnt = 0
    for pos in range(n):
        i = order[pos]
        v = np.empty(m)
        nrm0 = 0.0
        for k in range(m):
            v[k] = Zt[i, k]
            nrm0 += v[k] * v[k]
        nrm0 = np.sqrt(nrm0)
        if nrm0 <= 0.0:
            continue
        for j in range(cnt):
            pr = 0.0
            for k in range(m):
                pr += v[k] * Q[j, k]
            for k in range(m):
                v[k] -= pr * Q[j, k]
        nrm = 0.0
        for k in range(m):
            nrm += v[k] * v[k]
        nrm = np.sqrt(nrm)
        if nrm > INDEP_TOL * nrm0:
            for k in range(m):
                Q[cnt, k] = v[k] / nrm
            rows[cnt] = i
            cnt += 1
            if cnt == m:
                break
    return rows, cnt


@njit(cache=True)
def _vertex_beta(Zt, yt, rows, m):
    A = np.empty((m, m))
    rhs = np.empty(m)
    for j in range(m):
        i = rows[j]
        rhs[j] = yt[i]
        for k in range(m):
            A[j, k] = Zt[i, k]
    return np.linalg.solve(A, rhs)


@njit(cache=True)
def _solve_one(Zt, yt, u, lin, max_iter, gap_tol, x0, beta0, warm):
    """Interior point plus crossover.

    Returns (beta, obj_sum, gap, iters, status, x, beta_ip); x and
    beta_ip are the interior iterates for warm-starting a neighboring
    problem. A failed warm solve silently restarts cold.
    """
    n, m = Zt.shape
    beta_ip, a, gap, it, status = _ip_core(Zt, yt, u, lin, max_iter, gap_tol, x0, beta0, warm)
    if warm and status != 0:
        beta_ip, a, gap, it, status = _ip_core(
            Zt, yt, u, lin, max_iter, gap_tol, x0, beta0, False
        )
    if status == 2:
        return beta_ip, np.nan, gap, it, status, a, beta_ip
    f_best = _objective_sum(Zt, yt, u, lin, beta_ip)
    beta_best = beta_ip

    resid = yt - Zt @ beta_ip
    rscale = 1.0
    for i in range(n):
        if abs(yt[i]) > rscale:
            rscale = abs(yt[i])

    # candidate ordering 1: fractional dual coordinates first, then small
    # residuals; ordering 2: purely by residual magnitude
    key1 = np.empty(n)
    key2 = np.empty(n)
    for i in range(n):
        frac = a[i] if a[i] < 1.0 - a[i] else 1.0 - a[i]
        ar = abs(resid[i])
        key2[i] = ar
        if frac > FRAC_CUT:
            key1[i] = -frac
        else:
            key1[i] = 10.0 + ar / rscale
    improved = False
    for order in (np.argsort(key1), np.argsort(key2)):
        if improved:
            break
        rows, cnt = _select_rows(Zt, order, m)
        if cnt < m:
            continue
        beta_v = _vertex_beta(Zt, yt, rows, m)
        ok = True
        for j in range(m):
            if not np.isfinite(beta_v[j]):
                ok = False
        if not ok:
            continue
        f_v = _objective_sum(Zt, yt, u, lin, beta_v)
        if f_v <= f_best + 1e-10 * (1.0 + abs(f_best)):
            f_best = f_v
            beta_best = beta_v
            improved = True
    return beta_best, f_best, gap, it, status, a, beta_ip


@njit(cache=True)
def _solve_path(Zt, yt, us, lins, max_iter, gap_tol):
    """Sequential fits over a quantile grid on shared scaled data."""
    G = us.size
    n, m = Zt.shape
    betas = np.empty((G, m))
    objs = np.empty(G)
    gaps = np.empty(G)
    iters = np.zeros(G, np.int64)
    status = np.zeros(G, np.int64)
    xprev = np.zeros(n)
    bprev = np.zeros(m)
    warm = False
    for g in range(G):
        beta, obj, gap, it, st, xprev, bprev = _solve_one(
            Zt, yt, us[g], lins[g], max_iter, gap_tol, xprev, bprev, warm
        )
        warm = st == 0
        betas[g] = beta
        objs[g] = obj
        gaps[g] = gap
        iters[g] = it
        status[g] = st
    return betas, objs, gaps, iters, status


@njit(cache=True, parallel=True)
def _weighted_batch(Z, y, weight_mat, us, max_iter, gap_tol):
    """One full-grid refit per weight vector; draws are independent tasks."""
    B, n = weight_mat.shape
    G = us.size
    m = Z.shape[1]
    out = np.empty((B, G, m))
    status = np.zeros((B, G), np.int64)
    lin = np.zeros(m)
    for bb in prange(B):
        Zt = np.empty((n, m))
        yt = np.empty(n)
        for i in range(n):
            h = weight_mat[bb, i]
            yt[i] = y[i] * h
            for j in range(m):
                Zt[i, j] = Z[i, j] * h
        xprev = np.zeros(n)
        bprev = np.zeros(m)
        warm = False
        for g in range(G):
            beta, obj, gap, it, st, xprev, bprev = _solve_one(
                Zt, yt, us[g], lin, max_iter, gap_tol, xprev, bprev, warm
            )
            warm = st == 0
            for j in range(m):
                out[bb, g, j] = beta[j]
            status[bb, g] = st
    return out, status


@njit(cache=True, parallel=True)
def _perturbed_batch(Z, y, us, lins, max_iter, gap_tol):
    """One fit per (draw, grid point) with draw-specific linear terms."""
    B = lins.shape[0]
    G = us.size
    n, m = Z.shape
    out = np.empty((B, G, m))
    status = np.zeros((B, G), np.int64)
    for bb in prange(B):
        xprev = np.zeros(n)
        bprev = np.zeros(m)
        warm = False
        for g in range(G):
            lin = np.empty(m)
            for j in range(m):
                lin[j] = lins[bb, g, j]
            beta, obj, gap, it, st, xprev, bprev = _solve_one(
                Z, y, us[g], lin, max_iter, gap_tol, xprev, bprev, warm
            )
            warm = st == 0
            for j in range(m):
                out[bb, g, j] = beta[j]
            status[bb, g] = st
    return out, status
