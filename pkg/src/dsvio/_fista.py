"""Compiled kernels: batched power iteration and batched FISTA.

The FISTA kernel minimises, independently for every problem ``b`` in a batch,

    0.5 * y'Q_b y - q_b'y + mu * ||y||_1    subject to  lo_b <= y <= hi_b

with step ``1 / L_b``. Work arrays keep the batch index innermost so the
inner loops vectorise; every lane performs the same IEEE operations it would
perform alone, so a problem's result does not depend on its batch neighbours.
"""
import numba
import numpy as np

_MIN_LIPSCHITZ = 1e-16


@numba.njit(cache=True)
def power_iteration(G, max_iter, rtol):
    """Largest eigenvalue of each symmetric PSD ``G[b]`` (shape ``(B, p, p)``)."""
    B, p, _ = G.shape
    out = np.empty(B)
    v = np.empty(p)
    w = np.empty(p)
    for b in range(B):
        # start vector with no special alignment to coordinate axes
        nv = 0.0
        for i in range(p):
            v[i] = 1.0 / np.sqrt(i + 2.0)
            nv += v[i] * v[i]
        nv = np.sqrt(nv)
        for i in range(p):
            v[i] /= nv
        lam = 0.0
        for _ in range(max_iter):
            nw = 0.0
            for i in range(p):
                s = 0.0
                for j in range(p):
                    s += G[b, i, j] * v[j]
                w[i] = s
                nw += s * s
            nw = np.sqrt(nw)
            if nw == 0.0:
                lam = 0.0
                break
            for i in range(p):
                v[i] = w[i] / nw
            new = 0.0
            for i in range(p):
                s = 0.0
                for j in range(p):
                    s += G[b, i, j] * v[j]
                new += v[i] * s
            done = abs(new - lam) <= rtol * abs(new)
            lam = new
            if done:
                break
        out[b] = max(lam, _MIN_LIPSCHITZ)
    return out


@numba.njit(cache=True, inline="always")
def _prox(w, thr, lo, hi):
    a = abs(w) - thr
    if a < 0.0:
        a = 0.0
    v = np.copysign(a, w)
    if v < lo:
        v = lo
    elif v > hi:
        v = hi
    return v


@numba.njit(cache=True)
def _gradient(Q, q, F, d, factored, Y, G, R):
    """``G = Q Y - q`` or, in factored form, ``G = F'(F Y - d)`` (``R`` holds ``F Y - d``)."""
    m, B = Y.shape
    if factored:
        r = F.shape[0]
        for k in range(r):
            for b in range(B):
                R[k, b] = -d[k, b]
            for j in range(m):
                for b in range(B):
                    R[k, b] += F[k, j, b] * Y[j, b]
        for i in range(m):
            for b in range(B):
                G[i, b] = 0.0
            for k in range(r):
                for b in range(B):
                    G[i, b] += F[k, i, b] * R[k, b]
        return
    for i in range(m):
        for b in range(B):
            G[i, b] = -q[i, b]
        for j in range(m):
            for b in range(B):
                G[i, b] += Q[i, j, b] * Y[j, b]


@numba.njit(cache=True)
def _check(Q, q, F, d, factored, lo, hi, mu, Y, G, R, res, obj):
    """Unit-step natural residual (inf-norm) and objective at ``Y``."""
    m, B = Y.shape
    _gradient(Q, q, F, d, factored, Y, G, R)
    for b in range(B):
        res[b] = 0.0
        obj[b] = 0.0
    for i in range(m):
        for b in range(B):
            y = Y[i, b]
            e = abs(y - _prox(y - G[i, b], mu, lo[i, b], hi[i, b]))
            if e > res[b]:
                res[b] = e
            obj[b] += mu * abs(y)
            if not factored:
                # 0.5 y'Qy - q'y = 0.5 y'(Qy - q) - 0.5 q'y
                obj[b] += 0.5 * y * (G[i, b] - q[i, b])
    if factored:
        for k in range(R.shape[0]):
            for b in range(B):
                obj[b] += 0.5 * R[k, b] * R[k, b]


@numba.njit(cache=True)
def _pattern(y, lo, hi, mu):
    """0 free, 1 at a bound, 2 held at zero by the L1 term."""
    if y <= lo or y >= hi:
        return 1
    if mu > 0.0 and y == 0.0:
        return 2
    return 0


@numba.njit(cache=True)
def _polish(Q, q, F, d, factored, lo, hi, mu, Y, b, yc, fi, M, rhs, u, g):
    """One active-set step on the face picked out by the activity pattern of ``Y[:, b]``.

    Fixed coordinates keep their value. On the free ones the face objective is
    ``0.5 z'Mz - rhs'z``; if its gradient has a component in the null space of
    ``M`` the objective decreases linearly along it, otherwise the Newton step
    is taken. Either way the step stops at the first zero crossing or bound
    (ratio test). The result goes to ``yc``; returns ``(ok, residual, objective)``.
    """
    m = Y.shape[0]
    nf = 0
    for i in range(m):
        yc[i] = Y[i, b]
        if _pattern(Y[i, b], lo[i, b], hi[i, b], mu) == 0:
            fi[nf] = i
            nf += 1
    if nf == 0:
        return False, np.inf, np.inf
    if factored:
        r = F.shape[0]
        # u = d - F_fixed y_fixed
        for k in range(r):
            s = d[k, b]
            for i in range(m):
                if _pattern(Y[i, b], lo[i, b], hi[i, b], mu) != 0:
                    s -= F[k, i, b] * yc[i]
            u[k] = s
        for a in range(nf):
            ia = fi[a]
            s = 0.0
            for k in range(r):
                s += F[k, ia, b] * u[k]
            rhs[a] = s - mu * np.sign(yc[ia])
            for c in range(a + 1):
                ic = fi[c]
                s = 0.0
                for k in range(r):
                    s += F[k, ia, b] * F[k, ic, b]
                M[a, c] = s
                M[c, a] = s
    else:
        for a in range(nf):
            ia = fi[a]
            s = q[ia, b]
            for j in range(m):
                if _pattern(Y[j, b], lo[j, b], hi[j, b], mu) != 0:
                    s -= Q[ia, j, b] * yc[j]
            rhs[a] = s - mu * np.sign(yc[ia])
            for c in range(a + 1):
                M[a, c] = Q[ia, fi[c], b]
                M[c, a] = M[a, c]
    Mf = M[:nf, :nf].copy()
    # face gradient at the current point
    gr = np.empty(nf)
    for a in range(nf):
        s = -rhs[a]
        for c in range(nf):
            s += Mf[a, c] * yc[fi[c]]
        gr[a] = s
    w, V = np.linalg.eigh(Mf)
    cut = 1e-10 * max(w[nf - 1], 0.0)
    proj = V.T @ gr
    dn = np.zeros(nf)
    dr = np.zeros(nf)
    gscale = 0.0
    for a in range(nf):
        gscale = max(gscale, abs(gr[a]))
    nnull = 0.0
    for k in range(nf):
        if w[k] <= cut:
            for a in range(nf):
                dn[a] -= V[a, k] * proj[k]
        else:
            for a in range(nf):
                dr[a] -= V[a, k] * proj[k] / w[k]
    for a in range(nf):
        nnull = max(nnull, abs(dn[a]))
    if nnull > 1e-12 * gscale and nnull > 0.0:
        dirn = dn
        amax = np.inf
    else:
        dirn = dr
        amax = 1.0
    alpha = amax
    hit = -1
    hitv = 0.0
    for a in range(nf):
        i = fi[a]
        z = yc[i]
        da = dirn[a]
        if da > 0.0:
            bnd = 0.0 if (mu > 0.0 and z < 0.0) else hi[i, b]
        elif da < 0.0:
            bnd = 0.0 if (mu > 0.0 and z > 0.0) else lo[i, b]
        else:
            continue
        ai = (bnd - z) / da
        if ai < alpha:
            alpha = ai
            hit = a
            hitv = bnd
    if not alpha < np.inf or alpha <= 0.0:
        return False, np.inf, np.inf
    for a in range(nf):
        i = fi[a]
        yc[i] = min(max(yc[i] + alpha * dirn[a], lo[i, b]), hi[i, b])
    if hit >= 0:
        yc[fi[hit]] = hitv
    return _lane_check(Q, q, F, d, factored, lo, hi, mu, yc, b, u, g)


@numba.njit(cache=True)
def _lane_check(Q, q, F, d, factored, lo, hi, mu, y, b, u, g):
    """Residual and objective of a single point ``y`` for problem ``b``."""
    m = y.shape[0]
    obj = 0.0
    if factored:
        r = F.shape[0]
        for k in range(r):
            s = -d[k, b]
            for j in range(m):
                s += F[k, j, b] * y[j]
            u[k] = s
            obj += 0.5 * s * s
        for i in range(m):
            s = 0.0
            for k in range(r):
                s += F[k, i, b] * u[k]
            g[i] = s
    else:
        for i in range(m):
            s = -q[i, b]
            for j in range(m):
                s += Q[i, j, b] * y[j]
            g[i] = s
            obj += 0.5 * y[i] * (s - q[i, b])
    res = 0.0
    for i in range(m):
        obj += mu * abs(y[i])
        e = abs(y[i] - _prox(y[i] - g[i], mu, lo[i, b], hi[i, b]))
        if e > res:
            res = e
    return True, res, obj


@numba.njit(cache=True)
def fista(Qin, qin, Fin, din, factored, loin, hiin, mu, L, y0, tol, max_iter, restart,
          check_every, trace, polish):
    """Batched FISTA on box-constrained (optionally L1-regularised) quadratics.

    The smooth part is ``0.5 y'Qy - q'y`` (``factored=False``; ``Qin`` (B, m, m),
    ``qin`` (B, m)) or ``0.5 ||F y - d||^2`` (``factored=True``; ``Fin``
    (B, r, m), ``din`` (B, r)); the unused pair may be empty. ``loin``,
    ``hiin``, ``y0`` are (B, m) and ``L`` is (B,). ``trace`` is (B, K); when
    K > 0 the best-so-far objective at each checkpoint is written into it.

    Returns ``(Y, iterations, residual, converged)``. A problem stops at the
    first checkpoint whose residual is <= tol; otherwise the checkpoint
    iterate with the lowest objective is returned.

    With ``polish``, a problem whose activity pattern (free, at a bound, or
    zero) is unchanged between two checkpoints gets one exact solve on that
    face. The candidate replaces the iterate (and restarts momentum) when its
    objective is lower or its residual already meets ``tol``.
    """
    B0, m = loin.shape
    r = Fin.shape[1] if factored else 0
    mq = 0 if factored else m
    K = trace.shape[1]
    Yout = np.empty((B0, m))
    its = np.zeros(B0, np.int64)
    resout = np.empty(B0)
    conv = np.zeros(B0, np.bool_)

    # working layout, batch innermost
    ids = np.arange(B0)
    Q = np.empty((mq, mq, B0))
    q = np.empty((mq, B0))
    F = np.empty((r, m, B0))
    d = np.empty((r, B0))
    lo = np.empty((m, B0))
    hi = np.empty((m, B0))
    Y = np.empty((m, B0))
    for b in range(B0):
        for i in range(m):
            lo[i, b] = loin[b, i]
            hi[i, b] = hiin[b, i]
            Y[i, b] = min(max(y0[b, i], loin[b, i]), hiin[b, i])
        for i in range(mq):
            q[i, b] = qin[b, i]
            for j in range(mq):
                Q[i, j, b] = Qin[b, i, j]
        for k in range(r):
            d[k, b] = din[b, k]
            for j in range(m):
                F[k, j, b] = Fin[b, k, j]
    invL = 1.0 / L
    thr = mu * invL
    Z = Y.copy()
    Ybest = Y.copy()
    fbest = np.full(B0, np.inf)
    rbest = np.full(B0, np.inf)
    T = np.ones(B0)
    G = np.empty((m, B0))
    R = np.empty((r, B0))
    YN = np.empty((m, B0))
    dot = np.empty(B0)
    res = np.empty(B0)
    obj = np.empty(B0)
    pat = np.full((m, B0), -1, np.int8)
    tried = np.zeros(B0, np.bool_)
    yc = np.empty(m)
    fi = np.empty(m, np.int64)
    M = np.empty((m, m))
    rhs = np.empty(m)
    u = np.empty(max(r, 1))
    g = np.empty(m)

    B = B0
    k = 0
    ncheck = 0
    while B > 0 and k < max_iter:
        _gradient(Q, q, F, d, factored, Z, G, R)
        for b in range(B):
            dot[b] = 0.0
        for i in range(m):
            for b in range(B):
                z = Z[i, b]
                v = _prox(z - G[i, b] * invL[b], thr[b], lo[i, b], hi[i, b])
                YN[i, b] = v
                dot[b] += (z - v) * (v - Y[i, b])
        for b in range(B):
            tk = T[b]
            # gradient-based adaptive restart
            if restart and dot[b] > 0.0:
                tk = 1.0
            tn = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * tk * tk))
            T[b] = tn
            dot[b] = (tk - 1.0) / tn
        for i in range(m):
            for b in range(B):
                v = YN[i, b]
                Z[i, b] = v + dot[b] * (v - Y[i, b])
                Y[i, b] = v
        k += 1

        if k % check_every != 0 and k != max_iter:
            continue
        _check(Q, q, F, d, factored, lo, hi, mu, Y, G, R, res, obj)
        nconv = 0
        for b in range(B):
            if polish and res[b] > tol:
                same = True
                for i in range(m):
                    pi = _pattern(Y[i, b], lo[i, b], hi[i, b], mu)
                    if pi != pat[i, b]:
                        same = False
                        pat[i, b] = pi
                if not same:
                    tried[b] = False
                elif not tried[b]:
                    tried[b] = True
                    ok, rc, oc = _polish(Q, q, F, d, factored, lo, hi, mu, Y, b, yc, fi, M, rhs, u, g)
                    if ok and (oc < obj[b] or rc <= tol):
                        for i in range(m):
                            Y[i, b] = yc[i]
                            Z[i, b] = yc[i]
                        T[b] = 1.0
                        res[b] = rc
                        obj[b] = oc
            if obj[b] < fbest[b]:
                fbest[b] = obj[b]
                rbest[b] = res[b]
                for i in range(m):
                    Ybest[i, b] = Y[i, b]
            if K > 0 and ncheck < K:
                trace[ids[b], ncheck] = fbest[b]
            if res[b] <= tol:
                nconv += 1
                o = ids[b]
                conv[o] = True
                its[o] = k
                resout[o] = res[b]
                for i in range(m):
                    Yout[o, i] = Y[i, b]
        ncheck += 1
        if nconv == 0:
            continue
        # compact the working set down to unconverged problems
        w = 0
        for b in range(B):
            if res[b] <= tol:
                continue
            if w != b:
                ids[w] = ids[b]
                invL[w] = invL[b]
                thr[w] = thr[b]
                T[w] = T[b]
                fbest[w] = fbest[b]
                rbest[w] = rbest[b]
                tried[w] = tried[b]
                for i in range(m):
                    lo[i, w] = lo[i, b]
                    hi[i, w] = hi[i, b]
                    Y[i, w] = Y[i, b]
                    Z[i, w] = Z[i, b]
                    Ybest[i, w] = Ybest[i, b]
                    pat[i, w] = pat[i, b]
                for i in range(mq):
                    q[i, w] = q[i, b]
                    for j in range(mq):
                        Q[i, j, w] = Q[i, j, b]
                for kk in range(r):
                    d[kk, w] = d[kk, b]
                    for j in range(m):
                        F[kk, j, w] = F[kk, j, b]
            w += 1
        B = w
        Q = Q[:, :, :B].copy()
        q = q[:, :B].copy()
        F = F[:, :, :B].copy()
        d = d[:, :B].copy()
        lo = lo[:, :B].copy()
        hi = hi[:, :B].copy()
        Y = Y[:, :B].copy()
        Z = Z[:, :B].copy()
        Ybest = Ybest[:, :B].copy()
        G = G[:, :B].copy()
        R = R[:, :B].copy()
        YN = YN[:, :B].copy()
        pat = pat[:, :B].copy()

    for b in range(B):
        o = ids[b]
        its[o] = k
        resout[o] = rbest[b]
        conv[o] = rbest[b] <= tol
        for i in range(m):
            Yout[o, i] = Ybest[i, b]
    return Yout, its, resout, conv
