"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``.

Same signatures and semantics; used when the extension is unavailable
or when ``REQUANT_BACKEND=python``.
"""
import itertools

import numpy as np

FACTOR = 1.12837916709551257388  # 2/sqrt(pi)


def _w_quadrant(x, y):
    # Poppe & Wijers (ACM Alg. 680), vectorized, x >= 0 and y >= 0
    xs = x / 6.3
    ys = y / 4.4
    qrho = xs * xs + ys * ys
    xquad = x * x - y * y
    yquad = 2.0 * x * y
    u = np.empty_like(x)
    v = np.empty_like(x)

    a = qrho < 0.085264
    if a.any():
        xa, ya, xqa, yqa = x[a], y[a], xquad[a], yquad[a]
        q = (1.0 - 0.85 * ys[a]) * np.sqrt(qrho[a])
        n = np.floor(6.0 + 72.0 * q + 0.5).astype(np.int64)
        jj = 2 * n + 1
        xsum = 1.0 / jj
        ysum = np.zeros_like(xsum)
        for i in range(int(n.max()), 0, -1):
            act = i <= n
            jj = np.where(act, jj - 2, jj)
            xaux = (xsum * xqa - ysum * yqa) / i
            ysn = (xsum * yqa + ysum * xqa) / i
            xsum = np.where(act, xaux + 1.0 / jj, xsum)
            ysum = np.where(act, ysn, ysum)
        u1 = -FACTOR * (xsum * ya + ysum * xa) + 1.0
        v1 = FACTOR * (xsum * xa - ysum * ya)
        daux = np.exp(-xqa)
        u2 = daux * np.cos(yqa)
        v2 = -daux * np.sin(yqa)
        u[a] = u1 * u2 - v1 * v2
        v[a] = u1 * v2 + v1 * u2

    b = ~a
    if b.any():
        xb, yb, qb, ysb = x[b], y[b], qrho[b], ys[b]
        big = qb > 1.0
        root = np.sqrt(np.where(big, 0.0, 1.0 - qb))
        qq = np.where(big, np.sqrt(qb), (1.0 - ysb) * root)
        h = np.where(big, 0.0, 1.88 * qq)
        h2 = 2.0 * h
        kapn = np.where(big, 0, np.floor(7.0 + 34.0 * qq + 0.5)).astype(np.int64)
        nu = np.where(big, np.floor(3.0 + 1442.0 / (26.0 * qq + 77.0)),
                      np.floor(16.0 + 26.0 * qq + 0.5)).astype(np.int64)
        hpos = h > 0.0
        qlam = np.where(hpos, h2 ** np.where(hpos, kapn, 0), 0.0)
        safe_h2 = np.where(hpos, h2, 1.0)
        rx = np.zeros_like(xb)
        ry = np.zeros_like(xb)
        sx = np.zeros_like(xb)
        sy = np.zeros_like(xb)
        for n_ in range(int(nu.max()), -1, -1):
            act = n_ <= nu
            np1 = n_ + 1
            tx = yb + h + np1 * rx
            ty = xb - np1 * ry
            c = 0.5 / (tx * tx + ty * ty)
            rx = np.where(act, c * tx, rx)
            ry = np.where(act, c * ty, ry)
            tk = act & hpos & (n_ <= kapn)
            tx2 = qlam + sx
            sxn = rx * tx2 - ry * sy
            syn = ry * tx2 + rx * sy
            sx = np.where(tk, sxn, sx)
            sy = np.where(tk, syn, sy)
            qlam = np.where(tk, qlam / safe_h2, qlam)
        ub = np.where(hpos, FACTOR * sx, FACTOR * rx)
        vb = np.where(hpos, FACTOR * sy, FACTOR * ry)
        ub = np.where(yb == 0.0, np.exp(-xb * xb), ub)
        u[b] = ub
        v[b] = vb
    return u, v


def _w_upper(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    x, y = np.broadcast_arrays(x, y)
    u, v = _w_quadrant(np.abs(x).ravel(), y.ravel())
    v = np.where(x.ravel() < 0.0, -v, v)
    return (u + 1j * v).reshape(x.shape)


def wofz(z):
    """Faddeeva function w(z) = exp(-z^2) erfc(-iz), elementwise."""
    z = np.asarray(z, dtype=np.complex128)
    flat = z.ravel()
    out = np.empty(flat.shape, dtype=np.complex128)
    up = flat.imag >= 0.0
    if up.any():
        out[up] = _w_upper(flat.real[up], flat.imag[up])
    lo = ~up
    if lo.any():
        zl = flat[lo]
        with np.errstate(over="ignore", invalid="ignore"):
            out[lo] = 2.0 * np.exp(-zl * zl) - _w_upper(-zl.real, -zl.imag)
    return out.reshape(z.shape)


def _g1(a, y):
    # exp(-y^2) erf(a - iy), a >= 0 (inf allowed); a scalar, y array
    base = np.exp(-y * y) + 0j
    if not np.isfinite(a):
        return base
    e = np.exp(-a * a)
    w = _w_upper(y, np.full_like(y, a))
    return base - (e * np.cos(2.0 * a * y) + 1j * e * np.sin(2.0 * a * y)) * w


def _g2(c, y):
    # exp(-y^2) erf(c + iy); c, y arrays of one shape
    sgn = np.where(c < 0.0, -1.0, 1.0)
    cc = c * sgn
    yy = y * sgn
    out = np.exp(-yy * yy) + 0j
    fin = np.isfinite(cc)
    if fin.any():
        cf, yf = cc[fin], yy[fin]
        e = np.exp(-cf * cf)
        w = _w_upper(-yf, cf)
        out[fin] = out[fin] - (e * np.cos(2.0 * cf * yf) - 1j * e * np.sin(2.0 * cf * yf)) * w
    return sgn * out


def _combos(M, N):
    # digits over 2M choices per near-set element, last k varying slowest
    digits = np.array(list(itertools.product(range(2 * M), repeat=N)))[:, ::-1]
    return digits


def integrand_sums(xi, ahat, phi, wthr, wlev, cscale, alpha, v):
    """Sum over (j, s) of prod_k B_k times the scaled erf factor.

    See ``_kernels.integrand_sums`` for the parameter description.
    """
    xi = np.asarray(xi, dtype=np.float64)
    ahat = np.asarray(ahat, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    wthr = np.asarray(wthr, dtype=np.float64)
    wlev = np.asarray(wlev, dtype=np.float64)
    M, N = wlev.size, phi.size
    digits = _combos(M, N)
    jidx = digits // 2
    sgn = 1 - 2 * (digits % 2)
    d = np.sum(sgn * wlev[jidx] * phi[None, :], axis=1)

    out = np.zeros((xi.size, wthr.size), dtype=np.complex128)
    chunk = max(1, 4096 // digits.shape[0])
    for lo in range(0, xi.size, chunk):
        x = xi[lo:lo + chunk]
        prod = np.ones((x.size, digits.shape[0]), dtype=np.complex128)
        for k in range(N):
            yk = phi[k] * x
            Bk = np.empty((x.size, 2 * M), dtype=np.complex128)
            for j in range(M):
                Bp = _g1(ahat[j], yk) - _g1(ahat[j + 1], yk)
                Bk[:, 2 * j] = Bp
                Bk[:, 2 * j + 1] = np.conj(Bp)
            prod *= Bk[:, digits[:, k]]
        ax = alpha * x
        for t, thr in enumerate(wthr):
            if not np.isfinite(cscale):
                C = np.ones(digits.shape[0]) if not np.isfinite(thr) else np.sign(thr + d)
                C = np.broadcast_to(C, prod.shape)
            elif not np.isfinite(thr):
                C = np.broadcast_to(np.exp(-ax * ax)[:, None], prod.shape)
            else:
                cc = np.broadcast_to((thr + d * cscale)[None, :], prod.shape)
                C = _g2(np.ascontiguousarray(cc), np.ascontiguousarray(
                    np.broadcast_to(ax[:, None], prod.shape)))
            out[lo:lo + chunk, t] = np.sum(prod * C, axis=1)
        out[lo:lo + chunk] *= np.exp(-v * x * x)[:, None]
    return out


def quantize_codes(X, phix, phiw, thr, lev, af):
    """Signed level indices of x(lambda) and w(lambda) for a block of trials."""
    X = np.asarray(X, dtype=np.float64)
    sx = np.einsum("ij,j->i", X, phix)
    j = np.searchsorted(thr, np.abs(X), side="right")
    q = np.where(X >= 0.0, lev[j], -lev[j])
    sw = af * np.einsum("ij,j->i", q, phiw)
    ix = np.searchsorted(thr, np.abs(sx), side="right") + 1
    iw = np.searchsorted(thr, np.abs(sw), side="right") + 1
    ix = np.where(sx >= 0.0, ix, -ix).astype(np.int8)
    iw = np.where(sw >= 0.0, iw, -iw).astype(np.int8)
    return ix, iw


def gather_dot(u, top, phase, coefs):
    """out[m] = sum_j coefs[phase[m], j] * u[top[m] - j]."""
    u = np.asarray(u, dtype=np.float64)
    top = np.asarray(top, dtype=np.int64)
    phase = np.asarray(phase, dtype=np.int64)
    ntap = coefs.shape[1]
    out = np.empty(top.size, dtype=np.float64)
    offs = np.arange(ntap)
    # taps accumulated in ascending order, matching the compiled loop bit for bit
    step = 1 << 16
    for lo in range(0, top.size, step):
        t = top[lo:lo + step]
        c = coefs[phase[lo:lo + step]]
        acc = np.zeros(t.size)
        for j in offs:
            acc += c[:, j] * u[t - j]
        out[lo:lo + step] = acc
    return out
