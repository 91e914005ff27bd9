# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels.

Every function here has a numpy twin in ``_fallback`` with the same
signature and semantics.  Loops run in a fixed order so results are
reproducible run to run.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt, cos, sin, fabs, floor, INFINITY, isfinite

cnp.import_array()

cdef double FACTOR = 1.12837916709551257388  # 2/sqrt(pi)


cdef void _w_quadrant(double x, double y, double* u, double* v) noexcept nogil:
    # Poppe & Wijers (ACM Alg. 680) for x >= 0, y >= 0
    cdef double xs = x / 6.3
    cdef double ys = y / 4.4
    cdef double qrho = xs * xs + ys * ys
    cdef double xquad = x * x - y * y
    cdef double yquad = 2.0 * x * y
    cdef double xsum, ysum, xaux, u1, v1, u2, v2, daux
    cdef double h, h2 = 0.0, qlam = 0.0, rx, ry, sx, sy, tx, ty, c
    cdef int n, i, j, kapn, nu, np1
    if qrho < 0.085264:
        qrho = (1.0 - 0.85 * ys) * sqrt(qrho)
        n = <int>(6.0 + 72.0 * qrho + 0.5)
        j = 2 * n + 1
        xsum = 1.0 / j
        ysum = 0.0
        i = n
        while i >= 1:
            j -= 2
            xaux = (xsum * xquad - ysum * yquad) / i
            ysum = (xsum * yquad + ysum * xquad) / i
            xsum = xaux + 1.0 / j
            i -= 1
        u1 = -FACTOR * (xsum * y + ysum * x) + 1.0
        v1 = FACTOR * (xsum * x - ysum * y)
        daux = exp(-xquad)
        u2 = daux * cos(yquad)
        v2 = -daux * sin(yquad)
        u[0] = u1 * u2 - v1 * v2
        v[0] = u1 * v2 + v1 * u2
        return
    if qrho > 1.0:
        h = 0.0
        kapn = 0
        qrho = sqrt(qrho)
        nu = <int>(3.0 + 1442.0 / (26.0 * qrho + 77.0))
    else:
        qrho = (1.0 - ys) * sqrt(1.0 - qrho)
        h = 1.88 * qrho
        h2 = 2.0 * h
        kapn = <int>(7.0 + 34.0 * qrho + 0.5)
        nu = <int>(16.0 + 26.0 * qrho + 0.5)
    if h > 0.0:
        qlam = h2 ** kapn
    rx = 0.0
    ry = 0.0
    sx = 0.0
    sy = 0.0
    n = nu
    while n >= 0:
        np1 = n + 1
        tx = y + h + np1 * rx
        ty = x - np1 * ry
        c = 0.5 / (tx * tx + ty * ty)
        rx = c * tx
        ry = c * ty
        if h > 0.0 and n <= kapn:
            tx = qlam + sx
            sx = rx * tx - ry * sy
            sy = ry * tx + rx * sy
            qlam = qlam / h2
        n -= 1
    if h == 0.0:
        u[0] = FACTOR * rx
        v[0] = FACTOR * ry
    else:
        u[0] = FACTOR * sx
        v[0] = FACTOR * sy
    if y == 0.0:
        u[0] = exp(-x * x)


cdef inline double complex _w_upper(double x, double y) noexcept nogil:
    # Faddeeva w(x + iy) for y >= 0
    cdef double u, v
    _w_quadrant(fabs(x), y, &u, &v)
    if x < 0.0:
        v = -v
    return u + 1j * v


cdef double complex _wofz(double x, double y) noexcept nogil:
    cdef double complex wm
    cdef double re2, im2, e
    if y >= 0.0:
        return _w_upper(x, y)
    # w(z) = 2 exp(-z^2) - w(-z)
    wm = _w_upper(-x, -y)
    re2 = y * y - x * x
    im2 = -2.0 * x * y
    e = 2.0 * exp(re2)
    return e * cos(im2) + 1j * e * sin(im2) - wm


cdef inline double complex _g1(double a, double y) noexcept nogil:
    # exp(-y^2) erf(a - iy), a >= 0, a = inf allowed
    cdef double complex w
    cdef double e
    if not isfinite(a):
        return exp(-y * y)
    w = _w_upper(y, a)
    e = exp(-a * a)
    return exp(-y * y) - (e * cos(2.0 * a * y) + 1j * e * sin(2.0 * a * y)) * w


cdef inline double complex _g2(double c, double y) noexcept nogil:
    # exp(-y^2) erf(c + iy), any real c (infinite allowed)
    cdef double sgn = 1.0
    cdef double complex w
    cdef double e
    if c < 0.0:
        sgn = -1.0
        c = -c
        y = -y
    if not isfinite(c):
        return sgn * exp(-y * y)
    w = _w_upper(-y, c)
    e = exp(-c * c)
    return sgn * (exp(-y * y) - (e * cos(2.0 * c * y) - 1j * e * sin(2.0 * c * y)) * w)


def wofz(z):
    """Faddeeva function w(z) = exp(-z^2) erfc(-iz), elementwise."""
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] zz = np.ascontiguousarray(
        np.ravel(np.asarray(z, dtype=np.complex128)))
    cdef Py_ssize_t n = zz.shape[0], i
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] out = np.empty(n, dtype=np.complex128)
    with nogil:
        for i in range(n):
            out[i] = _wofz(zz[i].real, zz[i].imag)
    return out.reshape(np.shape(z))


def integrand_sums(double[::1] xi, double[::1] ahat, double[::1] phi,
                   double[::1] wthr, double[::1] wlev, double cscale,
                   double alpha, double v):
    """Sum over (j, s) of prod_k B_k times the scaled erf factor.

    Parameters
    ----------
    xi : nodes.
    ahat : normalized thresholds a_1/(sigma sqrt2)..a_M/(sigma sqrt2), inf
        (length M + 1).
    phi : interpolation coefficients over the near set (length N).
    wthr : erf offsets a'_j = a_j / (sqrt(2) Q_I) (inf allowed); in the
        alpha = 0 limit (cscale = inf) the raw thresholds a_j instead.
    wlev : scaled output levels A_f * y_j (length M).
    cscale : 1 / (sqrt(2) Q_I), so the erf argument is wthr + d * cscale;
        inf selects the alpha = 0 sign limit sign(wthr + d).
    alpha : Q_I / sigma.
    v : residual damping exponent.

    Returns
    -------
    ndarray, complex, shape (len(xi), len(wthr))
    """
    cdef Py_ssize_t nx = xi.shape[0], nk = wthr.shape[0]
    cdef int M = wlev.shape[0], N = phi.shape[0]
    cdef int twoM = 2 * M
    cdef long ncomb = 1
    cdef int k
    for k in range(N):
        ncomb *= twoM
    out_arr = np.zeros((nx, nk), dtype=np.complex128)
    cdef double complex[:, ::1] out = out_arr
    cdef double complex[:, ::1] B = np.empty((N, twoM), dtype=np.complex128)
    cdef int[::1] digit = np.empty(N, dtype=np.intc)
    cdef Py_ssize_t i, t
    cdef long c
    cdef int j, jj, s
    cdef double x, yk, d, arg, damp, ax
    cdef double complex prod, C
    cdef bint limit = not isfinite(cscale)
    with nogil:
        for i in range(nx):
            x = xi[i]
            for k in range(N):
                yk = phi[k] * x
                for j in range(M):
                    # digit 2j -> s = +1, digit 2j + 1 -> s = -1 (conjugate)
                    B[k, 2 * j] = _g1(ahat[j], yk) - _g1(ahat[j + 1], yk)
                    B[k, 2 * j + 1] = B[k, 2 * j].conjugate()
            ax = alpha * x
            for c in range(ncomb):
                jj = c
                prod = 1.0
                d = 0.0
                for k in range(N):
                    digit[k] = jj % twoM
                    jj = jj // twoM
                    prod = prod * B[k, digit[k]]
                    s = 1 - 2 * (digit[k] % 2)
                    d = d + s * wlev[digit[k] // 2] * phi[k]
                for t in range(nk):
                    if limit:
                        if not isfinite(wthr[t]):
                            C = 1.0
                        else:
                            arg = wthr[t] + d
                            C = 1.0 if arg > 0.0 else (-1.0 if arg < 0.0 else 0.0)
                    elif not isfinite(wthr[t]):
                        C = exp(-ax * ax)
                    else:
                        C = _g2(wthr[t] + d * cscale, ax)
                    out[i, t] = out[i, t] + prod * C
            damp = exp(-v * x * x)
            for t in range(nk):
                out[i, t] = out[i, t] * damp
    return out_arr


def quantize_codes(double[:, ::1] X, double[::1] phix, double[::1] phiw,
                   double[::1] thr, double[::1] lev, double af):
    """Signed level indices of x(lambda) and w(lambda) for a block of trials.

    X holds one trial per row over the reconstruction window; ``thr`` are
    the finite thresholds a_2..a_M and ``lev`` the levels y_1..y_M.
    """
    cdef Py_ssize_t nt = X.shape[0], nw = X.shape[1], i, k
    cdef int M = lev.shape[0], nthr = thr.shape[0], j
    ix_arr = np.empty(nt, dtype=np.int8)
    iw_arr = np.empty(nt, dtype=np.int8)
    cdef signed char[::1] ix = ix_arr
    cdef signed char[::1] iw = iw_arr
    cdef double sx, sw, a, q
    with nogil:
        for i in range(nt):
            sx = 0.0
            sw = 0.0
            for k in range(nw):
                a = X[i, k]
                sx = sx + a * phix[k]
                j = 0
                while j < nthr and fabs(a) >= thr[j]:
                    j += 1
                q = lev[j] if a >= 0.0 else -lev[j]
                sw = sw + q * phiw[k]
            sw = af * sw
            j = 0
            while j < nthr and fabs(sx) >= thr[j]:
                j += 1
            ix[i] = (j + 1) if sx >= 0.0 else -(j + 1)
            j = 0
            while j < nthr and fabs(sw) >= thr[j]:
                j += 1
            iw[i] = (j + 1) if sw >= 0.0 else -(j + 1)
    return ix_arr, iw_arr


def gather_dot(double[::1] u, long[::1] top, long[::1] phase, double[:, ::1] coefs):
    """out[m] = sum_j coefs[phase[m], j] * u[top[m] - j]."""
    cdef Py_ssize_t n = top.shape[0], ntap = coefs.shape[1], m, j
    cdef long t, p
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double acc
    with nogil:
        for m in range(n):
            t = top[m]
            p = phase[m]
            acc = 0.0
            for j in range(ntap):
                acc = acc + coefs[p, j] * u[t - j]
            out[m] = acc
    return out_arr
