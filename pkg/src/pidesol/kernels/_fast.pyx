# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled DGM kernels: forward, backward and second-order jet forward.

Mirrors kernels/pyref.py.  GEMMs go through BLAS (scipy's exported cython
bindings), tanh through numpy's simd loops (scalar libm tanh costs more than
all gemms combined), everything else is fused C with no temporaries.
Parameter offsets are re-derived arithmetically here and must match
pidesol.layout; the cross-backend tests enforce that.

Row-major/col-major bookkeeping for dgemm (all our buffers are C order):
  Y(M,N) = X(M,K) @ W(N,K)^T  ->  dgemm('T','N', m=N, n=M, k=K, A=W lda=K, B=X ldb=K, C=Y ldc=N)
  GW(N,K) += D(M,N)^T @ X(M,K) -> dgemm('N','T', m=K, n=N, k=M, A=X lda=K, B=D ldb=N, C=GW ldc=K)
  dX(M,K) += D(M,N) @ W(N,K)   -> dgemm('N','N', m=K, n=M, k=N, A=W lda=K, B=D ldb=N, C=dX ldc=K)
"""

import numpy as np
cimport numpy as cnp
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef void _gemm_xwt(double* X, double* W, double* Y, int M, int N, int K, double beta) noexcept nogil:
    # Y(M,N) = beta*Y + X(M,K) @ W(N,K)^T
    cdef char ta = b'T', tb = b'N'
    cdef double alpha = 1.0
    dgemm(&ta, &tb, &N, &M, &K, &alpha, W, &K, X, &K, &beta, Y, &N)


cdef void _gemm_dtx(double* D, double* X, double* GW, int M, int N, int K) noexcept nogil:
    # GW(N,K) += D(M,N)^T @ X(M,K)
    cdef char ta = b'N', tb = b'T'
    cdef double alpha = 1.0, beta = 1.0
    dgemm(&ta, &tb, &K, &N, &M, &alpha, X, &K, D, &N, &beta, GW, &K)


cdef void _gemm_dw(double* D, double* W, double* dX, int M, int N, int K, double beta) noexcept nogil:
    # dX(M,K) = beta*dX + D(M,N) @ W(N,K)
    cdef char ta = b'N', tb = b'N'
    cdef double alpha = 1.0
    dgemm(&ta, &tb, &K, &M, &N, &alpha, W, &K, D, &N, &beta, dX, &K)


cdef void _add_bias(double* A, double* b, Py_ssize_t M, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t m, i
    for m in range(M):
        for i in range(n):
            A[m * n + i] += b[i]


cdef inline Py_ssize_t _gate_off(Py_ssize_t l, Py_ssize_t g, Py_ssize_t dp1, Py_ssize_t n) noexcept nogil:
    # offset of gate g (0..3 for z,g,r,h) in layer l; blocks follow W1,b1
    cdef Py_ssize_t gate_size = n * dp1 + n * n + n
    return n * dp1 + n + (4 * l + g) * gate_size


def _param_count(int d, int L, int n_hid):
    return n_hid * (d + 2) + 4 * L * (n_hid * (d + 1) + n_hid * n_hid + n_hid) + n_hid + 1


def forward(double[::1] theta, int d, int L, int n_hid, double[:, ::1] z, bint need_cache=False):
    """Same contract as pyref.forward."""
    cdef Py_ssize_t M = z.shape[0], dp1 = d + 1, n = n_hid
    cdef Py_ssize_t m, i, l, g, base
    if z.shape[1] != dp1:
        raise ValueError("input batch has wrong width")
    if theta.shape[0] != _param_count(d, L, n_hid):
        raise ValueError("parameter vector length does not match layout")

    Ss_arr = np.empty((L + 1, M, n))
    gates_arr = np.empty((L, 4, M, n))
    A_arr = np.empty((M, n))
    SR_arr = np.empty((M, n))
    v_arr = np.empty(M)
    cdef double[:, :, ::1] Ss = Ss_arr
    cdef double[:, :, :, ::1] gates = gates_arr
    cdef double[:, ::1] A = A_arr
    cdef double[:, ::1] SR = SR_arr
    cdef double[::1] v = v_arr

    cdef double* th = &theta[0]
    cdef double* zp = <double*> &z[0, 0]
    cdef double* Ap = &A[0, 0]
    cdef Py_ssize_t out_off = theta.shape[0] - n - 1

    # tanh goes through numpy (simd) on the preactivation buffer; scalar libm
    # tanh in the loop costs more than every gemm combined
    with nogil:
        _gemm_xwt(zp, th, Ap, <int>M, <int>n, <int>dp1, 0.0)
        _add_bias(Ap, th + n * dp1, M, n)
    np.tanh(A_arr, out=Ss_arr[0])

    for l in range(L):
        # z, g, r gates read S^l; h reads S^l * R
        for g in range(3):
            base = _gate_off(l, g, dp1, n)
            with nogil:
                _gemm_xwt(zp, th + base, Ap, <int>M, <int>n, <int>dp1, 0.0)
                _gemm_xwt(&Ss[l, 0, 0], th + base + n * dp1, Ap, <int>M, <int>n, <int>n, 1.0)
                _add_bias(Ap, th + base + n * dp1 + n * n, M, n)
            np.tanh(A_arr, out=gates_arr[l, g])
        base = _gate_off(l, 3, dp1, n)
        with nogil:
            for m in range(M):
                for i in range(n):
                    SR[m, i] = Ss[l, m, i] * gates[l, 2, m, i]
            _gemm_xwt(zp, th + base, Ap, <int>M, <int>n, <int>dp1, 0.0)
            _gemm_xwt(&SR[0, 0], th + base + n * dp1, Ap, <int>M, <int>n, <int>n, 1.0)
            _add_bias(Ap, th + base + n * dp1 + n * n, M, n)
        np.tanh(A_arr, out=gates_arr[l, 3])
        with nogil:
            for m in range(M):
                for i in range(n):
                    Ss[l + 1, m, i] = (1.0 - gates[l, 1, m, i]) * gates[l, 3, m, i] \
                        + gates[l, 0, m, i] * Ss[l, m, i]

    with nogil:
        for m in range(M):
            v[m] = th[out_off + n]
            for i in range(n):
                v[m] += Ss[L, m, i] * th[out_off + i]

    if need_cache:
        return v_arr, (Ss_arr, gates_arr)
    return v_arr, None


def backward(double[::1] theta, int d, int L, int n_hid, double[:, ::1] z, cache, double[::1] w):
    """Same contract as pyref.backward."""
    cdef Py_ssize_t M = z.shape[0], dp1 = d + 1, n = n_hid
    cdef Py_ssize_t m, i, l, base
    Ss_arr, gates_arr = cache
    cdef double[:, :, ::1] Ss = Ss_arr
    cdef double[:, :, :, ::1] gates = gates_arr

    grad_arr = np.zeros(theta.shape[0])
    dS_arr = np.empty((M, n))
    dSn_arr = np.empty((M, n))
    dA_arr = np.empty((M, n))
    dSR_arr = np.empty((M, n))
    SR_arr = np.empty((M, n))
    cdef double[::1] grad = grad_arr
    cdef double[:, ::1] dS = dS_arr
    cdef double[:, ::1] dSn = dSn_arr
    cdef double[:, ::1] dA = dA_arr
    cdef double[:, ::1] dSR = dSR_arr
    cdef double[:, ::1] SR = SR_arr

    cdef double* th = &theta[0]
    cdef double* gp = &grad[0]
    cdef double* zp = <double*> &z[0, 0]
    cdef Py_ssize_t out_off = theta.shape[0] - n - 1
    cdef double hval, zval, gval, rval, sval, t

    with nogil:
        for m in range(M):
            gp[out_off + n] += w[m]
            for i in range(n):
                gp[out_off + i] += Ss[L, m, i] * w[m]
                dS[m, i] = w[m] * th[out_off + i]

        for l in range(L - 1, -1, -1):
            # dS_in = dS*Z ; dah = dS*(1-G)*(1-H^2)
            for m in range(M):
                for i in range(n):
                    zval = gates[l, 0, m, i]
                    gval = gates[l, 1, m, i]
                    rval = gates[l, 2, m, i]
                    hval = gates[l, 3, m, i]
                    sval = Ss[l, m, i]
                    dSn[m, i] = dS[m, i] * zval
                    dA[m, i] = dS[m, i] * (1.0 - gval) * (1.0 - hval * hval)
                    SR[m, i] = sval * rval
            base = _gate_off(l, 3, dp1, n)
            _gemm_dtx(&dA[0, 0], zp, gp + base, <int>M, <int>n, <int>dp1)
            _gemm_dtx(&dA[0, 0], &SR[0, 0], gp + base + n * dp1, <int>M, <int>n, <int>n)
            for m in range(M):
                for i in range(n):
                    gp[base + n * dp1 + n * n + i] += dA[m, i]
            _gemm_dw(&dA[0, 0], th + base + n * dp1, &dSR[0, 0], <int>M, <int>n, <int>n, 0.0)

            # r gate: dar = dSR*S_in*(1-R^2); also dS_in += dSR*R
            for m in range(M):
                for i in range(n):
                    rval = gates[l, 2, m, i]
                    dSn[m, i] += dSR[m, i] * rval
                    dA[m, i] = dSR[m, i] * Ss[l, m, i] * (1.0 - rval * rval)
            base = _gate_off(l, 2, dp1, n)
            _gemm_dtx(&dA[0, 0], zp, gp + base, <int>M, <int>n, <int>dp1)
            _gemm_dtx(&dA[0, 0], &Ss[l, 0, 0], gp + base + n * dp1, <int>M, <int>n, <int>n)
            for m in range(M):
                for i in range(n):
                    gp[base + n * dp1 + n * n + i] += dA[m, i]
            _gemm_dw(&dA[0, 0], th + base + n * dp1, &dSn[0, 0], <int>M, <int>n, <int>n, 1.0)

            # g gate: dag = -dS*H*(1-G^2)
            for m in range(M):
                for i in range(n):
                    gval = gates[l, 1, m, i]
                    dA[m, i] = -dS[m, i] * gates[l, 3, m, i] * (1.0 - gval * gval)
            base = _gate_off(l, 1, dp1, n)
            _gemm_dtx(&dA[0, 0], zp, gp + base, <int>M, <int>n, <int>dp1)
            _gemm_dtx(&dA[0, 0], &Ss[l, 0, 0], gp + base + n * dp1, <int>M, <int>n, <int>n)
            for m in range(M):
                for i in range(n):
                    gp[base + n * dp1 + n * n + i] += dA[m, i]
            _gemm_dw(&dA[0, 0], th + base + n * dp1, &dSn[0, 0], <int>M, <int>n, <int>n, 1.0)

            # z gate: daz = dS*S_in*(1-Z^2)
            for m in range(M):
                for i in range(n):
                    zval = gates[l, 0, m, i]
                    dA[m, i] = dS[m, i] * Ss[l, m, i] * (1.0 - zval * zval)
            base = _gate_off(l, 0, dp1, n)
            _gemm_dtx(&dA[0, 0], zp, gp + base, <int>M, <int>n, <int>dp1)
            _gemm_dtx(&dA[0, 0], &Ss[l, 0, 0], gp + base + n * dp1, <int>M, <int>n, <int>n)
            for m in range(M):
                for i in range(n):
                    gp[base + n * dp1 + n * n + i] += dA[m, i]
            _gemm_dw(&dA[0, 0], th + base + n * dp1, &dSn[0, 0], <int>M, <int>n, <int>n, 1.0)

            for m in range(M):
                for i in range(n):
                    dS[m, i] = dSn[m, i]

        # first layer: da1 = dS*(1-S1^2)
        for m in range(M):
            for i in range(n):
                t = Ss[0, m, i]
                dA[m, i] = dS[m, i] * (1.0 - t * t)
        _gemm_dtx(&dA[0, 0], zp, gp, <int>M, <int>n, <int>dp1)
        for m in range(M):
            for i in range(n):
                gp[n * dp1 + i] += dA[m, i]

    return grad_arr


def jet(double[::1] theta, int d, int L, int n_hid,
        double[:, ::1] z0, double[:, ::1] z1, double[:, ::1] z2):
    """Same contract as pyref.jet."""
    cdef Py_ssize_t M = z0.shape[0], dp1 = d + 1, n = n_hid
    cdef Py_ssize_t m, i, l, g, base, j
    if theta.shape[0] != _param_count(d, L, n_hid):
        raise ValueError("parameter vector length does not match layout")

    S_arr = np.empty((3, M, n))
    Sn_arr = np.empty((3, M, n))
    G_arr = np.empty((4, 3, M, n))
    SR_arr = np.empty((3, M, n))
    A_arr = np.empty((3, M, n))
    v_arr = np.empty((3, M))
    cdef double[:, :, ::1] S = S_arr
    cdef double[:, :, ::1] Sn = Sn_arr
    cdef double[:, :, :, ::1] Gt = G_arr
    cdef double[:, :, ::1] SR = SR_arr
    cdef double[:, :, ::1] A = A_arr
    cdef double[:, ::1] v = v_arr

    cdef double* th = &theta[0]
    cdef double* zp0 = <double*> &z0[0, 0]
    cdef double* zp1 = <double*> &z1[0, 0]
    cdef double* zp2 = <double*> &z2[0, 0]
    cdef Py_ssize_t out_off = theta.shape[0] - n - 1
    cdef double a0, a1, a2, y0, s, u0, u1, u2, w0, w1, w2

    # value-component tanh goes through numpy (simd); the first and second
    # Taylor coefficients are pure arithmetic on the preactivation jets
    with nogil:
        _gemm_xwt(zp0, th, &A[0, 0, 0], <int>M, <int>n, <int>dp1, 0.0)
        _gemm_xwt(zp1, th, &A[1, 0, 0], <int>M, <int>n, <int>dp1, 0.0)
        _gemm_xwt(zp2, th, &A[2, 0, 0], <int>M, <int>n, <int>dp1, 0.0)
        _add_bias(&A[0, 0, 0], th + n * dp1, M, n)
    np.tanh(A_arr[0], out=S_arr[0])
    with nogil:
        for m in range(M):
            for i in range(n):
                y0 = S[0, m, i]
                s = 1.0 - y0 * y0
                a1 = A[1, m, i]
                S[1, m, i] = s * a1
                S[2, m, i] = s * A[2, m, i] - 2.0 * y0 * s * a1 * a1

    for l in range(L):
        for g in range(4):
            base = _gate_off(l, g, dp1, n)
            if g == 3:
                # h reads S^l * R: jet product rule
                with nogil:
                    for m in range(M):
                        for i in range(n):
                            u0 = S[0, m, i]; u1 = S[1, m, i]; u2 = S[2, m, i]
                            w0 = Gt[2, 0, m, i]; w1 = Gt[2, 1, m, i]; w2 = Gt[2, 2, m, i]
                            SR[0, m, i] = u0 * w0
                            SR[1, m, i] = u0 * w1 + u1 * w0
                            SR[2, m, i] = u0 * w2 + 2.0 * u1 * w1 + u2 * w0
            with nogil:
                _gemm_xwt(zp0, th + base, &A[0, 0, 0], <int>M, <int>n, <int>dp1, 0.0)
                _gemm_xwt(zp1, th + base, &A[1, 0, 0], <int>M, <int>n, <int>dp1, 0.0)
                _gemm_xwt(zp2, th + base, &A[2, 0, 0], <int>M, <int>n, <int>dp1, 0.0)
                for j in range(3):
                    if g == 3:
                        _gemm_xwt(&SR[j, 0, 0], th + base + n * dp1, &A[j, 0, 0], <int>M, <int>n, <int>n, 1.0)
                    else:
                        _gemm_xwt(&S[j, 0, 0], th + base + n * dp1, &A[j, 0, 0], <int>M, <int>n, <int>n, 1.0)
                _add_bias(&A[0, 0, 0], th + base + n * dp1 + n * n, M, n)
            np.tanh(A_arr[0], out=G_arr[g, 0])
            with nogil:
                for m in range(M):
                    for i in range(n):
                        y0 = Gt[g, 0, m, i]
                        s = 1.0 - y0 * y0
                        a1 = A[1, m, i]
                        Gt[g, 1, m, i] = s * a1
                        Gt[g, 2, m, i] = s * A[2, m, i] - 2.0 * y0 * s * a1 * a1
        # S_next = (1 - G) * H + Z * S
        with nogil:
            for m in range(M):
                for i in range(n):
                    u0 = 1.0 - Gt[1, 0, m, i]; u1 = -Gt[1, 1, m, i]; u2 = -Gt[1, 2, m, i]
                    w0 = Gt[3, 0, m, i]; w1 = Gt[3, 1, m, i]; w2 = Gt[3, 2, m, i]
                    a0 = u0 * w0
                    a1 = u0 * w1 + u1 * w0
                    a2 = u0 * w2 + 2.0 * u1 * w1 + u2 * w0
                    u0 = Gt[0, 0, m, i]; u1 = Gt[0, 1, m, i]; u2 = Gt[0, 2, m, i]
                    w0 = S[0, m, i]; w1 = S[1, m, i]; w2 = S[2, m, i]
                    Sn[0, m, i] = a0 + u0 * w0
                    Sn[1, m, i] = a1 + u0 * w1 + u1 * w0
                    Sn[2, m, i] = a2 + u0 * w2 + 2.0 * u1 * w1 + u2 * w0
            for j in range(3):
                for m in range(M):
                    for i in range(n):
                        S[j, m, i] = Sn[j, m, i]

    with nogil:
        for m in range(M):
            v[0, m] = th[out_off + n]
            v[1, m] = 0.0
            v[2, m] = 0.0
            for i in range(n):
                v[0, m] += S[0, m, i] * th[out_off + i]
                v[1, m] += S[1, m, i] * th[out_off + i]
                v[2, m] += S[2, m, i] * th[out_off + i]

    return v_arr[0], v_arr[1], v_arr[2]
