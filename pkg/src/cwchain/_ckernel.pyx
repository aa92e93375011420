# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled chain kernel on the system MPFR library.

Every multiprecision method performs the same MPFR operations in the same
order as :class:`cwchain._pykernel.PyKernel`, so results are bit-identical.
Values cross the boundary as exact base-16 strings, which keeps this
module's MPFR independent of the copy bundled with gmpy2. The
double-precision warm-up uses libm and agrees with the numpy version to
rounding only.
"""

from libc.stdlib cimport malloc, free
from libc.math cimport tanh as dtanh, atanh as datanh, fabs, isfinite, INFINITY

import numpy as np
import gmpy2

from ._kernel_common import KernelResult, KernelState, boundary_weights, to_hex


cdef extern from "mpfr.h":
    ctypedef struct __mpfr_struct:
        pass
    ctypedef __mpfr_struct mpfr_t[1]
    ctypedef __mpfr_struct *mpfr_ptr
    ctypedef const __mpfr_struct *mpfr_srcptr
    ctypedef long mpfr_prec_t
    ctypedef long mpfr_exp_t
    ctypedef enum mpfr_rnd_t:
        MPFR_RNDN

    void mpfr_init2(mpfr_ptr, mpfr_prec_t)
    void mpfr_clear(mpfr_ptr)
    int mpfr_set(mpfr_ptr, mpfr_srcptr, mpfr_rnd_t)
    int mpfr_set_si(mpfr_ptr, long, mpfr_rnd_t)
    int mpfr_set_d(mpfr_ptr, double, mpfr_rnd_t)
    int mpfr_set_str(mpfr_ptr, const char *, int, mpfr_rnd_t)
    void mpfr_set_inf(mpfr_ptr, int)
    char *mpfr_get_str(char *, mpfr_exp_t *, int, size_t, mpfr_srcptr, mpfr_rnd_t)
    void mpfr_free_str(char *)
    double mpfr_get_d(mpfr_srcptr, mpfr_rnd_t)
    int mpfr_add(mpfr_ptr, mpfr_srcptr, mpfr_srcptr, mpfr_rnd_t)
    int mpfr_sub(mpfr_ptr, mpfr_srcptr, mpfr_srcptr, mpfr_rnd_t)
    int mpfr_mul(mpfr_ptr, mpfr_srcptr, mpfr_srcptr, mpfr_rnd_t)
    int mpfr_div(mpfr_ptr, mpfr_srcptr, mpfr_srcptr, mpfr_rnd_t)
    int mpfr_add_si(mpfr_ptr, mpfr_srcptr, long, mpfr_rnd_t)
    int mpfr_si_sub(mpfr_ptr, long, mpfr_srcptr, mpfr_rnd_t)
    int mpfr_mul_si(mpfr_ptr, mpfr_srcptr, long, mpfr_rnd_t)
    int mpfr_div_si(mpfr_ptr, mpfr_srcptr, long, mpfr_rnd_t)
    int mpfr_mul_2si(mpfr_ptr, mpfr_srcptr, long, mpfr_rnd_t)
    int mpfr_neg(mpfr_ptr, mpfr_srcptr, mpfr_rnd_t)
    int mpfr_abs(mpfr_ptr, mpfr_srcptr, mpfr_rnd_t)
    int mpfr_tanh(mpfr_ptr, mpfr_srcptr, mpfr_rnd_t)
    int mpfr_atanh(mpfr_ptr, mpfr_srcptr, mpfr_rnd_t)
    int mpfr_cmp(mpfr_srcptr, mpfr_srcptr)
    int mpfr_cmpabs(mpfr_srcptr, mpfr_srcptr)
    int mpfr_cmp_si(mpfr_srcptr, long)
    int mpfr_zero_p(mpfr_srcptr)
    int mpfr_number_p(mpfr_srcptr)
    int mpfr_equal_p(mpfr_srcptr, mpfr_srcptr)
    void mpfr_swap(mpfr_ptr, mpfr_ptr)


cdef mpfr_rnd_t RN = MPFR_RNDN
cdef int MAX_SCALAR_ITERS = 20000
cdef int MAX_HALVINGS = 40


# --- vectors and conversion ----------------------------------------------------

cdef __mpfr_struct *vec_new(Py_ssize_t n, mpfr_prec_t prec) except NULL:
    cdef Py_ssize_t i
    cdef __mpfr_struct *v = <__mpfr_struct *> malloc((n if n > 0 else 1) * sizeof(__mpfr_struct))
    if v == NULL:
        raise MemoryError()
    for i in range(n):
        mpfr_init2(&v[i], prec)
    return v


cdef void vec_free(__mpfr_struct *v, Py_ssize_t n):
    cdef Py_ssize_t i
    if v == NULL:
        return
    for i in range(n):
        mpfr_clear(&v[i])
    free(v)


cdef int load(mpfr_ptr dst, object x) except -1:
    """Round ``x`` to ``dst``; mpfr values go through their exact hex text."""
    cdef bytes s
    cdef int base = 10
    if isinstance(x, float):
        mpfr_set_d(dst, x, RN)
        return 0
    if isinstance(x, str):
        s = x.encode()
    elif isinstance(x, int):
        s = str(x).encode()
    else:
        v = gmpy2.mpfr(x)
        if not gmpy2.is_finite(v):
            mpfr_set_d(dst, float(v), RN)
            return 0
        s = to_hex(v).encode()
        base = 16
    if mpfr_set_str(dst, s, base, RN) != 0:
        raise ValueError(f"cannot convert {x!r} to mpfr")
    return 0


cdef object export(mpfr_srcptr x, int bits):
    cdef mpfr_exp_t e
    cdef char *s
    if not mpfr_number_p(x) or mpfr_zero_p(x):
        return gmpy2.mpfr(mpfr_get_d(x, RN), bits)
    s = mpfr_get_str(NULL, &e, 16, 0, x, RN)
    txt = s.decode()
    mpfr_free_str(s)
    if txt[0] == "-":
        txt = f"-0.{txt[1:]}@{e}"
    else:
        txt = f"0.{txt}@{e}"
    return gmpy2.mpfr(txt, bits, 16)


cdef class CKernel:
    """Compiled counterpart of :class:`cwchain._pykernel.PyKernel` (same signature)."""

    backend = "c"

    cdef readonly int bits, n, R, na
    cdef readonly bint forced, plain
    cdef __mpfr_struct *c
    cdef __mpfr_struct *wl
    cdef __mpfr_struct *wr
    cdef __mpfr_struct *H
    cdef __mpfr_struct *p
    cdef mpfr_t J, eps, hmax, s1, s2, small
    cdef double *cd
    cdef double *wld
    cdef double *wrd
    cdef double *Hd
    cdef double *pd
    cdef double Jd

    def __cinit__(self, *args, **kwargs):
        self.c = self.wl = self.wr = self.H = self.p = NULL
        self.cd = self.wld = self.wrd = self.Hd = self.pd = NULL
        self.na = 0
        self.R = -1
        self.n = 0

    def __init__(self, coeffs, J, pairs, n, forced, bits, random_field=False):
        cdef int i
        self.bits = int(bits)
        self.n = int(n)
        self.R = len(coeffs) - 1
        self.forced = bool(forced)
        self.plain = not random_field
        self.na = len(pairs)
        with gmpy2.context(precision=self.bits):
            c = [gmpy2.mpfr(x) for x in coeffs]
            Jm = gmpy2.mpfr(J)
            Hs = [gmpy2.mpfr(h) for h, _ in pairs]
            ps = [gmpy2.mpfr(q) for _, q in pairs]
            wl, wr = boundary_weights(c, self.n)
            eps = gmpy2.mul_2exp(gmpy2.mpfr(1), 1 - self.bits)
            hmax = max(abs(h) for h in Hs)
        self.c = vec_new(self.R + 1, self.bits)
        self.wl = vec_new(self.n, self.bits)
        self.wr = vec_new(self.n, self.bits)
        self.H = vec_new(self.na, self.bits)
        self.p = vec_new(self.na, self.bits)
        mpfr_init2(self.J, self.bits)
        mpfr_init2(self.eps, self.bits)
        mpfr_init2(self.hmax, self.bits)
        mpfr_init2(self.s1, self.bits)
        mpfr_init2(self.s2, self.bits)
        mpfr_init2(self.small, self.bits)
        for i in range(self.R + 1):
            load(&self.c[i], c[i])
        for i in range(self.n):
            load(&self.wl[i], wl[i])
            load(&self.wr[i], wr[i])
        for i in range(self.na):
            load(&self.H[i], Hs[i])
            load(&self.p[i], ps[i])
        load(self.J, Jm)
        load(self.eps, eps)
        load(self.hmax, hmax)
        load(self.small, "1e-3")
        self.cd = <double *> malloc((self.R + 1) * sizeof(double))
        self.wld = <double *> malloc(max(self.n, 1) * sizeof(double))
        self.wrd = <double *> malloc(max(self.n, 1) * sizeof(double))
        self.Hd = <double *> malloc(max(self.na, 1) * sizeof(double))
        self.pd = <double *> malloc(max(self.na, 1) * sizeof(double))
        for i in range(self.R + 1):
            self.cd[i] = float(c[i])
        for i in range(self.n):
            self.wld[i] = float(wl[i])
            self.wrd[i] = float(wr[i])
        for i in range(self.na):
            self.Hd[i] = float(Hs[i])
            self.pd[i] = float(ps[i])
        self.Jd = float(Jm)

    def __dealloc__(self):
        if self.R < 0:
            return
        vec_free(self.c, self.R + 1)
        vec_free(self.wl, self.n)
        vec_free(self.wr, self.n)
        vec_free(self.H, self.na)
        vec_free(self.p, self.na)
        if self.cd != NULL:
            mpfr_clear(self.J)
            mpfr_clear(self.eps)
            mpfr_clear(self.hmax)
            mpfr_clear(self.s1)
            mpfr_clear(self.s2)
            mpfr_clear(self.small)
        free(self.cd)
        free(self.wld)
        free(self.wrd)
        free(self.Hd)
        free(self.pd)

    # --- scalar pieces -------------------------------------------------------

    cdef void _T(self, mpfr_ptr t, mpfr_ptr dt, mpfr_srcptr x):
        cdef int a
        if self.plain:
            mpfr_tanh(t, x, RN)
            mpfr_mul(self.s1, t, t, RN)
            mpfr_si_sub(dt, 1, self.s1, RN)
            return
        mpfr_set_si(t, 0, RN)
        mpfr_set_si(dt, 0, RN)
        for a in range(self.na):
            mpfr_add(self.s1, x, &self.H[a], RN)
            mpfr_tanh(self.s2, self.s1, RN)
            mpfr_mul(self.s1, &self.p[a], self.s2, RN)
            mpfr_add(t, t, self.s1, RN)
            mpfr_mul(self.s1, self.s2, self.s2, RN)
            mpfr_si_sub(self.s1, 1, self.s1, RN)
            mpfr_mul(self.s1, &self.p[a], self.s1, RN)
            mpfr_add(dt, dt, self.s1, RN)

    cdef int _fixed_point(self, mpfr_ptr out, mpfr_srcptr h, mpfr_srcptr start) except -1:
        cdef mpfr_t m, x, t, dt, f, slope, step, newton, prev, tol, mnew
        cdef int it, have_prev = 0, done = 0
        cdef __mpfr_struct *tmp[11]
        tmp[0] = m; tmp[1] = x; tmp[2] = t; tmp[3] = dt; tmp[4] = f; tmp[5] = slope
        tmp[6] = step; tmp[7] = newton; tmp[8] = prev; tmp[9] = tol; tmp[10] = mnew
        for it in range(11):
            mpfr_init2(tmp[it], self.bits)
        try:
            mpfr_mul_si(tol, self.eps, 64, RN)
            mpfr_set(m, start, RN)
            for it in range(MAX_SCALAR_ITERS):
                mpfr_mul(x, self.J, m, RN)
                mpfr_add(x, x, h, RN)
                self._T(t, dt, x)
                mpfr_sub(f, m, t, RN)
                mpfr_mul(slope, self.J, dt, RN)
                mpfr_si_sub(slope, 1, slope, RN)
                if mpfr_cmpabs(f, tol) <= 0:
                    done = 1
                    break
                mpfr_neg(step, f, RN)
                if have_prev and mpfr_cmpabs(step, self.small) < 0 and mpfr_cmp_si(slope, 0) > 0:
                    mpfr_neg(newton, f, RN)
                    mpfr_div(newton, newton, slope, RN)
                    mpfr_mul_2si(x, prev, 1, RN)
                    mpfr_abs(x, x, RN)
                    if mpfr_cmpabs(newton, x) <= 0:
                        mpfr_set(step, newton, RN)
                mpfr_add(mnew, m, step, RN)
                if mpfr_cmp_si(mnew, 1) > 0:
                    mpfr_set_si(mnew, 1, RN)
                elif mpfr_cmp_si(mnew, -1) < 0:
                    mpfr_set_si(mnew, -1, RN)
                if mpfr_equal_p(mnew, m):
                    done = 1
                    break
                mpfr_set(prev, step, RN)
                have_prev = 1
                mpfr_set(m, mnew, RN)
            if not done:
                raise ArithmeticError("boundary fixed point did not converge")
            mpfr_set(out, m, RN)
        finally:
            for it in range(11):
                mpfr_clear(tmp[it])
        return 0

    def boundary(self, h, m_left=None, m_right=None):
        """Forced values ``(m_-(h), m_+(h))``, warm-started when given."""
        cdef mpfr_t hh, st, lo, hi
        mpfr_init2(hh, self.bits); mpfr_init2(st, self.bits)
        mpfr_init2(lo, self.bits); mpfr_init2(hi, self.bits)
        try:
            load(hh, h)
            load(st, -1 if m_left is None else m_left)
            self._fixed_point(lo, hh, st)
            load(st, 1 if m_right is None else m_right)
            self._fixed_point(hi, hh, st)
            return export(lo, self.bits), export(hi, self.bits)
        finally:
            mpfr_clear(hh); mpfr_clear(st); mpfr_clear(lo); mpfr_clear(hi)

    cdef void _slope(self, mpfr_ptr out, mpfr_srcptr m, mpfr_srcptr h):
        cdef mpfr_t x, t, dt
        mpfr_init2(x, self.bits); mpfr_init2(t, self.bits); mpfr_init2(dt, self.bits)
        mpfr_mul(x, self.J, m, RN)
        mpfr_add(x, x, h, RN)
        self._T(t, dt, x)
        mpfr_mul(x, self.J, dt, RN)
        mpfr_si_sub(x, 1, x, RN)
        mpfr_div(out, dt, x, RN)
        mpfr_clear(x); mpfr_clear(t); mpfr_clear(dt)

    # --- vector pieces -------------------------------------------------------

    cdef void _conv(self, __mpfr_struct *u, __mpfr_struct *m, mpfr_srcptr ml, mpfr_srcptr mr):
        cdef int i, k, n = self.n, R = self.R
        for i in range(n):
            mpfr_mul(&u[i], &self.c[0], &m[i], RN)
            for k in range(1, R + 1):
                if i - k >= 0:
                    mpfr_mul(self.s1, &self.c[k], &m[i - k], RN)
                    mpfr_add(&u[i], &u[i], self.s1, RN)
                if i + k < n:
                    mpfr_mul(self.s1, &self.c[k], &m[i + k], RN)
                    mpfr_add(&u[i], &u[i], self.s1, RN)
            if self.forced:
                mpfr_mul(self.s1, &self.wl[i], ml, RN)
                mpfr_add(&u[i], &u[i], self.s1, RN)
                mpfr_mul(self.s1, &self.wr[i], mr, RN)
                mpfr_add(&u[i], &u[i], self.s1, RN)

    cdef void _field_sum(self, mpfr_ptr s, mpfr_ptr ds, __mpfr_struct *u, mpfr_srcptr x, mpfr_srcptr goal,
                         mpfr_ptr y, mpfr_ptr t, mpfr_ptr dt):
        cdef int i
        mpfr_set_si(s, 0, RN)
        mpfr_set_si(ds, 0, RN)
        for i in range(self.n):
            mpfr_add(y, &u[i], x, RN)
            self._T(t, dt, y)
            mpfr_add(s, s, t, RN)
            mpfr_add(ds, ds, dt, RN)
        mpfr_sub(s, s, goal, RN)

    cdef int _solve_field(self, mpfr_ptr out, __mpfr_struct *u, mpfr_srcptr target, mpfr_srcptr h0) except -1:
        cdef mpfr_t goal, lo, hi, x, xn, val, der, tol, y, t, dt
        cdef __mpfr_struct *tmp[11]
        cdef int it, done = 0
        tmp[0] = goal; tmp[1] = lo; tmp[2] = hi; tmp[3] = x; tmp[4] = xn; tmp[5] = val
        tmp[6] = der; tmp[7] = tol; tmp[8] = y; tmp[9] = t; tmp[10] = dt
        for it in range(11):
            mpfr_init2(tmp[it], self.bits)
        try:
            mpfr_mul_si(goal, target, self.n, RN)
            mpfr_add(hi, self.J, self.hmax, RN)
            mpfr_add_si(hi, hi, 2, RN)
            mpfr_neg(lo, hi, RN)
            while True:
                self._field_sum(val, der, u, lo, goal, y, t, dt)
                if mpfr_cmp_si(val, 0) <= 0:
                    break
                mpfr_mul_si(lo, lo, 2, RN)
            while True:
                self._field_sum(val, der, u, hi, goal, y, t, dt)
                if mpfr_cmp_si(val, 0) >= 0:
                    break
                mpfr_mul_si(hi, hi, 2, RN)
            mpfr_set(x, h0, RN)
            if not (mpfr_cmp(lo, x) < 0 and mpfr_cmp(x, hi) < 0):
                mpfr_add(x, lo, hi, RN)
                mpfr_div_si(x, x, 2, RN)
            mpfr_mul_si(tol, self.eps, 64, RN)
            mpfr_mul_si(tol, tol, self.n, RN)
            for it in range(4 * self.bits + 100):
                self._field_sum(val, der, u, x, goal, y, t, dt)
                if mpfr_cmp_si(val, 0) > 0:
                    mpfr_set(hi, x, RN)
                else:
                    mpfr_set(lo, x, RN)
                if mpfr_cmpabs(val, tol) <= 0:
                    done = 1
                    break
                if mpfr_cmp_si(der, 0) > 0:
                    mpfr_div(xn, val, der, RN)
                    mpfr_sub(xn, x, xn, RN)
                else:
                    mpfr_add(xn, lo, hi, RN)
                    mpfr_div_si(xn, xn, 2, RN)
                if not (mpfr_cmp(lo, xn) < 0 and mpfr_cmp(xn, hi) < 0):
                    mpfr_add(xn, lo, hi, RN)
                    mpfr_div_si(xn, xn, 2, RN)
                if mpfr_equal_p(xn, x):
                    done = 1
                    break
                mpfr_set(x, xn, RN)
            if not done:
                raise ArithmeticError("field equation did not converge")
            mpfr_set(out, x, RN)
        finally:
            for it in range(11):
                mpfr_clear(tmp[it])
        return 0

    cdef list _export_vec(self, __mpfr_struct *v):
        cdef int i
        return [export(&v[i], self.bits) for i in range(self.n)]

    # --- Picard iteration ----------------------------------------------------

    def picard(self, state, target, theta, delta, max_iters, margin, history=False):
        """Damped fixed-point iteration; see :meth:`PyKernel.picard`."""
        cdef int n = self.n, i, it = 0
        cdef long clamps = 0
        cdef bint has_tgt = target is not None, converged = False, forced = self.forced
        cdef long maxit = int(max_iters)
        cdef __mpfr_struct *m = vec_new(n, self.bits)
        cdef __mpfr_struct *new = vec_new(n, self.bits)
        cdef __mpfr_struct *u = vec_new(n, self.bits)
        cdef __mpfr_struct *base = vec_new(n, self.bits)
        cdef mpfr_t h, ml, mr, th, omt, dl, tgt, a, top, ntop, sb, sm, b, mc, step, t, dt, x
        cdef __mpfr_struct *tmp[18]
        tmp[0] = h; tmp[1] = ml; tmp[2] = mr; tmp[3] = th; tmp[4] = omt; tmp[5] = dl; tmp[6] = tgt
        tmp[7] = a; tmp[8] = top; tmp[9] = ntop; tmp[10] = sb; tmp[11] = sm; tmp[12] = b; tmp[13] = mc
        tmp[14] = step; tmp[15] = t; tmp[16] = dt; tmp[17] = x
        for i in range(18):
            mpfr_init2(tmp[i], self.bits)
        steps = []
        try:
            for i in range(n):
                load(&m[i], state.m[i])
            load(h, state.h)
            if forced:
                load(ml, state.m_left)
                load(mr, state.m_right)
            load(th, theta)
            mpfr_si_sub(omt, 1, th, RN)
            load(dl, delta)
            if has_tgt:
                load(tgt, target)
            mpfr_add_si(a, &self.c[0], -1, RN)
            load(x, margin)
            mpfr_si_sub(top, 1, x, RN)
            mpfr_neg(ntop, top, RN)
            mpfr_set_inf(step, 1)
            while it < maxit:
                it += 1
                self._conv(u, m, ml, mr)
                if self.plain:
                    mpfr_set_si(sb, 0, RN)
                    mpfr_set_si(sm, 0, RN)
                    for i in range(n):
                        if mpfr_cmp(&m[i], top) > 0:
                            mpfr_set(mc, top, RN)
                            clamps += 1
                        elif mpfr_cmp(&m[i], ntop) < 0:
                            mpfr_set(mc, ntop, RN)
                            clamps += 1
                        else:
                            mpfr_set(mc, &m[i], RN)
                        mpfr_atanh(b, mc, RN)
                        mpfr_sub(b, b, &m[i], RN)
                        mpfr_mul(x, &self.c[0], &m[i], RN)
                        mpfr_sub(x, &u[i], x, RN)
                        mpfr_sub(&base[i], b, x, RN)
                        mpfr_add(sb, sb, &base[i], RN)
                        mpfr_add(sm, sm, &m[i], RN)
                    if has_tgt:
                        # h = sb/n - a (tgt - theta (sm/n)) / omt
                        mpfr_div_si(sm, sm, n, RN)
                        mpfr_mul(sm, th, sm, RN)
                        mpfr_sub(sm, tgt, sm, RN)
                        mpfr_mul(sm, a, sm, RN)
                        mpfr_div(sm, sm, omt, RN)
                        mpfr_div_si(sb, sb, n, RN)
                        mpfr_sub(h, sb, sm, RN)
                    for i in range(n):
                        mpfr_sub(x, &base[i], h, RN)
                        mpfr_div(x, x, a, RN)
                        mpfr_mul(b, th, &m[i], RN)
                        mpfr_mul(x, omt, x, RN)
                        mpfr_add(&new[i], b, x, RN)
                else:
                    if has_tgt:
                        self._solve_field(h, u, tgt, h)
                    for i in range(n):
                        mpfr_add(x, &u[i], h, RN)
                        self._T(t, dt, x)
                        mpfr_mul(x, &self.c[0], &m[i], RN)
                        mpfr_sub(x, x, t, RN)
                        mpfr_div(x, x, a, RN)
                        mpfr_mul(b, th, &m[i], RN)
                        mpfr_mul(x, omt, x, RN)
                        mpfr_add(&new[i], b, x, RN)
                mpfr_set_si(step, 0, RN)
                for i in range(n):
                    mpfr_sub(x, &new[i], &m[i], RN)
                    mpfr_abs(x, x, RN)
                    mpfr_add(step, step, x, RN)
                m, new = new, m
                if forced:
                    self._fixed_point(ml, h, ml)
                    self._fixed_point(mr, h, mr)
                if history:
                    steps.append(mpfr_get_d(step, RN))
                if mpfr_cmp(step, dl) < 0:
                    converged = True
                    break
            out = KernelState(self._export_vec(m), export(h, self.bits),
                              export(ml, self.bits) if forced else None,
                              export(mr, self.bits) if forced else None)
            return KernelResult(out, it, mpfr_get_d(step, RN), converged, clamps, steps)
        finally:
            for i in range(18):
                mpfr_clear(tmp[i])
            vec_free(m, n)
            vec_free(new, n)
            vec_free(u, n)
            vec_free(base, n)

    # --- Newton iteration ----------------------------------------------------

    cdef void _residual_vec(self, __mpfr_struct *F, __mpfr_struct *dT, __mpfr_struct *u, __mpfr_struct *m,
                            mpfr_srcptr h, mpfr_srcptr ml, mpfr_srcptr mr, mpfr_ptr x, mpfr_ptr t):
        cdef int i
        self._conv(u, m, ml, mr)
        for i in range(self.n):
            mpfr_add(x, &u[i], h, RN)
            self._T(t, &dT[i], x)
            mpfr_sub(&F[i], &m[i], t, RN)

    cdef object _residual_py(self, state, bint worst_only):
        cdef int n = self.n, i
        cdef __mpfr_struct *m = vec_new(n, self.bits)
        cdef __mpfr_struct *F = vec_new(n, self.bits)
        cdef __mpfr_struct *dT = vec_new(n, self.bits)
        cdef __mpfr_struct *u = vec_new(n, self.bits)
        cdef mpfr_t h, ml, mr, x, t, worst
        mpfr_init2(h, self.bits); mpfr_init2(ml, self.bits); mpfr_init2(mr, self.bits)
        mpfr_init2(x, self.bits); mpfr_init2(t, self.bits); mpfr_init2(worst, self.bits)
        try:
            for i in range(n):
                load(&m[i], state.m[i])
            load(h, state.h)
            if self.forced:
                load(ml, state.m_left)
                load(mr, state.m_right)
            self._residual_vec(F, dT, u, m, h, ml, mr, x, t)
            if not worst_only:
                return self._export_vec(F)
            mpfr_set_si(worst, 0, RN)
            for i in range(n):
                if mpfr_cmpabs(&F[i], worst) > 0:
                    mpfr_abs(worst, &F[i], RN)
            return export(worst, self.bits)
        finally:
            mpfr_clear(h); mpfr_clear(ml); mpfr_clear(mr); mpfr_clear(x); mpfr_clear(t); mpfr_clear(worst)
            vec_free(m, n); vec_free(F, n); vec_free(dT, n); vec_free(u, n)

    def residual(self, state):
        """``max_i |m_i - T(u_i + h)|`` over core sites."""
        return self._residual_py(state, True)

    def residual_vector(self, state):
        """Per-site ``m_i - T(u_i + h)``."""
        return self._residual_py(state, False)

    cdef int _band_solve(self, __mpfr_struct *dT, __mpfr_struct *b, int nr, __mpfr_struct *rows,
                         __mpfr_struct *xs, mpfr_ptr best, mpfr_ptr l, mpfr_ptr v) except -1:
        """In-place banded LU with partial pivoting; ``b`` is ``n x nr`` row-major, result in ``xs``."""
        cdef int n = self.n, R = self.R, W = 3 * self.R + 1
        cdef int i, j, col, r, p, hi_col, lim
        for i in range(n):
            for j in range(W):
                mpfr_set_si(&rows[i * W + j], 0, RN)
            for j in range(max(0, i - R), min(n, i + R + 1)):
                mpfr_mul(v, &dT[i], &self.c[abs(i - j)], RN)
                mpfr_neg(v, v, RN)
                if i == j:
                    mpfr_add_si(v, v, 1, RN)
                mpfr_set(&rows[i * W + j - i + R], v, RN)
        for j in range(n):
            p = j
            mpfr_abs(best, &rows[j * W + R], RN)
            lim = min(n, j + R + 1)
            for i in range(j + 1, lim):
                if mpfr_cmpabs(&rows[i * W + j - i + R], best) > 0:
                    mpfr_abs(best, &rows[i * W + j - i + R], RN)
                    p = i
            if mpfr_zero_p(best):
                raise ZeroDivisionError("singular chain Jacobian")
            hi_col = min(n - 1, j + 2 * R)
            if p != j:
                for col in range(j, hi_col + 1):
                    mpfr_swap(&rows[j * W + col - j + R], &rows[p * W + col - p + R])
                for r in range(nr):
                    mpfr_swap(&b[j * nr + r], &b[p * nr + r])
            for i in range(j + 1, lim):
                if mpfr_zero_p(&rows[i * W + j - i + R]):
                    continue
                mpfr_div(l, &rows[i * W + j - i + R], &rows[j * W + R], RN)
                mpfr_set_si(&rows[i * W + j - i + R], 0, RN)
                for col in range(j + 1, hi_col + 1):
                    mpfr_mul(v, l, &rows[j * W + col - j + R], RN)
                    mpfr_sub(&rows[i * W + col - i + R], &rows[i * W + col - i + R], v, RN)
                for r in range(nr):
                    mpfr_mul(v, l, &b[j * nr + r], RN)
                    mpfr_sub(&b[i * nr + r], &b[i * nr + r], v, RN)
        for j in range(n - 1, -1, -1):
            for r in range(nr):
                mpfr_set(&xs[j * nr + r], &b[j * nr + r], RN)
            for col in range(j + 1, min(n - 1, j + 2 * R) + 1):
                for r in range(nr):
                    mpfr_mul(v, &rows[j * W + col - j + R], &xs[col * nr + r], RN)
                    mpfr_sub(&xs[j * nr + r], &xs[j * nr + r], v, RN)
            for r in range(nr):
                mpfr_div(&xs[j * nr + r], &xs[j * nr + r], &rows[j * W + R], RN)
        return 0

    cdef void _merit(self, mpfr_ptr out, __mpfr_struct *F, mpfr_srcptr G, bint has_g):
        cdef int i
        if has_g:
            mpfr_abs(out, G, RN)
        else:
            mpfr_set_si(out, 0, RN)
        for i in range(self.n):
            if mpfr_cmpabs(&F[i], out) > 0:
                mpfr_abs(out, &F[i], RN)

    cdef void _mean_gap(self, mpfr_ptr G, __mpfr_struct *m, mpfr_srcptr tgt):
        cdef int i
        mpfr_set_si(G, 0, RN)
        for i in range(self.n):
            mpfr_add(G, G, &m[i], RN)
        mpfr_div_si(G, G, self.n, RN)
        mpfr_sub(G, G, tgt, RN)

    def newton(self, state, target, tol, max_iters):
        """Newton's method on ``(m, h)``; see :meth:`PyKernel.newton`."""
        cdef int n = self.n, i, it = 0, k, nr
        cdef int W = 3 * self.R + 1
        cdef bint has_tgt = target is not None, converged = False, accepted, forced = self.forced, inside
        cdef int maxit = int(max_iters)
        cdef __mpfr_struct *m = vec_new(n, self.bits)
        cdef __mpfr_struct *mt = vec_new(n, self.bits)
        cdef __mpfr_struct *F = vec_new(n, self.bits)
        cdef __mpfr_struct *Ft = vec_new(n, self.bits)
        cdef __mpfr_struct *dT = vec_new(n, self.bits)
        cdef __mpfr_struct *dTt = vec_new(n, self.bits)
        cdef __mpfr_struct *u = vec_new(n, self.bits)
        cdef __mpfr_struct *b = vec_new(2 * n, self.bits)
        cdef __mpfr_struct *xs = vec_new(2 * n, self.bits)
        cdef __mpfr_struct *dm = vec_new(n, self.bits)
        cdef __mpfr_struct *rows = vec_new(n * W, self.bits)
        cdef __mpfr_struct *sw
        cdef mpfr_t h, ht, ml, mr, mlt, mrt, tgt, tl, G, Gt, merit, merit_t, step, dh, alpha, sl, sr
        cdef mpfr_t e, x, t, rx, ry, best, l, v, sa
        cdef __mpfr_struct *tmp[26]
        tmp[0] = h; tmp[1] = ht; tmp[2] = ml; tmp[3] = mr; tmp[4] = mlt; tmp[5] = mrt; tmp[6] = tgt
        tmp[7] = tl; tmp[8] = G; tmp[9] = Gt; tmp[10] = merit; tmp[11] = merit_t; tmp[12] = step
        tmp[13] = dh; tmp[14] = alpha; tmp[15] = sl; tmp[16] = sr; tmp[17] = e; tmp[18] = x; tmp[19] = t
        tmp[20] = rx; tmp[21] = ry; tmp[22] = best; tmp[23] = l; tmp[24] = v; tmp[25] = sa
        for i in range(26):
            mpfr_init2(tmp[i], self.bits)
        history = []
        nr = 2 if has_tgt else 1
        try:
            for i in range(n):
                load(&m[i], state.m[i])
            load(h, state.h)
            if forced:
                load(ml, state.m_left)
                load(mr, state.m_right)
            if has_tgt:
                load(tgt, target)
            load(tl, tol)
            self._residual_vec(F, dT, u, m, h, ml, mr, x, t)
            if has_tgt:
                self._mean_gap(G, m, tgt)
            self._merit(merit, F, G, has_tgt)
            mpfr_set_inf(step, 1)
            while it < maxit:
                it += 1
                for i in range(n):
                    mpfr_neg(&b[i * nr], &F[i], RN)
                if has_tgt:
                    if forced:
                        self._slope(sl, ml, h)
                        self._slope(sr, mr, h)
                    for i in range(n):
                        mpfr_set_si(e, 1, RN)
                        if forced:
                            mpfr_mul(x, &self.wl[i], sl, RN)
                            mpfr_add(e, e, x, RN)
                            mpfr_mul(x, &self.wr[i], sr, RN)
                            mpfr_add(e, e, x, RN)
                        mpfr_mul(x, &dT[i], e, RN)
                        mpfr_neg(&b[i * nr + 1], x, RN)
                self._band_solve(dT, b, nr, rows, xs, best, l, v)
                mpfr_set_si(dh, 0, RN)
                if has_tgt:
                    mpfr_set_si(rx, 0, RN)
                    mpfr_set_si(ry, 0, RN)
                    for i in range(n):
                        mpfr_add(rx, rx, &xs[i * 2], RN)
                    for i in range(n):
                        mpfr_add(ry, ry, &xs[i * 2 + 1], RN)
                    mpfr_div_si(rx, rx, n, RN)
                    mpfr_div_si(ry, ry, n, RN)
                    mpfr_add(dh, rx, G, RN)
                    mpfr_div(dh, dh, ry, RN)
                    for i in range(n):
                        mpfr_mul(x, dh, &xs[i * 2 + 1], RN)
                        mpfr_sub(&dm[i], &xs[i * 2], x, RN)
                else:
                    for i in range(n):
                        mpfr_set(&dm[i], &xs[i], RN)
                mpfr_abs(step, dh, RN)
                for i in range(n):
                    mpfr_abs(x, &dm[i], RN)
                    mpfr_add(step, step, x, RN)
                mpfr_set_si(alpha, 1, RN)
                accepted = False
                for k in range(MAX_HALVINGS):
                    inside = True
                    for i in range(n):
                        mpfr_mul(x, alpha, &dm[i], RN)
                        mpfr_add(&mt[i], &m[i], x, RN)
                        if mpfr_cmp_si(&mt[i], 1) >= 0 or mpfr_cmp_si(&mt[i], -1) <= 0:
                            inside = False
                    mpfr_mul(x, alpha, dh, RN)
                    mpfr_add(ht, h, x, RN)
                    if inside:
                        if forced and has_tgt:
                            self._fixed_point(mlt, ht, ml)
                            self._fixed_point(mrt, ht, mr)
                        elif forced:
                            mpfr_set(mlt, ml, RN)
                            mpfr_set(mrt, mr, RN)
                        self._residual_vec(Ft, dTt, u, mt, ht, mlt, mrt, x, t)
                        if has_tgt:
                            self._mean_gap(Gt, mt, tgt)
                        self._merit(merit_t, Ft, Gt, has_tgt)
                        mpfr_mul(sa, step, alpha, RN)
                        if mpfr_cmp(merit_t, merit) < 0 or mpfr_cmp(sa, tl) <= 0:
                            accepted = True
                            break
                    mpfr_div_si(alpha, alpha, 2, RN)
                if not accepted:
                    break
                m, mt = mt, m
                F, Ft = Ft, F
                dT, dTt = dTt, dT
                mpfr_set(h, ht, RN)
                if forced:
                    mpfr_set(ml, mlt, RN)
                    mpfr_set(mr, mrt, RN)
                if has_tgt:
                    mpfr_set(G, Gt, RN)
                mpfr_set(merit, merit_t, RN)
                history.append(mpfr_get_d(step, RN))
                if mpfr_cmp(step, tl) <= 0:
                    converged = True
                    break
            out = KernelState(self._export_vec(m), export(h, self.bits),
                              export(ml, self.bits) if forced else None,
                              export(mr, self.bits) if forced else None)
            return KernelResult(out, it, mpfr_get_d(step, RN), converged, 0, history)
        finally:
            for i in range(26):
                mpfr_clear(tmp[i])
            vec_free(m, n); vec_free(mt, n); vec_free(F, n); vec_free(Ft, n)
            vec_free(dT, n); vec_free(dTt, n); vec_free(u, n); vec_free(b, 2 * n)
            vec_free(xs, 2 * n); vec_free(dm, n); vec_free(rows, n * W)

    # --- double precision warm-up ---------------------------------------------

    cdef inline void _T_double(self, double x, double *t, double *dt) noexcept nogil:
        cdef int a
        cdef double th
        if self.plain:
            th = dtanh(x)
            t[0] = th
            dt[0] = 1 - th * th
            return
        t[0] = 0
        dt[0] = 0
        for a in range(self.na):
            th = dtanh(x + self.Hd[a])
            t[0] += self.pd[a] * th
            dt[0] += self.pd[a] * (1 - th * th)

    cdef double _fixed_point_double(self, double h, double start) except? -9 nogil:
        cdef double m = start, f, slope, step, newton, prev = 0, t, dt, mn
        cdef int it, have_prev = 0
        for it in range(MAX_SCALAR_ITERS):
            self._T_double(self.Jd * m + h, &t, &dt)
            f = m - t
            slope = 1 - self.Jd * dt
            if fabs(f) <= 1e-15:
                return m
            step = -f
            if have_prev and fabs(step) < 1e-3 and slope > 0:
                newton = -f / slope
                if fabs(newton) <= 2 * fabs(prev):
                    step = newton
            mn = m + step
            if mn > 1:
                mn = 1
            elif mn < -1:
                mn = -1
            if mn == m:
                return m
            prev = step
            have_prev = 1
            m = mn
        with gil:
            raise ArithmeticError("boundary fixed point did not converge")

    cdef double _field_double(self, double *u, double target, double h) noexcept nogil:
        cdef double lo = -64.0, hi = 64.0, x = h, val, der, xn, t, dt
        cdef int it, i
        for it in range(200):
            val = 0
            der = 0
            for i in range(self.n):
                self._T_double(u[i] + x, &t, &dt)
                val += t
                der += dt
            val -= target * self.n
            if val > 0:
                hi = x
            else:
                lo = x
            xn = x - val / der if der > 0 else 0.5 * (lo + hi)
            if not (lo < xn < hi):
                xn = 0.5 * (lo + hi)
            if fabs(xn - x) <= 1e-16 * (1 + fabs(x)):
                return xn
            x = xn
        return x

    def picard_double(self, m, h, ml, mr, target, theta, delta, max_iters):
        """Double-precision damped iteration; returns ``(m, h, ml, mr, iters, step)``."""
        cdef int n = self.n, R = self.R, i, k
        cdef double[::1] mv = np.array(m, dtype=float)
        cdef double[::1] nv = np.empty(n)
        cdef double[::1] uv = np.empty(n)
        cdef double[::1] bv = np.empty(n)
        cdef double hh = h, lft = 0 if ml is None else ml, rgt = 0 if mr is None else mr
        cdef double th = theta, omt = 1 - theta, dl = delta, c0 = self.cd[0], a = self.cd[0] - 1
        cdef double top = 1 - 1e-15, tg = 0 if target is None else target
        cdef double step = INFINITY, acc, mi, mc, sb, sm, t, dt
        cdef bint has_tgt = target is not None, forced = self.forced
        cdef long it = 0, maxit = int(max_iters)
        with nogil:
            while it < maxit:
                it += 1
                for i in range(n):
                    acc = self.cd[0] * mv[i]
                    for k in range(1, R + 1):
                        if i - k >= 0:
                            acc += self.cd[k] * mv[i - k]
                        if i + k < n:
                            acc += self.cd[k] * mv[i + k]
                    if forced:
                        acc += self.wld[i] * lft + self.wrd[i] * rgt
                    uv[i] = acc
                if self.plain:
                    sb = 0
                    sm = 0
                    for i in range(n):
                        mi = mv[i]
                        mc = top if mi > top else (-top if mi < -top else mi)
                        bv[i] = datanh(mc) - mi - (uv[i] - c0 * mi)
                        sb += bv[i]
                        sm += mi
                    if has_tgt:
                        hh = sb / n - a * (tg - th * (sm / n)) / omt
                    for i in range(n):
                        nv[i] = th * mv[i] + omt * (bv[i] - hh) / a
                else:
                    if has_tgt:
                        hh = self._field_double(&uv[0], tg, hh)
                    for i in range(n):
                        self._T_double(uv[i] + hh, &t, &dt)
                        nv[i] = th * mv[i] + omt * (c0 * mv[i] - t) / a
                step = 0
                for i in range(n):
                    step += fabs(nv[i] - mv[i])
                for i in range(n):
                    mv[i] = nv[i]
                if forced:
                    lft = self._fixed_point_double(hh, lft)
                    rgt = self._fixed_point_double(hh, rgt)
                if not isfinite(step):
                    break
                if step < dl:
                    break
        return (np.asarray(mv).copy(), hh, lft if forced else None, rgt if forced else None, it, step)
