# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled trial engine.

Operation-for-operation twin of ``repeaterchain.protocols.simulate_trial``:
identical RNG draw order (numpy PCG64 ``next_double`` stream) and identical
floating-point expression order, so results are bit-identical to the pure
Python engine.  Any semantic change here must be mirrored there.
"""

import numpy as np

from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport exp, log, INFINITY
from numpy.random cimport bitgen_t

cdef int PROTO_SEQ = 0
cdef int PROTO_SIM = 1
cdef int MODE_SYNTH = 0
cdef int MODE_SCRIPTED = 1
cdef int MODE_POLICY = 2

cdef int ACT_WAIT = 0
cdef int ACT_DISCARD = 1
cdef int ACT_PURIFY = 2
cdef int ACT_CONSUME = 3


cdef inline double _decohere(double F, double dt, double Tc):
    return 0.25 + (F - 0.25) * exp(-2.0 * dt / Tc)


cdef inline double _swap(double F1, double F2):
    return F1 * F2 + (1.0 - F1) * (1.0 - F2) / 3.0


cdef inline double _cutoff(double F, double floor, double Tc):
    return -(Tc * 0.5) * log((floor - 0.25) / (F - 0.25))


cdef double _tree(double* f, int lo, int hi):
    cdef int m = hi - lo
    cdef int mid
    cdef double L, R
    if m == 1:
        return f[lo]
    mid = lo + m // 2
    L = _tree(f, lo, mid)
    R = _tree(f, mid, hi)
    return L * R + (1.0 - L) * (1.0 - R) / 3.0


cdef class _Trial:
    cdef bitgen_t *rng
    cdef object bitgen_ref
    cdef int n, capacity, protocol, mode, step_cap, policy_stochastic, collect
    cdef double tc_ext, tc_int, f_gen, f0, f_mean, jitter, floor_link, floor_chain
    cdef double tau_min, T_sim
    cdef double[::1] taus, pgens, p_emit
    # link buffers
    cdef double[:, ::1] lF, lT, lC
    cdef long[::1] lsz
    # chain buffers
    cdef double[:, ::1] cF, cTsw, cTold, cCut, cDwell, cPush
    cdef long[::1] csz
    # agent state
    cdef double[::1] aF1, aF2, aT
    cdef long[::1] aOcc1, aOcc2, aTicks, steps
    # policy
    cdef double[::1] pol_params
    cdef long[::1] pol_sizes
    cdef int pol_nlayers
    cdef double[::1] work1, work2
    # aggregates
    cdef public long n_del
    cdef public double sum_F, sum_dwell, t_last
    cdef public list ev_F, ev_t, ev_age, ev_dwell

    def __init__(self, n, capacity, protocol, mode, tc_ext, tc_int, f_gen, f0,
                 f_mean, jitter, floor_link, floor_chain, T_sim, step_cap,
                 taus, pgens, interval_ticks, bitgen, policy_sizes, policy_params,
                 policy_stochastic, collect_events):
        self.n = n
        self.capacity = capacity
        self.protocol = protocol
        self.mode = mode
        self.tc_ext = tc_ext
        self.tc_int = tc_int
        self.f_gen = f_gen
        self.f0 = f0
        self.f_mean = f_mean
        self.jitter = jitter
        self.floor_link = floor_link
        self.floor_chain = floor_chain
        self.T_sim = T_sim
        self.step_cap = step_cap
        self.policy_stochastic = 1 if policy_stochastic else 0
        self.collect = 1 if collect_events else 0

        self.bitgen_ref = bitgen
        self.rng = <bitgen_t *> PyCapsule_GetPointer(bitgen.capsule, "BitGenerator")

        self.taus = np.ascontiguousarray(taus, dtype=np.float64)
        self.pgens = np.ascontiguousarray(pgens, dtype=np.float64)
        self.tau_min = min(taus)
        pe = np.empty(n, dtype=np.float64)
        for ell in range(n):
            pe[ell] = min(1.0, self.taus[ell] / (interval_ticks * self.taus[ell]))
        self.p_emit = pe

        cap = capacity
        self.lF = np.empty((n, cap)); self.lT = np.empty((n, cap)); self.lC = np.empty((n, cap))
        self.lsz = np.zeros(n, dtype=np.int64)
        m = max(n - 1, 1)
        self.cF = np.empty((m, cap)); self.cTsw = np.empty((m, cap)); self.cTold = np.empty((m, cap))
        self.cCut = np.empty((m, cap)); self.cDwell = np.empty((m, cap)); self.cPush = np.empty((m, cap))
        self.csz = np.zeros(m, dtype=np.int64)

        self.aF1 = np.zeros(n); self.aF2 = np.zeros(n); self.aT = np.zeros(n)
        self.aOcc1 = np.zeros(n, dtype=np.int64); self.aOcc2 = np.zeros(n, dtype=np.int64)
        self.aTicks = np.zeros(n, dtype=np.int64)
        self.steps = np.zeros(n, dtype=np.int64)

        if policy_sizes is not None:
            self.pol_sizes = np.ascontiguousarray(policy_sizes, dtype=np.int64)
            self.pol_params = np.ascontiguousarray(policy_params, dtype=np.float64)
            self.pol_nlayers = self.pol_sizes.shape[0]
            wmax = int(max(policy_sizes))
            self.work1 = np.empty(wmax); self.work2 = np.empty(wmax)
        else:
            self.pol_nlayers = 0

        self.n_del = 0
        self.sum_F = 0.0
        self.sum_dwell = 0.0
        self.t_last = 0.0
        self.ev_F = []; self.ev_t = []; self.ev_age = []; self.ev_dwell = []

    cdef inline double _draw(self):
        return self.rng.next_double(self.rng.state)

    # ---- buffers ----------------------------------------------------------

    cdef void _link_push(self, int ell, double F, double t_del):
        cdef double t_cut = _cutoff(F, self.floor_link, self.tc_ext)
        cdef long k, sz
        if t_cut <= 0.0:
            return
        sz = self.lsz[ell]
        if sz >= self.capacity:
            for k in range(1, sz):  # evict stalest: index 0 (pushes are time ordered)
                self.lF[ell, k - 1] = self.lF[ell, k]
                self.lT[ell, k - 1] = self.lT[ell, k]
                self.lC[ell, k - 1] = self.lC[ell, k]
            sz -= 1
        self.lF[ell, sz] = F
        self.lT[ell, sz] = t_del
        self.lC[ell, sz] = t_cut
        self.lsz[ell] = sz + 1

    cdef void _link_expire(self, int ell, double now):
        cdef long w = 0, r
        for r in range(self.lsz[ell]):
            if now - self.lT[ell, r] <= self.lC[ell, r]:
                if w != r:
                    self.lF[ell, w] = self.lF[ell, r]
                    self.lT[ell, w] = self.lT[ell, r]
                    self.lC[ell, w] = self.lC[ell, r]
                w += 1
        self.lsz[ell] = w

    cdef void _chain_push(self, int c, double F, double t_sw, double t_old,
                          double dwell, double now):
        cdef double t_cut = _cutoff(F, self.floor_chain, self.tc_ext)
        cdef long k, sz, worst
        if t_cut <= 0.0:
            return
        sz = self.csz[c]
        if sz >= self.capacity:
            worst = 0
            for k in range(1, sz):  # stalest: smallest t_old, ties smaller t_sw
                if (self.cTold[c, k] < self.cTold[c, worst]
                        or (self.cTold[c, k] == self.cTold[c, worst]
                            and self.cTsw[c, k] < self.cTsw[c, worst])):
                    worst = k
            for k in range(worst + 1, sz):
                self._chain_copy(c, k, k - 1)
            sz -= 1
        self.cF[c, sz] = F
        self.cTsw[c, sz] = t_sw
        self.cTold[c, sz] = t_old
        self.cCut[c, sz] = t_cut
        self.cDwell[c, sz] = dwell
        self.cPush[c, sz] = now
        self.csz[c] = sz + 1

    cdef inline void _chain_copy(self, int c, long src, long dst):
        self.cF[c, dst] = self.cF[c, src]
        self.cTsw[c, dst] = self.cTsw[c, src]
        self.cTold[c, dst] = self.cTold[c, src]
        self.cCut[c, dst] = self.cCut[c, src]
        self.cDwell[c, dst] = self.cDwell[c, src]
        self.cPush[c, dst] = self.cPush[c, src]

    cdef void _chain_expire(self, int c, double now):
        cdef long w = 0, r
        for r in range(self.csz[c]):
            if now - self.cTold[c, r] <= self.cCut[c, r]:
                if w != r:
                    self._chain_copy(c, r, w)
                w += 1
        self.csz[c] = w

    cdef long _chain_best(self, int c):
        # freshest: largest t_old; ties larger t_sw, then later insertion
        cdef long best = 0, k
        for k in range(1, self.csz[c]):
            if (self.cTold[c, k] > self.cTold[c, best]
                    or (self.cTold[c, k] == self.cTold[c, best]
                        and self.cTsw[c, k] >= self.cTsw[c, best])):
                best = k
        return best

    # ---- link-layer sources ------------------------------------------------

    cdef void _step_link(self, int ell, double t):
        """One link tick; pushes a delivery into the link buffer if emitted."""
        cdef double u, F
        if self.mode == MODE_SYNTH:
            u = self._draw()
            if u < self.p_emit[ell]:
                F = self.f_mean
                if self.jitter > 0.0:
                    F = F + self.jitter * (2.0 * self._draw() - 1.0)
                    F = F if F > 0.2500000001 else 0.2500000001
                    F = F if F < 1.0 else 1.0
                self._link_push(ell, F, t)
            return
        self._agent_tick(ell, t)

    cdef void _agent_tick(self, int ell, double t):
        cdef double tau = self.taus[ell]
        cdef int it, action, both, any_occ, can_consume
        cdef double best, F1, F2, u, succ, F_out, delivered_F
        cdef int delivered = 0
        for it in range(8):
            both = self.aOcc1[ell] and self.aOcc2[ell]
            any_occ = self.aOcc1[ell] or self.aOcc2[ell]
            best = -1.0
            if self.aOcc1[ell]:
                best = self.aF1[ell]
            if self.aOcc2[ell] and self.aF2[ell] > best:
                best = self.aF2[ell]
            can_consume = any_occ and best >= self.f0

            if self.mode == MODE_SCRIPTED:
                if can_consume:
                    action = ACT_CONSUME
                elif both:
                    action = ACT_PURIFY
                else:
                    action = ACT_WAIT
            else:
                action = self._policy_action(ell, both, can_consume)

            if action == ACT_WAIT:
                if self.aOcc1[ell]:
                    self.aF1[ell] = _decohere(self.aF1[ell], tau, self.tc_int)
                if self.aOcc2[ell]:
                    self.aF2[ell] = _decohere(self.aF2[ell], tau, self.tc_int)
                if (not self.aOcc1[ell]) or (not self.aOcc2[ell]):
                    u = self._draw()
                    if u < self.pgens[ell]:
                        if not self.aOcc1[ell]:
                            self.aF1[ell] = self.f_gen; self.aOcc1[ell] = 1
                        else:
                            self.aF2[ell] = self.f_gen; self.aOcc2[ell] = 1
                self._advance_episode(ell, tau)
                break
            elif action == ACT_PURIFY:
                F1 = _decohere(self.aF1[ell], tau, self.tc_int)
                F2 = _decohere(self.aF2[ell], tau, self.tc_int)
                succ = (F1 * F2 + F1 * (1.0 - F2) / 3.0 + (1.0 - F1) * F2 / 3.0
                        + 5.0 * (1.0 - F1) * (1.0 - F2) / 9.0)
                F_out = (F1 * F2 + (1.0 - F1) * (1.0 - F2) / 9.0) / succ
                u = self._draw()
                if u < succ:
                    self.aF1[ell] = F_out; self.aOcc1[ell] = 1; self.aOcc2[ell] = 0
                else:
                    self.aOcc1[ell] = 0; self.aOcc2[ell] = 0
                self._advance_episode(ell, tau)
                break
            elif action == ACT_DISCARD:
                if self.aF2[ell] <= self.aF1[ell]:
                    self.aOcc2[ell] = 0
                else:
                    self.aOcc1[ell] = 0
                continue
            else:  # CONSUME
                delivered = 1
                delivered_F = best
                self.aOcc1[ell] = 0; self.aOcc2[ell] = 0
                self.aT[ell] = 0.0; self.aTicks[ell] = 0
                continue
        if delivered:
            self._link_push(ell, delivered_F, t)

    cdef inline void _advance_episode(self, int ell, double tau):
        self.aT[ell] = self.aT[ell] + tau
        self.aTicks[ell] = self.aTicks[ell] + 1
        if self.aTicks[ell] >= self.step_cap:  # episode ends with no delivery
            self.aOcc1[ell] = 0; self.aOcc2[ell] = 0
            self.aT[ell] = 0.0; self.aTicks[ell] = 0

    cdef int _policy_action(self, int ell, int both, int can_consume):
        cdef double tau = self.taus[ell]
        cdef double x[4]
        cdef int mask[4]
        cdef double probs[4]
        cdef int i, last_legal, best_i
        cdef double u, acc
        x[0] = self.aF1[ell] if self.aOcc1[ell] else 0.0
        x[1] = self.aF2[ell] if self.aOcc2[ell] else 0.0
        x[2] = 1.0
        x[3] = self.aT[ell] / (50.0 * tau)
        mask[0] = 1; mask[1] = both; mask[2] = both; mask[3] = can_consume
        self._forward(x, mask, probs)
        if self.policy_stochastic:
            u = self._draw()
            acc = 0.0
            last_legal = 0
            for i in range(4):
                if probs[i] > 0.0:
                    last_legal = i
                acc += probs[i]
                if u < acc:
                    return i
            return last_legal
        best_i = 0
        for i in range(1, 4):
            if probs[i] > probs[best_i]:
                best_i = i
        return best_i

    cdef void _forward(self, double* obs, int* mask, double* out_probs):
        cdef double[::1] p = self.pol_params
        cdef long[::1] sizes = self.pol_sizes
        cdef double* x
        cdef double* out
        cdef double acc, hi, total
        cdef long off = 0, layer, n_in, n_out, i, j, row
        cdef double xbuf[4]
        for i in range(4):
            xbuf[i] = obs[i]
        x = xbuf
        out = &self.work1[0]
        for layer in range(self.pol_nlayers - 1):
            n_in = sizes[layer]; n_out = sizes[layer + 1]
            for j in range(n_out):
                acc = 0.0
                row = off + j * n_in
                for i in range(n_in):
                    acc += p[row + i] * x[i]
                out[j] = acc
            off += n_in * n_out
            for j in range(n_out):
                out[j] += p[off + j]
            off += n_out
            if layer < self.pol_nlayers - 2:
                for j in range(n_out):
                    if out[j] < 0.0:
                        out[j] = 0.0
            x = out
            out = &self.work2[0] if x == &self.work1[0] else &self.work1[0]
        # masked softmax over the 4 logits now in x
        hi = -INFINITY
        for i in range(4):
            if mask[i] and x[i] > hi:
                hi = x[i]
        total = 0.0
        for i in range(4):
            if mask[i]:
                out_probs[i] = exp(x[i] - hi)
                total += out_probs[i]
            else:
                out_probs[i] = 0.0
        for i in range(4):
            out_probs[i] = out_probs[i] / total

    # ---- controllers -------------------------------------------------------

    cdef inline void _emit(self, double F, double t, double age, double dwell):
        self.n_del += 1
        self.sum_F += F
        self.sum_dwell += dwell
        self.t_last = t
        if self.collect:
            self.ev_F.append(F)
            self.ev_t.append(t)
            self.ev_age.append(age)
            self.ev_dwell.append(dwell)

    cdef void _seq_step(self, double t):
        cdef int c, ell, cidx, bidx
        cdef long k, sz
        cdef double chF, tsw, told, tcut, dw
        cdef double pF, pT, pC
        cdef double F_ch, F_p, F_new, t_old_new
        for c in range(self.n - 1):
            self._chain_expire(c, t)
        for ell in range(2, self.n + 1):
            cidx = ell - 2
            bidx = ell - 1
            while self.csz[cidx] > 0 and self.lsz[bidx] > 0:
                k = self._chain_best(cidx)
                chF = self.cF[cidx, k]; tsw = self.cTsw[cidx, k]
                told = self.cTold[cidx, k]; tcut = self.cCut[cidx, k]
                dw = self.cDwell[cidx, k] + (t - self.cPush[cidx, k])
                sz = self.csz[cidx]
                for k in range(k + 1, sz):
                    self._chain_copy(cidx, k, k - 1)
                self.csz[cidx] = sz - 1
                if t - told > tcut:
                    continue  # chain expired
                sz = self.lsz[bidx] - 1
                pF = self.lF[bidx, sz]; pT = self.lT[bidx, sz]; pC = self.lC[bidx, sz]
                self.lsz[bidx] = sz
                if t - pT > pC:
                    self._chain_repush(cidx, chF, tsw, told, tcut, dw, t)
                    continue
                F_ch = _decohere(chF, t - tsw, self.tc_ext)
                F_p = _decohere(pF, t - pT, self.tc_ext)
                F_new = _swap(F_ch, F_p)
                t_old_new = told if told <= pT else pT
                if ell == self.n:
                    self._emit(F_new, t, t - t_old_new, dw)
                else:
                    self._chain_push(ell - 1, F_new, t, t_old_new, dw, t)
        # seed C_1 from non-expired link-1 pairs
        while self.lsz[0] > 0:
            sz = self.lsz[0] - 1
            pF = self.lF[0, sz]; pT = self.lT[0, sz]; pC = self.lC[0, sz]
            self.lsz[0] = sz
            if t - pT <= pC:
                self._chain_push(0, pF, pT, pT, 0.0, t)

    cdef void _chain_repush(self, int c, double F, double t_sw, double t_old,
                            double t_cut, double dwell, double now):
        cdef long sz = self.csz[c]
        self.cF[c, sz] = F
        self.cTsw[c, sz] = t_sw
        self.cTold[c, sz] = t_old
        self.cCut[c, sz] = t_cut
        self.cDwell[c, sz] = dwell
        self.cPush[c, sz] = now
        self.csz[c] = sz + 1

    cdef void _sim_step(self, double t):
        cdef int ell
        cdef long sz
        cdef double pF, pT, pC, tmin, F
        cdef double fids[64]
        cdef double tds[64]
        cdef int found
        for ell in range(self.n):
            if self.lsz[ell] == 0:
                return
        for ell in range(self.n):
            found = 0
            while self.lsz[ell] > 0:
                sz = self.lsz[ell] - 1
                pF = self.lF[ell, sz]; pT = self.lT[ell, sz]; pC = self.lC[ell, sz]
                self.lsz[ell] = sz
                if t - pT > pC:
                    continue  # expired entry discarded
                found = 1
                break
            if not found:
                return  # buffer drained; abort, earlier pops stand
            fids[ell] = _decohere(pF, t - pT, self.tc_ext)
            tds[ell] = pT
        F = _tree(fids, 0, self.n)
        tmin = tds[0]
        for ell in range(1, self.n):
            if tds[ell] < tmin:
                tmin = tds[ell]
        self._emit(F, t, t - tmin, 0.0)

    cdef void _single_link_step(self, double t):
        cdef long sz
        cdef double pF, pT, pC
        while self.lsz[0] > 0:
            sz = self.lsz[0] - 1
            pF = self.lF[0, sz]; pT = self.lT[0, sz]; pC = self.lC[0, sz]
            self.lsz[0] = sz
            if t - pT > pC:
                continue
            self._emit(_decohere(pF, t - pT, self.tc_ext), t, t - pT, 0.0)
            return

    # ---- main loop ----------------------------------------------------------

    cpdef run(self):
        cdef long i = 1
        cdef double t
        cdef int ell
        while True:
            t = i * self.tau_min
            if t >= self.T_sim:
                break
            for ell in range(self.n):
                if t >= (self.steps[ell] + 1) * self.taus[ell]:
                    self._step_link(ell, t)
                    self.steps[ell] += 1
            for ell in range(self.n):
                self._link_expire(ell, t)
            if self.n == 1:
                self._single_link_step(t)
            elif self.protocol == PROTO_SEQ:
                self._seq_step(t)
            else:
                self._sim_step(t)
            i += 1


def simulate_trial(lengths, tc_ext, f_min, capacity, protocol, mode, T_sim, bitgen,
                   taus, pgens, floor_link, floor_chain, f_mean=0.9575,
                   interval_ticks=7.36, jitter=0.0, tc_int=1.0, f_gen=0.92, f0=0.94,
                   step_cap=200, policy_sizes=None, policy_params=None,
                   policy_stochastic=True, collect_events=False):
    """Compiled counterpart of ``protocols.simulate_trial`` (same contract)."""
    n = len(lengths)
    if n > 64:
        raise ValueError("compiled engine supports at most 64 links")
    proto = {"sequential": PROTO_SEQ, "simultaneous": PROTO_SIM}[protocol]
    mcode = {"synthetic": MODE_SYNTH, "scripted": MODE_SCRIPTED, "policy": MODE_POLICY}[mode]
    if mcode == MODE_POLICY and policy_sizes is None:
        raise ValueError("policy mode needs weights")
    trial = _Trial(n, capacity, proto, mcode, tc_ext, tc_int, f_gen, f0,
                   f_mean, jitter, floor_link, floor_chain, T_sim, step_cap,
                   np.asarray(taus, dtype=np.float64),
                   np.asarray(pgens, dtype=np.float64),
                   interval_ticks, bitgen, policy_sizes, policy_params,
                   policy_stochastic, collect_events)
    trial.run()
    arrays = None
    if collect_events:
        arrays = (
            np.array(trial.ev_F, dtype=np.float64),
            np.array(trial.ev_t, dtype=np.float64),
            np.array(trial.ev_age, dtype=np.float64),
            np.array(trial.ev_dwell, dtype=np.float64),
        )
    return trial.n_del, trial.sum_F, trial.t_last, trial.sum_dwell, arrays
