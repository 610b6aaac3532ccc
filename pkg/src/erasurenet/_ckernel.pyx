# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled simulation kernels.

Mirrors ``_pysim`` step for step (same draw order, same buffer layout,
same swap-remove), reading doubles straight from the numpy bit generator.
"""

import numpy as np

from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport log
from libc.stdint cimport int64_t
from numpy.random cimport bitgen_t

cdef str EV_ARRIVAL = "arrival"
cdef str EV_TRANSMIT = "transmit"
cdef str EV_DELIVER = "deliver"


cdef class _Engine:
    cdef object gen
    cdef bitgen_t* rng
    cdef int n
    cdef bint correlated
    cdef const int64_t[:] cand_ptr
    cdef const int64_t[:] cand_node
    cdef const double[:] cand_mu
    cdef const int64_t[:] out_ptr
    cdef const double[:] out_cdf
    cdef const int64_t[:] out_relays
    cdef const int64_t[:] out_dest

    cdef Py_ssize_t cap
    cdef object items_arr
    cdef object pos_arr
    cdef object holders_arr
    cdef int64_t[:, :] items
    cdef int64_t[:, :] pos
    cdef int64_t[:] holders
    cdef int64_t[:] qlen
    cdef object state_arr
    cdef int64_t[:] state
    cdef bint track

    cdef int64_t next_id
    cdef int64_t arrivals
    cdef int64_t delivered
    cdef double clock
    cdef list delivery_times
    cdef list log
    cdef bint record

    # pending slot outcomes
    cdef int64_t[:] o_pid
    cdef int64_t[:] o_relays
    cdef int64_t[:] o_dest
    cdef int64_t[:] flush_list

    def __init__(self, net, gen, bint record_events, bint track_state):
        self.gen = gen
        capsule = gen.bit_generator.capsule
        self.rng = <bitgen_t*> PyCapsule_GetPointer(capsule, "BitGenerator")
        self.n = net.n
        self.correlated = net.correlated
        self.cand_ptr = net.cand_ptr
        self.cand_node = net.cand_node
        self.cand_mu = net.cand_mu
        self.out_ptr = net.out_ptr
        self.out_cdf = net.out_cdf
        self.out_relays = net.out_relays
        self.out_dest = net.out_dest

        self.cap = 0
        self._grow(1024)
        self.qlen = np.zeros(self.n + 1, dtype=np.int64)
        self.track = track_state
        self.state_arr = np.zeros((1 << self.n) if track_state else 1, dtype=np.int64)
        self.state = self.state_arr
        self.next_id = 0
        self.arrivals = 0
        self.delivered = 0
        self.clock = 0.0
        self.delivery_times = []
        self.record = record_events
        self.log = [] if record_events else None
        self.o_pid = np.zeros(self.n + 1, dtype=np.int64)
        self.o_relays = np.zeros(self.n + 1, dtype=np.int64)
        self.o_dest = np.zeros(self.n + 1, dtype=np.int64)
        self.flush_list = np.zeros(self.n + 1, dtype=np.int64)

    cdef void _grow(self, Py_ssize_t new_cap):
        cdef Py_ssize_t old = self.cap
        items = np.zeros((self.n + 1, new_cap), dtype=np.int64)
        pos = np.full((self.n + 1, new_cap), -1, dtype=np.int64)
        holders = np.full(new_cap, -1, dtype=np.int64)
        if old:
            items[:, :old] = self.items_arr
            pos[:, :old] = self.pos_arr
            holders[:old] = self.holders_arr
        self.items_arr = items
        self.pos_arr = pos
        self.holders_arr = holders
        self.items = items
        self.pos = pos
        self.holders = holders
        self.cap = new_cap

    cdef inline double uniform(self):
        return self.rng.next_double(self.rng.state)

    cdef inline void buf_add(self, int node, int64_t pid):
        cdef int64_t k = self.qlen[node]
        self.items[node, k] = pid
        self.pos[node, pid] = k
        self.qlen[node] = k + 1

    cdef inline void buf_discard(self, int node, int64_t pid):
        cdef int64_t k = self.pos[node, pid]
        cdef int64_t last_k = self.qlen[node] - 1
        cdef int64_t last = self.items[node, last_k]
        self.pos[node, pid] = -1
        self.qlen[node] = last_k
        if k < last_k:
            self.items[node, k] = last
            self.pos[node, last] = k

    cdef void arrival(self):
        cdef int64_t pid = self.next_id
        if pid >= self.cap:
            self._grow(2 * self.cap)
        self.next_id += 1
        self.buf_add(0, pid)
        self.holders[pid] = 0
        if self.track:
            self.state[0] += 1
        self.arrivals += 1
        if self.record:
            self.log.append((self.clock, EV_ARRIVAL, pid, -1, 0, False))

    cdef int64_t draw_receivers(self, int node, int64_t* dest):
        cdef double x, mu
        cdef Py_ssize_t k, lo, hi
        cdef int64_t relays = 0
        cdef int64_t j
        cdef int d = self.n + 1
        dest[0] = 0
        if self.correlated:
            x = self.uniform()
            lo = self.out_ptr[node]
            hi = self.out_ptr[node + 1]
            if lo == hi:
                return 0
            k = lo
            while k < hi - 1 and x >= self.out_cdf[k]:
                k += 1
            dest[0] = self.out_dest[k]
            return self.out_relays[k]
        for k in range(self.cand_ptr[node], self.cand_ptr[node + 1]):
            mu = self.cand_mu[k]
            if mu >= 1.0 or self.uniform() < mu:
                j = self.cand_node[k]
                if j == d:
                    dest[0] = 1
                else:
                    relays |= (<int64_t> 1) << (j - 1)
        return relays

    cdef bint draw_transmission(self, int node, int64_t* pid, int64_t* relays, int64_t* dest):
        cdef int64_t size = self.qlen[node]
        cdef int64_t k
        if size == 0:
            return False
        k = <int64_t> (self.uniform() * size)
        if k >= size:
            k = size - 1
        pid[0] = self.items[node, k]
        relays[0] = self.draw_receivers(node, dest)
        if self.record:
            self.log.append((self.clock, EV_TRANSMIT, pid[0], node, relays[0], dest[0] != 0))
        return True

    cdef void deliver_to_relays(self, int64_t pid, int64_t relays):
        cdef int64_t old = self.holders[pid]
        cdef int64_t gained = relays & ~old
        cdef int64_t g = gained
        cdef int r = 1
        if gained == 0:
            return
        while g:
            if g & 1:
                self.buf_add(r, pid)
            g >>= 1
            r += 1
        self.holders[pid] = old | gained
        if self.track:
            self.state[old] -= 1
            self.state[old | gained] += 1

    cdef void ack_flush(self, int64_t pid):
        cdef int64_t mask = self.holders[pid]
        cdef int64_t g = mask
        cdef int r = 1
        if mask < 0:
            raise AssertionError(f"packet {pid} already flushed")
        self.holders[pid] = -1
        self.buf_discard(0, pid)
        while g:
            if g & 1:
                self.buf_discard(r, pid)
            g >>= 1
            r += 1
        if self.track:
            self.state[mask] -= 1
        self.delivered += 1
        self.delivery_times.append(self.clock)
        if self.record:
            self.log.append((self.clock, EV_DELIVER, pid, -1, 0, False))

    cdef void slot(self, double lam):
        cdef int node, k, f
        cdef int no = 0
        cdef int nflush = 0
        cdef int64_t pid, relays, dest
        cdef bint seen
        if self.uniform() < lam:
            self.arrival()
        for node in range(self.n + 1):
            if self.draw_transmission(node, &pid, &relays, &dest):
                self.o_pid[no] = pid
                self.o_relays[no] = relays
                self.o_dest[no] = dest
                no += 1
        for k in range(no):
            if self.o_dest[k]:
                seen = False
                for f in range(nflush):
                    if self.flush_list[f] == self.o_pid[k]:
                        seen = True
                        break
                if not seen:
                    self.flush_list[nflush] = self.o_pid[k]
                    nflush += 1
        for k in range(no):
            if self.o_relays[k] == 0:
                continue
            seen = False
            for f in range(nflush):
                if self.flush_list[f] == self.o_pid[k]:
                    seen = True
                    break
            if not seen:
                self.deliver_to_relays(self.o_pid[k], self.o_relays[k])
        for f in range(nflush):
            self.ack_flush(self.flush_list[f])

    cdef void transmit_event(self, int node):
        cdef int64_t pid, relays, dest
        if not self.draw_transmission(node, &pid, &relays, &dest):
            return
        if dest:
            self.ack_flush(pid)
        else:
            self.deliver_to_relays(pid, relays)

    def result(self, times, queues, integral, double end_time, int64_t n_events):
        return {
            "times": times,
            "queues": queues,
            "queue_integral": integral,
            "end_time": end_time,
            "events": int(n_events),
            "arrivals": int(self.arrivals),
            "delivered": int(self.delivered),
            "delivery_times": np.asarray(self.delivery_times, dtype=np.float64),
            "state": np.array(self.state_arr) if self.track else None,
            "buffers": [[int(self.items[k, i]) for i in range(self.qlen[k])] for k in range(self.n + 1)],
            "log": self.log,
        }


def simulate_slotted(net, double lam, Py_ssize_t slots, gen, bint record_events=False,
                     on_event=None):
    if on_event is not None:
        raise ValueError("per-event hooks need the Python engine")
    cdef _Engine eng = _Engine(net, gen, record_events, net.n <= 20)
    cdef int n = net.n
    queues_arr = np.zeros((slots, n + 1), dtype=np.int64)
    integral_arr = np.zeros(n + 1, dtype=np.float64)
    cdef int64_t[:, :] queues = queues_arr
    cdef double[:] integral = integral_arr
    cdef Py_ssize_t t
    cdef int k
    for t in range(slots):
        eng.clock = <double> (t + 1)
        eng.slot(lam)
        for k in range(n + 1):
            queues[t, k] = eng.qlen[k]
            integral[k] += <double> eng.qlen[k]
    times = np.arange(1, slots + 1, dtype=np.float64)
    return eng.result(times, queues_arr, integral_arr, <double> slots, slots)


def simulate_async(net, double lam, double horizon, double grid, gen, int64_t max_events=0,
                   bint record_events=False, on_event=None):
    if on_event is not None:
        raise ValueError("per-event hooks need the Python engine")
    cdef _Engine eng = _Engine(net, gen, record_events, net.n <= 20)
    cdef int n = net.n
    cdef double total = lam + (n + 1)
    # grows on demand: an event-capped run may stop far short of the horizon
    cdef double full = horizon / grid + 2
    cdef Py_ssize_t rows = <Py_ssize_t> full if full < 4096 else 4096
    times_arr = np.zeros(rows, dtype=np.float64)
    queues_arr = np.zeros((rows, n + 1), dtype=np.int64)
    integral_arr = np.zeros(n + 1, dtype=np.float64)
    cdef double[:] times = times_arr
    cdef int64_t[:, :] queues = queues_arr
    cdef double[:] integral = integral_arr
    cdef Py_ssize_t rec = 0
    cdef int64_t k_next = 1
    cdef double t = 0.0
    cdef double t_new, t_stop, x
    cdef int64_t n_events = 0
    cdef int k, node
    while not (max_events and n_events >= max_events):
        t_new = t - log(1.0 - eng.uniform()) / total
        t_stop = horizon if t_new > horizon else t_new
        while k_next * grid <= t_stop:
            if rec == rows:
                rows *= 2
                times_arr = np.resize(times_arr, rows)
                queues_arr = np.resize(queues_arr, (rows, n + 1))
                times = times_arr
                queues = queues_arr
            times[rec] = k_next * grid
            for k in range(n + 1):
                queues[rec, k] = eng.qlen[k]
            rec += 1
            k_next += 1
        if t_new > horizon:
            for k in range(n + 1):
                integral[k] += (horizon - t) * eng.qlen[k]
            t = horizon
            break
        for k in range(n + 1):
            integral[k] += (t_new - t) * eng.qlen[k]
        t = t_new
        eng.clock = t
        x = eng.uniform() * total
        if x < lam:
            eng.arrival()
        else:
            node = <int> (x - lam)
            if node > n:
                node = n
            eng.transmit_event(node)
        n_events += 1
    return eng.result(times_arr[:rec].copy(), queues_arr[:rec].copy(), integral_arr, t, n_events)
