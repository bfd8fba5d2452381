"""Brute-force reference for the scheduling rules, written with plain loops and no numpy.

Rules reproduced:
  * candidates: every (subframe, start) in the selection window, canonical order;
  * (i) a candidate is dropped if its subframe is an RRI-multiple after any
    subframe the vehicle itself transmitted in during the sensing window;
  * (ii) a candidate is dropped if some decoded entry, RRI-periodic with it,
    shares a subchannel and has RSRP above the threshold; the threshold rises
    by the step until at least ceil(M/5) candidates survive;
  * set B: the ceil(M/5) survivors with lowest mean linear RSSI over the
    candidate's earlier periodic occurrences inside the sensing window.
    A cell's RSSI is the largest RSSI of any entry covering it, the noise
    floor if nothing covers it or the vehicle was transmitting.
"""
import math


class OracleError(Exception):
    pass


def _db_to_mw(x):
    return 10.0 ** (x / 10.0)


def brute_force(entries, own_subframes, t, window_len, n_sub, length, rri, th0, step, noise_dbm, horizon=1000):
    """entries: list of (subframe, start, len, rsrp, rssi, decoded). Returns (A, B, threshold)."""
    lo = t - horizon
    window = range(t + 1, t + window_len + 1)
    cands = [(s, c) for s in window for c in range(n_sub - length + 1)]
    m = len(cands)
    need = math.ceil(m / 5)
    own = [o for o in own_subframes if lo <= o < t]
    visible = [e for e in entries if lo <= e[0] < t]

    def own_hit(s):
        return any((s - o) % rri == 0 for o in own)

    def overlaps(a0, alen, b0, blen):
        return a0 < b0 + blen and b0 < a0 + alen

    if sum(1 for s, _ in cands if not own_hit(s)) < need:
        raise OracleError("own transmissions exclude too much")

    th = th0
    k = 0
    while True:
        a = []
        for s, c in cands:
            if own_hit(s):
                continue
            blocked = False
            for (es, e0, elen, rsrp, _rssi, dec) in visible:
                if dec and rsrp > th and (s - es) % rri == 0 and overlaps(c, length, e0, elen):
                    blocked = True
                    break
            if not blocked:
                a.append((s, c))
        if len(a) >= need:
            break
        k += 1
        th = th0 + k * step

    noise = _db_to_mw(noise_dbm)

    def cell(o, ch):
        if o in own:
            return noise
        best = None
        for (es, e0, elen, _rsrp, rssi, _dec) in visible:
            if es == o and e0 <= ch < e0 + elen:
                v = _db_to_mw(rssi)
                best = v if best is None or v > best else best
        return noise if best is None else best

    def avg_db(s, c):
        total = 0.0
        n = 0
        o = s - rri
        while o >= lo:
            if o < t:
                for ch in range(c, c + length):
                    total += cell(o, ch)
                    n += 1
            o -= rri
        return 10 * math.log10(total / n if n else noise)

    ranked = sorted(a, key=lambda sc: (round(avg_db(*sc) / 1e-6), sc))
    b = sorted(ranked[:need])
    return a, b, th


# rbs_per_subchannel choices giving N = 1..5 subchannels at 10 MHz
RBS_FOR_N = {1: 50, 2: 25, 3: 16, 4: 12, 5: 10}


def random_instance(rng, max_window=20, max_n=5, max_entries=30):
    """A small random scheduling problem from a numpy Generator; returns plain values."""
    n_sub = int(rng.integers(1, max_n + 1))
    length = int(rng.integers(1, n_sub + 1))
    t = 5000
    window_len = int(rng.integers(1, max_window + 1))
    n_ent = int(rng.integers(0, max_entries + 1))
    entries = []
    for _ in range(n_ent):
        # bias towards subframes that project into the window so exclusions bite
        if rng.random() < 0.7:
            s = t + 1 + int(rng.integers(0, window_len)) - 100 * int(rng.integers(1, 11))
        else:
            s = int(rng.integers(t - 1000, t))
        e0 = int(rng.integers(0, n_sub))
        elen = int(rng.integers(1, n_sub - e0 + 1))
        rsrp = round(float(rng.uniform(-125, -60)), 1) if rng.random() < 0.5 else float(rng.uniform(-125, -60))
        rssi = float(rng.uniform(-110, -50))
        entries.append((s, e0, elen, rsrp, rssi, bool(rng.random() < 0.8)))
    n_own = int(rng.integers(0, 3))
    own = [t + 1 + int(rng.integers(0, max(window_len, 1))) - 100 * int(rng.integers(1, 11)) for _ in range(n_own)]
    return {"n_sub": n_sub, "length": length, "t": t, "window_len": window_len,
            "entries": entries, "own": own}


def solve_both(inst, rng_draws=None, n_draws=20):
    """Run the production scheduler and the oracle on one instance.

    Returns ((A, B, th) or "error", same for oracle, draws) where draws are
    ``n_draws`` CSRs picked by ``select_csr`` from the production set B.
    """
    from cv2x_emu.channel import subchannel_noise_dbm
    from cv2x_emu.grid import Csr, SelectionWindow, SimParams
    from cv2x_emu.phy import SensedEntry
    from cv2x_emu.sbsps import SchedulingError, SensingWindow, build_set_a, build_set_b, select_csr

    p = SimParams(rbs_per_subchannel=RBS_FOR_N[inst["n_sub"]], packet_subchannels=inst["length"])
    t = inst["t"]
    win = SensingWindow(0)
    for (s, e0, elen, rsrp, rssi, dec) in inst["entries"]:
        win.record_sensed(SensedEntry(s, Csr(s, e0, elen), rsrp, rssi, dec, 1))
    for o in inst["own"]:
        win.record_own_tx(o)
    window = SelectionWindow(t + 1, t + inst["window_len"])
    draws = []
    try:
        cands = build_set_a(win, window, p)
        build_set_b(cands, win, p)
        prod = ([(c.subframe, c.subchannel_start) for c in cands.set_a],
                [(c.subframe, c.subchannel_start) for c in cands.set_b], cands.threshold_db)
        if rng_draws is not None:
            draws = [select_csr(cands, rng_draws) for _ in range(n_draws)]
    except SchedulingError:
        prod = "error"
    try:
        ref = brute_force(inst["entries"], inst["own"], t, inst["window_len"], inst["n_sub"], inst["length"],
                          p.rri_ms, p.sps_threshold_dbm, p.threshold_step_db, subchannel_noise_dbm(p))
    except OracleError:
        ref = "error"
    return prod, ref, draws
