"""Array-based blossom kernel for minimum-weight perfect matching.

The algorithm is the classic Galil/Edmonds primal-dual blossom method in
the formulation popularized by van Rantwijk's reference implementation,
reworked here for dense complete graphs on flat arrays so the same source
runs either under numba's njit (default) or as plain Python
(IVDESIGN_NO_NUMBA=1).

The kernel maximizes total *profit*; the public wrapper feeds profit =
-cost and converts the duals back to the minimization form.  Node ids
0..n-1 are vertices, n..2n-1 are recyclable blossom slots.  Labels: 0
free, 1 S (outer), 2 T (inner), 5 breadcrumb during back-tracing.

Dual bookkeeping follows the doubled convention: ``dualvar[v]`` stores
2*u(v) so that slack(v, w) = dualvar[v] + dualvar[w] - 2*profit(v, w);
``blossomdual`` is in ordinary units.  Matched edges are kept tight to
within ``tol`` (in slack units).
"""

from __future__ import annotations

import numpy as np

from ._accel import jit_or_py

__all__ = ["solve_max_profit"]


def _kernel(profit, tol):  # noqa: C901 - one long function keeps the jit surface small
    nvert = profit.shape[0]
    nslots = 2 * nvert

    mate = np.full(nvert, -1, dtype=np.int64)
    label = np.zeros(nslots, dtype=np.int64)
    labeledge_v = np.full(nslots, -1, dtype=np.int64)
    labeledge_w = np.full(nslots, -1, dtype=np.int64)
    inblossom = np.arange(nvert, dtype=np.int64)
    parent = np.full(nslots, -1, dtype=np.int64)
    base = np.full(nslots, -1, dtype=np.int64)
    base[:nvert] = np.arange(nvert, dtype=np.int64)
    bestedge_v = np.full(nslots, -1, dtype=np.int64)
    bestedge_w = np.full(nslots, -1, dtype=np.int64)
    dualvar = np.zeros(nvert, dtype=np.float64)
    blossomdual = np.zeros(nslots, dtype=np.float64)
    allow = np.zeros((nvert, nvert), dtype=np.uint8)

    width = nvert + 2
    childs = np.zeros((nvert, width), dtype=np.int64)
    childs_n = np.zeros(nvert, dtype=np.int64)
    edges_v = np.zeros((nvert, width), dtype=np.int64)
    edges_w = np.zeros((nvert, width), dtype=np.int64)

    unused = np.empty(nvert, dtype=np.int64)
    for k in range(nvert):
        unused[k] = nslots - 1 - k  # pop order: n, n+1, ...
    utop_arr = np.array([nvert], dtype=np.int64)

    qcap = 8 * nvert + 64
    queue = np.empty(qcap, dtype=np.int64)
    qn_arr = np.zeros(1, dtype=np.int64)

    leafbuf = np.empty(nvert, dtype=np.int64)
    walkbuf = np.empty(nslots + 2, dtype=np.int64)
    pathbuf = np.empty(nslots, dtype=np.int64)
    tmp_child = np.empty(width, dtype=np.int64)
    tmp_ev = np.empty(width, dtype=np.int64)
    tmp_ew = np.empty(width, dtype=np.int64)
    rot_buf = np.empty(width, dtype=np.int64)
    task_b = np.empty(nslots, dtype=np.int64)
    task_v = np.empty(nslots, dtype=np.int64)
    exp_stack = np.empty(nslots, dtype=np.int64)

    def slack(v, w):
        return dualvar[v] + dualvar[w] - 2.0 * profit[v, w]

    def queue_push(v):
        qn = qn_arr[0]
        assert qn < qcap
        queue[qn] = v
        qn_arr[0] = qn + 1

    def blossom_leaves(b, buf):
        if b < nvert:
            buf[0] = b
            return 1
        cnt = 0
        sp = 0
        walkbuf[sp] = b
        sp += 1
        while sp > 0:
            sp -= 1
            t = walkbuf[sp]
            if t < nvert:
                buf[cnt] = t
                cnt += 1
            else:
                row = t - nvert
                for k in range(childs_n[row]):
                    walkbuf[sp] = childs[row, k]
                    sp += 1
        return cnt

    def assign_label(w0, t0, v0):
        w = w0
        t = t0
        v = v0
        while True:
            b = inblossom[w]
            assert label[w] == 0 and label[b] == 0
            label[w] = t
            label[b] = t
            labeledge_v[w] = v
            labeledge_w[w] = w if v >= 0 else -1
            labeledge_v[b] = v
            labeledge_w[b] = w if v >= 0 else -1
            bestedge_v[w] = -1
            bestedge_w[w] = -1
            bestedge_v[b] = -1
            bestedge_w[b] = -1
            if t == 1:
                cnt = blossom_leaves(b, leafbuf)
                for k in range(cnt):
                    queue_push(leafbuf[k])
                break
            # T-label: the base's mate becomes S.
            bs = base[b]
            w = mate[bs]
            t = 1
            v = bs

    def scan_blossom(v0, w0):
        # Trace back from both endpoints; 5-labels are breadcrumbs.
        pcnt = 0
        found = -1
        v = v0
        w = w0
        while v >= 0:
            b = inblossom[v]
            if label[b] & 4:
                found = base[b]
                break
            assert label[b] == 1
            pathbuf[pcnt] = b
            pcnt += 1
            label[b] = 5
            if labeledge_v[b] < 0:
                assert mate[base[b]] < 0
                v = -1
            else:
                assert labeledge_v[b] == mate[base[b]]
                v = labeledge_v[b]
                b2 = inblossom[v]
                assert label[b2] == 2
                v = labeledge_v[b2]
            if w >= 0:
                tmp = v
                v = w
                w = tmp
        for k in range(pcnt):
            label[pathbuf[k]] = 1
        return found

    def add_blossom(bse, v, w):
        bb = inblossom[bse]
        bv = inblossom[v]
        bw = inblossom[w]
        # Allocate a slot.
        utop = utop_arr[0]
        assert utop > 0
        b = unused[utop - 1]
        utop_arr[0] = utop - 1
        row = b - nvert
        base[b] = bse
        parent[b] = -1
        parent[bb] = b
        # Walk v's side up to the base, recording childs and labeledges.
        cnt = 0
        vv = v
        while bv != bb:
            parent[bv] = b
            tmp_child[cnt] = bv
            tmp_ev[cnt] = labeledge_v[bv]
            tmp_ew[cnt] = labeledge_w[bv]
            cnt += 1
            assert label[bv] == 2 or (label[bv] == 1 and labeledge_v[bv] == mate[base[bv]])
            vv = labeledge_v[bv]
            bv = inblossom[vv]
        tmp_child[cnt] = bb
        cnt += 1
        # childs = [bb, reversed v-side]; edges = [reversed v-side labeledges, (v, w)].
        for k in range(cnt):
            childs[row, k] = tmp_child[cnt - 1 - k]
        for k in range(cnt - 1):
            edges_v[row, k] = tmp_ev[cnt - 2 - k]
            edges_w[row, k] = tmp_ew[cnt - 2 - k]
        edges_v[row, cnt - 1] = v
        edges_w[row, cnt - 1] = w
        ccnt = cnt
        # Walk w's side, appending with flipped labeledges.
        ww = w
        while bw != bb:
            parent[bw] = b
            childs[row, ccnt] = bw
            edges_v[row, ccnt] = labeledge_w[bw]
            edges_w[row, ccnt] = labeledge_v[bw]
            ccnt += 1
            assert label[bw] == 2 or (label[bw] == 1 and labeledge_v[bw] == mate[base[bw]])
            ww = labeledge_v[bw]
            bw = inblossom[ww]
        childs_n[row] = ccnt
        assert label[bb] == 1
        label[b] = 1
        labeledge_v[b] = labeledge_v[bb]
        labeledge_w[b] = labeledge_w[bb]
        blossomdual[b] = 0.0
        # Former T-vertices become S; relink every leaf to b.
        cntl = blossom_leaves(b, leafbuf)
        for k in range(cntl):
            lv = leafbuf[k]
            if label[inblossom[lv]] == 2:
                queue_push(lv)
            inblossom[lv] = b
        # Recompute the least-slack edge to another S-blossom from scratch.
        for k in range(ccnt):
            ch = childs[row, k]
            bestedge_v[ch] = -1
            bestedge_w[ch] = -1
        best_s = 0.0
        best_i = -1
        best_j = -1
        for k in range(cntl):
            lv = leafbuf[k]
            for u in range(nvert):
                if inblossom[u] != b and label[inblossom[u]] == 1:
                    s = slack(lv, u)
                    if best_i == -1 or s < best_s:
                        best_s = s
                        best_i = lv
                        best_j = u
        bestedge_v[b] = best_i
        bestedge_w[b] = best_j

    def expand_blossom(b0, endstage):
        sp = 0
        exp_stack[sp] = b0
        sp += 1
        while sp > 0:
            sp -= 1
            b = exp_stack[sp]
            row = b - nvert
            blen = childs_n[row]
            # Children become top-level.
            for k in range(blen):
                s = childs[row, k]
                parent[s] = -1
                if s < nvert:
                    inblossom[s] = s
                elif endstage and blossomdual[s] <= tol:
                    exp_stack[sp] = s
                    sp += 1
                else:
                    cntl = blossom_leaves(s, leafbuf)
                    for q in range(cntl):
                        inblossom[leafbuf[q]] = s
            if (not endstage) and label[b] == 2:
                # Relabel along the alternating path from the entry child to
                # the base, then mark reachable off-path children as T.
                entrychild = inblossom[labeledge_w[b]]
                j = 0
                for k in range(blen):
                    if childs[row, k] == entrychild:
                        j = k
                        break
                if j & 1:
                    j -= blen
                    jstep = 1
                else:
                    jstep = -1
                v = labeledge_v[b]
                w = labeledge_w[b]
                while j != 0:
                    if jstep == 1:
                        idx = j if j >= 0 else j + blen
                        p = edges_v[row, idx]
                        q = edges_w[row, idx]
                    else:
                        idx = (j - 1) if (j - 1) >= 0 else (j - 1) + blen
                        p = edges_w[row, idx]
                        q = edges_v[row, idx]
                    label[w] = 0
                    label[q] = 0
                    assign_label(w, 2, v)
                    allow[p, q] = 1
                    allow[q, p] = 1
                    j += jstep
                    if jstep == 1:
                        idx = j if j >= 0 else j + blen
                        v = edges_v[row, idx]
                        w = edges_w[row, idx]
                    else:
                        idx = (j - 1) if (j - 1) >= 0 else (j - 1) + blen
                        w = edges_v[row, idx]
                        v = edges_w[row, idx]
                    allow[v, w] = 1
                    allow[w, v] = 1
                    j += jstep
                bw = childs[row, 0]
                label[w] = 2
                label[bw] = 2
                labeledge_v[w] = v
                labeledge_w[w] = w
                labeledge_v[bw] = v
                labeledge_w[bw] = w
                bestedge_v[bw] = -1
                bestedge_w[bw] = -1
                j += jstep
                idx = j % blen
                if idx < 0:
                    idx += blen
                while childs[row, idx] != entrychild:
                    bv2 = childs[row, idx]
                    if label[bv2] == 1:
                        j += jstep
                        idx = j % blen
                        if idx < 0:
                            idx += blen
                        continue
                    vv = -1
                    if bv2 >= nvert:
                        cntl = blossom_leaves(bv2, leafbuf)
                        for q in range(cntl):
                            if label[leafbuf[q]] != 0:
                                vv = leafbuf[q]
                                break
                    else:
                        vv = bv2
                    if vv >= 0 and label[vv] != 0:
                        assert label[vv] == 2
                        assert inblossom[vv] == bv2
                        label[vv] = 0
                        label[mate[base[bv2]]] = 0
                        assign_label(vv, 2, labeledge_v[vv])
                    j += jstep
                    idx = j % blen
                    if idx < 0:
                        idx += blen
            # Free the slot.
            label[b] = 0
            labeledge_v[b] = -1
            labeledge_w[b] = -1
            bestedge_v[b] = -1
            bestedge_w[b] = -1
            parent[b] = -1
            base[b] = -1
            blossomdual[b] = 0.0
            childs_n[row] = 0
            utop = utop_arr[0]
            unused[utop] = b
            utop_arr[0] = utop + 1

    def augment_blossom(b0, v0):
        # Parent-level ring matching commutes with the child augmentations
        # (connecting endpoints become child bases and stay internally
        # unmatched), so a simple LIFO task stack is enough.
        tp = 0
        task_b[tp] = b0
        task_v[tp] = v0
        tp += 1
        while tp > 0:
            tp -= 1
            tb = task_b[tp]
            tv = task_v[tp]
            row = tb - nvert
            blen = childs_n[row]
            t = tv
            while parent[t] != tb:
                t = parent[t]
            if t >= nvert:
                task_b[tp] = t
                task_v[tp] = tv
                tp += 1
            i = 0
            for k in range(blen):
                if childs[row, k] == t:
                    i = k
                    break
            j = i
            if i & 1:
                j -= blen
                jstep = 1
            else:
                jstep = -1
            while j != 0:
                j += jstep
                idx = j if j >= 0 else j + blen
                t2 = childs[row, idx]
                if jstep == 1:
                    eidx = idx
                    w2 = edges_v[row, eidx]
                    x2 = edges_w[row, eidx]
                else:
                    eidx = (j - 1) if (j - 1) >= 0 else (j - 1) + blen
                    w2 = edges_w[row, eidx]
                    x2 = edges_v[row, eidx]
                if t2 >= nvert:
                    task_b[tp] = t2
                    task_v[tp] = w2
                    tp += 1
                j += jstep
                idx = j if j >= 0 else j + blen
                t3 = childs[row, idx]
                if t3 >= nvert:
                    task_b[tp] = t3
                    task_v[tp] = x2
                    tp += 1
                mate[w2] = x2
                mate[x2] = w2
            # Rotate so the entry child becomes the base.
            if i > 0:
                for k in range(blen):
                    rot_buf[k] = childs[row, (k + i) % blen]
                for k in range(blen):
                    childs[row, k] = rot_buf[k]
                for k in range(blen):
                    rot_buf[k] = edges_v[row, (k + i) % blen]
                for k in range(blen):
                    edges_v[row, k] = rot_buf[k]
                for k in range(blen):
                    rot_buf[k] = edges_w[row, (k + i) % blen]
                for k in range(blen):
                    edges_w[row, k] = rot_buf[k]
            # The deferred child task re-bases the entry child at tv, so the
            # parent's base is tv (reading the child's base here would be
            # stale under the LIFO ordering).
            base[tb] = tv

    def augment_matching(v0, w0):
        for half in range(2):
            if half == 0:
                s = v0
                j = w0
            else:
                s = w0
                j = v0
            while True:
                bs = inblossom[s]
                assert label[bs] == 1
                assert (labeledge_v[bs] == -1 and mate[base[bs]] == -1) or (
                    labeledge_v[bs] == mate[base[bs]])
                if bs >= nvert:
                    augment_blossom(bs, s)
                mate[s] = j
                if labeledge_v[bs] == -1:
                    break
                t = labeledge_v[bs]
                bt = inblossom[t]
                assert label[bt] == 2
                s = labeledge_v[bt]
                j = labeledge_w[bt]
                assert base[bt] == t
                if bt >= nvert:
                    augment_blossom(bt, j)
                mate[j] = s

    # Per-vertex dual initialization keeps all slacks non-negative and makes
    # mutual-argmax edges tight; greedily matching those cuts the stage count.
    for v in range(nvert):
        best = -np.inf
        for w in range(nvert):
            if w != v and profit[v, w] > best:
                best = profit[v, w]
        dualvar[v] = best
    for v in range(nvert):
        if mate[v] < 0:
            for w in range(v + 1, nvert):
                if mate[w] < 0 and dualvar[v] + dualvar[w] - 2.0 * profit[v, w] <= tol:
                    mate[v] = w
                    mate[w] = v
                    break

    while True:  # stages
        label[:] = 0
        labeledge_v[:] = -1
        labeledge_w[:] = -1
        bestedge_v[:] = -1
        bestedge_w[:] = -1
        allow[:, :] = 0
        qn_arr[0] = 0
        for v in range(nvert):
            if mate[v] == -1 and label[inblossom[v]] == 0:
                assign_label(v, 1, -1)
        augmented = False
        while True:  # substages
            while qn_arr[0] > 0 and not augmented:
                qn_arr[0] -= 1
                v = queue[qn_arr[0]]
                assert label[inblossom[v]] == 1
                for w in range(nvert):
                    if w == v:
                        continue
                    bv = inblossom[v]
                    bw = inblossom[w]
                    if bv == bw:
                        continue
                    kslack = 0.0
                    if allow[v, w] == 0:
                        kslack = slack(v, w)
                        if kslack <= tol:
                            allow[v, w] = 1
                            allow[w, v] = 1
                    if allow[v, w] == 1:
                        if label[bw] == 0:
                            assign_label(w, 2, v)
                        elif label[bw] == 1:
                            bse = scan_blossom(v, w)
                            if bse >= 0:
                                add_blossom(bse, v, w)
                            else:
                                augment_matching(v, w)
                                augmented = True
                                break
                        elif label[w] == 0:
                            assert label[bw] == 2
                            label[w] = 2
                            labeledge_v[w] = v
                            labeledge_w[w] = w
                    elif label[bw] == 1:
                        if bestedge_v[bv] == -1 or kslack < slack(bestedge_v[bv], bestedge_w[bv]):
                            bestedge_v[bv] = v
                            bestedge_w[bv] = w
                    elif label[w] == 0:
                        if bestedge_v[w] == -1 or kslack < slack(bestedge_v[w], bestedge_w[w]):
                            bestedge_v[w] = v
                            bestedge_w[w] = w
            if augmented:
                break

            # Dual adjustment; perfect matching wants max-cardinality rules,
            # so delta1 only fires as the final no-progress fallback.
            deltatype = -1
            delta = 0.0
            de_v = -1
            de_w = -1
            db = -1
            for v in range(nvert):
                if label[inblossom[v]] == 0 and bestedge_v[v] >= 0:
                    d = slack(bestedge_v[v], bestedge_w[v])
                    if deltatype == -1 or d < delta:
                        delta = d
                        deltatype = 2
                        de_v = bestedge_v[v]
                        de_w = bestedge_w[v]
            for b in range(nslots):
                if parent[b] == -1 and label[b] == 1 and bestedge_v[b] >= 0:
                    d = slack(bestedge_v[b], bestedge_w[b]) / 2.0
                    if deltatype == -1 or d < delta:
                        delta = d
                        deltatype = 3
                        de_v = bestedge_v[b]
                        de_w = bestedge_w[b]
            for b in range(nvert, nslots):
                if base[b] >= 0 and parent[b] == -1 and label[b] == 2:
                    if deltatype == -1 or blossomdual[b] < delta:
                        delta = blossomdual[b]
                        deltatype = 4
                        db = b
            if deltatype == -1:
                deltatype = 1
                mind = dualvar[0]
                for v in range(1, nvert):
                    if dualvar[v] < mind:
                        mind = dualvar[v]
                delta = mind if mind > 0.0 else 0.0
            if delta < 0.0:
                delta = 0.0

            for v in range(nvert):
                lb = label[inblossom[v]]
                if lb == 1:
                    dualvar[v] -= delta
                elif lb == 2:
                    dualvar[v] += delta
            for b in range(nvert, nslots):
                if base[b] >= 0 and parent[b] == -1:
                    if label[b] == 1:
                        blossomdual[b] += delta
                    elif label[b] == 2:
                        blossomdual[b] -= delta

            if deltatype == 1:
                break
            elif deltatype == 2:
                allow[de_v, de_w] = 1
                allow[de_w, de_v] = 1
                assert label[inblossom[de_v]] == 1
                queue_push(de_v)
            elif deltatype == 3:
                allow[de_v, de_w] = 1
                allow[de_w, de_v] = 1
                assert label[inblossom[de_v]] == 1
                queue_push(de_v)
            else:
                expand_blossom(db, False)

        if not augmented:
            break

        # End of stage: expand S-blossoms whose dual fell to zero.
        for b in range(nvert, nslots):
            if base[b] >= 0 and parent[b] == -1 and label[b] == 1 and blossomdual[b] <= tol:
                expand_blossom(b, True)

    return mate, dualvar, blossomdual, parent, base, childs, childs_n


_kernel_dispatch = jit_or_py(_kernel)


def solve_max_profit(profit: np.ndarray, tol: float):
    """Run the kernel on a profit matrix; see module docstring for outputs."""
    p = np.ascontiguousarray(profit, dtype=np.float64)
    return _kernel_dispatch(p, float(tol))
