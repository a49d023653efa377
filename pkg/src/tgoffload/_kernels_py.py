"""Pure-Python slot kernels; same contract and arithmetic order as _kernels.pyx."""
import math


def rank_pairs(score, ok, out):
    m, n = ok.shape
    counts = [0] * m
    for d in range(m):
        live = [i for i in range(n) if ok[d, i]]
        pairs = [(score[i] + score[j], i, j) for a, i in enumerate(live) for j in live[a + 1:]]
        if not pairs:
            single = live[0] if live else -1
            out[d, :, :] = single
            counts[d] = 1 if live else 0
            continue
        # stable sort keeps lexicographic (i, j) order among equal scores
        pairs.sort(key=lambda p: -p[0])
        counts[d] = min(len(pairs), 3)
        for k in range(3):
            _, i, j = pairs[k] if k < len(pairs) else pairs[0]
            out[d, k, 0] = i
            out[d, k, 1] = j
    return counts


def resolve_slot(cap, load, energy, bw, dist, size, prio, power, m1, m2, alpha1,
                 beta, kappa, chi, gain_ref, eta, n0, branch, accepted):
    branch[...] = 0.0
    accepted[...] = 0
    log2 = math.log2
    for d in range(len(size)):
        if m1[d] < 0:
            continue
        rho = min(beta * int(prio[d]), 1.0)
        single = m1[d] == m2[d]
        for b in range(2):
            if single:
                if b == 1:
                    accepted[d, b] = 1
                    continue
                srv, alpha = m1[d], 1.0
            elif b == 0:
                srv, alpha = m1[d], float(alpha1[d])
            else:
                srv, alpha = m2[d], 1.0 - float(alpha1[d])
            if alpha == 0.0:
                accepted[d, b] = 1
                continue
            h = gain_ref * float(dist[d, srv]) ** -eta
            w = float(bw[srv])
            p_d = float(power[d])
            rate = w * log2(1.0 + p_d * h / (n0 * w))
            if not rate > 0.0:
                continue
            t = alpha * float(size[d]) / rate
            branch[d, b, 0] = t
            branch[d, b, 1] = p_d * t
            c = float(cap[srv])
            f = rho * c * (1.0 - float(load[srv]) / c)
            if not f > 0.0:
                continue
            p = kappa * f ** 3.0
            tc = alpha * float(size[d]) * chi / f
            if float(energy[srv]) < p * tc:
                continue
            branch[d, b, 2] = tc
            branch[d, b, 3] = p * tc
            branch[d, b, 4] = f
            load[srv] += f
            energy[srv] -= p * tc
            accepted[d, b] = 1
