"""Independent straight-line transcriptions of the two rate chains.

Shared oracle for the protocol unit tests and the acceptance gate; kept free
of any imports from the package under test.
"""

import math


def h2(x):
    if x <= 0.0 or x >= 1.0:
        return 0.0
    return -x * math.log2(x) - (1 - x) * math.log2(1 - x)


def chain_oracle_one_way(T, src, det, prm):
    """Straight-line transcription of the one-way rate chain."""
    mus, mu1, mu2 = src.mu_signal, src.mu_decoy1, src.mu_decoy2
    y0, e0, edet = det.background_yield, det.background_error, det.misalignment_error

    def q(mu):
        return y0 - (1 - y0) * math.expm1(-mu * T)

    def eq(mu):
        return e0 * y0 - edet * math.expm1(-mu * T)

    qs, q1, q2 = q(mus), q(mu1), q(mu2)
    es = eq(mus) / qs
    ws, w1, w2 = qs * math.exp(mus), q1 * math.exp(mu1), q2 * math.exp(mu2)
    y0l = max((mu1 * w2 - mu2 * w1) / (mu1 - mu2), 0.0)
    y1l = (mus**2 * (w1 - w2) - (mu1**2 - mu2**2) * (ws - y0l)) \
        / (mus * (mu1 - mu2) * (mus - mu1 - mu2))
    y1l = min(max(y1l, 0.0), 1.0)
    q1l = y1l * mus * math.exp(-mus)
    if y1l > 0.0:
        e1u = (eq(mu1) * math.exp(mu1) - eq(mu2) * math.exp(mu2)) / ((mu1 - mu2) * y1l)
        if not (0.0 <= e1u <= 1.0):
            e1u = 1.0
    else:
        e1u = 1.0
    return prm.q_oneway * (q1l * (1 - h2(min(e1u, 0.5))) - qs * prm.error_correction * h2(es))


def chain_oracle_two_way(T, src, det, prm):
    """Straight-line transcription of the two-way rate chain."""
    mus, mu1, mu2 = src.mu_signal, src.mu_decoy1, src.mu_decoy2
    y0, e0, edet = det.background_yield, det.background_error, det.misalignment_error

    def q(mu):
        return y0 - (1 - y0) * math.expm1(-mu * T)

    def eq(mu):
        return e0 * y0 - edet * math.expm1(-mu * T)

    qs, q1, q2 = q(mus), q(mu1), q(mu2)
    es = eq(mus) / qs
    ws, w1, w2 = qs * math.exp(mus), q1 * math.exp(mu1), q2 * math.exp(mu2)
    cs, c1, c2 = eq(mus) * math.exp(mus), eq(mu1) * math.exp(mu1), eq(mu2) * math.exp(mu2)
    y0l = max((mu1 * w2 - mu2 * w1) / (mu1 - mu2), 0.0)
    y1l = (mus**2 * (w1 - w2) - (mu1**2 - mu2**2) * (ws - y0l)) \
        / (mus * (mu1 - mu2) * (mus - mu1 - mu2))
    y1l = min(max(y1l, 0.0), 1.0)
    y2inf = 1 - (1 - y0) * (1 - T) ** 2
    y1u = min(max((2 * (w1 - w2) - y2inf * (mu1**2 - mu2**2)) / (2 * (mu1 - mu2)), 0.0), 1.0)
    y2l = 2 * mus / (mus * (mu1**2 - mu2**2) - (mu1**3 - mu2**3)) * (
        (w1 - w2) - y1u * (mus**2 * (mu1 - mu2) - (mu1**3 - mu2**3)) / mus**2
        - (mu1**3 - mu2**3) / mus**3 * (ws - y0l))
    y2l = min(max(y2l, 0.0), 1.0)
    q1l = y1l * math.exp(-mus) * mus
    q2l = y2l * math.exp(-mus) * mus**2 / 2
    d3 = (mus - mu1) * (mus - mu2) * (mu1 - mu2)
    if y1l > 0:
        e1 = ((c1 - c2) * (mus**2 - mu2**2) - (cs - c2) * (mu1**2 - mu2**2)) / (y1l * d3)
        if not (0.0 <= e1 <= 1.0):
            e1 = 0.5
    else:
        e1 = 0.5
    if y2l > 0:
        e2 = -2 * ((c1 - c2) * (mus - mu2) - (cs - c2) * (mu1 - mu2)) / (y2l * d3)
        if not (0.0 <= e2 <= 1.0):
            e2 = 0.5
    else:
        e2 = 0.5

    def G(e):
        return math.log2(1 + 4 * e - 4 * e * e) if e < 0.5 else 1.0

    return prm.q_twoway * (q1l * (1 - G(e1)) + q2l * (1 - G(e2))
                           - qs * prm.error_correction * h2(min(es, 0.5)))


