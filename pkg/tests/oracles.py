"""Direct-summation reference implementations used as test oracles."""
import math


def ewma_loop(x, gamma):
    out = [float(x[0])]
    for v in x[1:]:
        out.append(gamma * float(v) + (1 - gamma) * out[-1])
    return out


def slope_sums(t, p):
    """Textbook normal-equation slope from raw sums."""
    n = len(t)
    st = sum(t)
    sp = sum(p)
    stt = sum(a * a for a in t)
    stp = sum(a * b for a, b in zip(t, p))
    return (n * stp - st * sp) / (n * stt - st * st)


def lag1_loop(x):
    n = len(x)
    mu = sum(x) / n
    num = sum((x[k] - mu) * (x[k + 1] - mu) for k in range(n - 1))
    den = sum((v - mu) ** 2 for v in x)
    return num / den


def hann_loop(length):
    return [0.5 - 0.5 * math.cos(2 * math.pi * n / length) for n in range(length)]


def stft_sum_naive(f, W, hop, w):
    """Sum over frames and bins of |sum_n f[m+n] w[n] exp(-j 2 pi k n / (W+1))|."""
    L = W + 1
    total = 0.0
    for m in range(0, len(f) - L + 1, hop):
        for k in range(L):
            re = im = 0.0
            for n in range(L):
                a = f[m + n] * w[n]
                ang = 2 * math.pi * k * n / L
                re += a * math.cos(ang)
                im -= a * math.sin(ang)
            total += math.hypot(re, im)
    return total
