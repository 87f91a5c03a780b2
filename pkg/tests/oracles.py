"""Reference implementations the tests compare against.

Each one is written from the definition, slowly and without reusing the
code path under test.
"""

from fractions import Fraction

import numpy as np


def scalar_alpha(t, k, n_s):
    """clamp(t - k / n_s, 0, 1) on Python floats."""
    a = t - k / n_s
    if a < 0.0:
        return 0.0
    if a > 1.0:
        return 1.0
    return a


def loop_matmul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for r in range(k):
                s += a[i, r] * b[r, j]
            out[i, j] = s
    return out


def central_fd(f, x, eps=1e-6):
    """Central differences of scalar f at every entry of float64 array x."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + eps
        hi = f(x)
        x[idx] = old - eps
        lo = f(x)
        x[idx] = old
        g[idx] = (hi - lo) / (2 * eps)
    return g


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12))


def frechet_1d(mu_p, s_p, mu_q, s_q):
    """Closed form for 1-D Gaussians with standard deviations s_p, s_q."""
    return (mu_p - mu_q) ** 2 + (s_p - s_q) ** 2


def _exact_alpha(step, k, n_s, dt):
    a = step * dt - Fraction(k) / n_s
    return min(max(a, Fraction(0)), Fraction(1))


def offline_replay(denoiser, vae, schedule, n_latents, seed, n_s=4.0, dt=0.05, noise_fn=None):
    """Run the triangular sampler over one buffer holding every frame.

    The whole prompt schedule is known up front, masks are rebuilt from
    alpha at each step, and the committed latents are decoded in one pass at
    the end. Returns (latents (n_latents, 4), motion (4 * n_latents, D)).
    """
    from floodstream.denoiser import MASK_BIAS
    from floodstream.streaming import frame_noise

    noise_fn = noise_fn or (lambda k: frame_noise(seed, k))
    n_s_f = Fraction(n_s).limit_denominator(1_000_000)
    dt_f = Fraction(dt).limit_denominator(1_000_000)
    total = n_latents + int(np.ceil(float(n_s_f))) + 2
    buf = np.stack([noise_fn(k) for k in range(total)]).astype(np.float32)
    H = denoiser.config.context_horizon
    causal = denoiser.config.attn_mode.value == "causal_window"
    vocab = denoiser.vocab.prompts
    P = len(vocab)
    step = 0
    while True:
        alpha_now = [_exact_alpha(step, k, n_s_f, dt_f) for k in range(total)]
        alpha_next = [_exact_alpha(step + 1, k, n_s_f, dt_f) for k in range(total)]
        m = sum(1 for a in alpha_now if a == 1)
        if m >= n_latents:
            break
        updated = [k for k in range(total) if alpha_now[k] < 1 and alpha_next[k] > 0]
        if updated:
            lo = max(0, m - H)
            hi = updated[-1] + 1
            L = hi - lo
            allowed = np.zeros((L, L + P), dtype=bool)
            for i in range(L):
                ki = lo + i
                prompt = schedule.prompt_at(4 * ki + 3)
                allowed[i, L + vocab.index(prompt)] = True
                for j in range(L):
                    kj = lo + j
                    if ki >= m:
                        if kj < m or not causal or kj <= ki:
                            allowed[i, j] = True
                    elif kj <= ki:
                        allowed[i, j] = True
            bias = np.where(allowed, 0.0, MASK_BIAS).astype(np.float32)
            positions = np.arange(L) - (L - 1)
            a = np.array([float(alpha_now[k]) for k in range(lo, hi)])
            v = denoiser.forward(buf[lo:hi][None], a[None], positions[None], bias[None]).value[0]
            for k in updated:
                d = float(alpha_next[k] - alpha_now[k])
                buf[k] = (buf[k].astype(np.float64) + v[k - lo].astype(np.float64) * d).astype(np.float32)
        step += 1
    z = buf[:n_latents]
    motion = vae.decode_array(vae.denormalize(z))
    return z, motion


def directional_probe(build, arrays, direction_seed, eps=1e-6):
    """Compare <grad, d> from the tape with a central difference along d.

    ``build`` maps a list of Nodes to a scalar Node; runs in float64.
    Returns (analytic, numeric).
    """
    from floodstream.numeric import backward, parameter, precision

    rs = np.random.default_rng(direction_seed)
    dirs = [rs.standard_normal(np.shape(a)) for a in arrays]
    with precision(np.float64):
        params = [parameter(np.asarray(a, dtype=np.float64)) for a in arrays]
        backward(build(params))
        analytic = sum(float((p.grad * d).sum()) for p, d in zip(params, dirs) if p.grad is not None)

        def at(sign):
            moved = [parameter(np.asarray(a, dtype=np.float64) + sign * eps * d) for a, d in zip(arrays, dirs)]
            return float(build(moved).value)
        numeric = (at(1) - at(-1)) / (2 * eps)
    return analytic, numeric


def probe_rel_err(analytic, numeric, floor=1e-8):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
