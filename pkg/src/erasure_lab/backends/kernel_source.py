"""Hot numeric kernels, written once in a numba-compilable numpy subset.

Every function here is self-contained (no calls into other module-level
functions) so the numba backend can wrap each one with ``njit`` without
chasing global references. The numpy backend runs the same source as-is,
which is why the bodies stay fully vectorized.

Conventions shared by all kernels:
  params  flat float64 vector; layer l occupies W_l (sizes[l] x sizes[l+1],
          row-major) at w_off[l], then b_l (sizes[l+1]) at b_off[l]
  sizes   int64, layer widths including the input layer (length L+1)
  acts    int64 activation codes per layer: 0 identity, 1 tanh, 2 relu,
          3 sigmoid
  posts   (L+1, B, maxw) post-activation cache, layer 0 = the input;
          only the first sizes[l] columns of row l are meaningful
"""

import numpy as np

ACT_IDENTITY = 0
ACT_TANH = 1
ACT_RELU = 2
ACT_SIGMOID = 3


def mlp_forward(params, sizes, acts, w_off, b_off, x):
    """Batched forward pass; returns the post-activation cache."""
    n_layers = sizes.shape[0] - 1
    batch = x.shape[0]
    maxw = 0
    for i in range(sizes.shape[0]):
        if sizes[i] > maxw:
            maxw = sizes[i]
    posts = np.zeros((n_layers + 1, batch, maxw))
    posts[0, :, : sizes[0]] = x
    for l in range(n_layers):
        n_in = sizes[l]
        n_out = sizes[l + 1]
        a_prev = np.ascontiguousarray(posts[l, :, :n_in])
        w = np.ascontiguousarray(
            params[w_off[l] : w_off[l] + n_in * n_out]
        ).reshape(n_in, n_out)
        b = params[b_off[l] : b_off[l] + n_out]
        z = np.dot(a_prev, w) + b.reshape(1, n_out)
        code = acts[l]
        if code == 1:
            z = np.tanh(z)
        elif code == 2:
            z = np.maximum(z, 0.0)
        elif code == 3:
            z = 1.0 / (1.0 + np.exp(-z))
        posts[l + 1, :, :n_out] = z
    return posts


def mlp_forward_out(params, sizes, acts, w_off, b_off, x):
    """Forward pass without caching; returns only the output batch."""
    n_layers = sizes.shape[0] - 1
    cur = x
    for l in range(n_layers):
        n_in = sizes[l]
        n_out = sizes[l + 1]
        w = np.ascontiguousarray(
            params[w_off[l] : w_off[l] + n_in * n_out]
        ).reshape(n_in, n_out)
        b = params[b_off[l] : b_off[l] + n_out]
        z = np.dot(np.ascontiguousarray(cur), w) + b.reshape(1, n_out)
        code = acts[l]
        if code == 1:
            z = np.tanh(z)
        elif code == 2:
            z = np.maximum(z, 0.0)
        elif code == 3:
            z = 1.0 / (1.0 + np.exp(-z))
        cur = z
    return cur


def mlp_backward(params, sizes, acts, w_off, b_off, posts, dout):
    """Reverse accumulation through the cached forward pass.

    dout is dLoss/d(output post-activation), shape (B, sizes[-1]).
    Returns (flat parameter gradient, dLoss/d(input)).
    """
    n_layers = sizes.shape[0] - 1
    n_params = params.shape[0]
    grads = np.zeros(n_params)
    delta = dout.copy()
    for l in range(n_layers - 1, -1, -1):
        n_in = sizes[l]
        n_out = sizes[l + 1]
        a = np.ascontiguousarray(posts[l + 1, :, :n_out])
        code = acts[l]
        # activation derivatives recovered from post-activation values
        if code == 1:
            delta = delta * (1.0 - a * a)
        elif code == 2:
            delta = delta * np.where(a > 0.0, 1.0, 0.0)
        elif code == 3:
            delta = delta * (a * (1.0 - a))
        a_prev = np.ascontiguousarray(posts[l, :, :n_in])
        gw = np.dot(a_prev.T, np.ascontiguousarray(delta))
        grads[w_off[l] : w_off[l] + n_in * n_out] = gw.ravel()
        grads[b_off[l] : b_off[l] + n_out] = np.sum(delta, axis=0)
        w = np.ascontiguousarray(
            params[w_off[l] : w_off[l] + n_in * n_out]
        ).reshape(n_in, n_out)
        delta = np.dot(np.ascontiguousarray(delta), w.T)
    return grads, delta


def adamw_update(params, grads, m, v, t, lr, beta1, beta2, eps, weight_decay, mask):
    """One AdamW step in place. mask is uint8; 0 entries are left untouched
    (parameters bitwise unchanged, moments frozen). Returns 1 and does
    nothing if any masked-in gradient is non-finite, else 0."""
    idx = np.where(mask != 0)[0]
    g = grads[idx]
    if not np.all(np.isfinite(g)):
        return 1
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    mm = beta1 * m[idx] + (1.0 - beta1) * g
    vv = beta2 * v[idx] + (1.0 - beta2) * g * g
    m[idx] = mm
    v[idx] = vv
    p = params[idx]
    params[idx] = p - lr * ((mm / bc1) / (np.sqrt(vv / bc2) + eps)
                            + weight_decay * p)
    return 0


def ddpm_sampler(params, sizes, acts, w_off, b_off, emb, flags, z, noises, c_scale, c_eps, sigma):
    """Full ancestral sampling loop, t = T .. 1, in place on z.

    emb      (T+1, n_emb) timestep embedding table
    flags    (B, n_flags) conditioning bits as float64
    z        (B, d) initial latent, destroyed
    noises   (T+1, B, d); slot t is the injected noise after step t
             (sigma[1] = 0, so slot 1 never contributes)
    c_scale  (T+1,) 1/sqrt(alpha_t)
    c_eps    (T+1,) beta_t / sqrt(1 - alphabar_t)
    sigma    (T+1,) posterior noise scale
    """
    big_t = c_scale.shape[0] - 1
    batch = z.shape[0]
    d = z.shape[1]
    n_emb = emb.shape[1]
    n_flags = flags.shape[1]
    n_layers = sizes.shape[0] - 1
    x_in = np.empty((batch, d + n_emb + n_flags))
    x_in[:, d + n_emb :] = flags
    for t in range(big_t, 0, -1):
        x_in[:, :d] = z
        x_in[:, d : d + n_emb] = emb[t]
        cur = x_in
        for l in range(n_layers):
            n_in = sizes[l]
            n_out = sizes[l + 1]
            w = np.ascontiguousarray(
                params[w_off[l] : w_off[l] + n_in * n_out]
            ).reshape(n_in, n_out)
            b = params[b_off[l] : b_off[l] + n_out]
            zl = np.dot(np.ascontiguousarray(cur), w) + b.reshape(1, n_out)
            code = acts[l]
            if code == 1:
                zl = np.tanh(zl)
            elif code == 2:
                zl = np.maximum(zl, 0.0)
            elif code == 3:
                zl = 1.0 / (1.0 + np.exp(-zl))
            cur = zl
        z[:, :] = c_scale[t] * (z - c_eps[t] * cur) + sigma[t] * noises[t]
    return z
