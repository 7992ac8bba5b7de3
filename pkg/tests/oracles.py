"""Independent dense reference implementations used as test oracles.

Everything here works on plain dense ``(S, S, M)`` arrays indexed ``[y, x]``
and in float64, with no knowledge of rows, pointers or ground states.
"""

import itertools

import numpy as np


def relu(x):
    return np.maximum(x, 0.0)


def leaky3(x):
    return np.where(x >= 0, x, x / 3.0)


ACT = {"relu": relu, "leaky3": leaky3, "none": lambda x: x}


def dense_conv(x, weights, biases, f, act="none"):
    """Valid convolution, stride 1; weights ``(f*f*M, out)`` in row-major (dy, dx) blocks."""
    s, _, m = x.shape
    o = s - f + 1
    w = np.asarray(weights, dtype=np.float64).reshape(f, f, m, -1)
    out = np.zeros((o, o, w.shape[-1])) + np.asarray(biases, dtype=np.float64)
    for dy in range(f):
        for dx in range(f):
            out += x[dy:dy + o, dx:dx + o] @ w[dy, dx]
    return ACT[act](out)


def dense_pool(x):
    s = x.shape[0] // 2
    return x[:2 * s, :2 * s].reshape(s, 2, s, 2, -1).max(axis=(1, 3))


def dense_conv_loops(x, weights, biases, f):
    """Naive quadruple loop, used to cross-check ``dense_conv`` itself."""
    s, _, m = x.shape
    o = s - f + 1
    out = np.zeros((o, o, weights.shape[1]))
    for y in range(o):
        for xx in range(o):
            patch = x[y:y + f, xx:xx + f].reshape(-1)
            out[y, xx] = patch @ weights + biases
    return out


def dilate(mask, f):
    """Boolean oracle for a valid ``f x f`` conv: output active iff any input in the window is."""
    s = mask.shape[0]
    o = s - f + 1
    out = np.zeros((o, o), dtype=bool)
    for y in range(o):
        for x in range(o):
            out[y, x] = mask[y:y + f, x:x + f].any()
    return out


def halve(mask):
    s = mask.shape[0] // 2
    out = np.zeros((s, s), dtype=bool)
    for y in range(s):
        for x in range(s):
            out[y, x] = mask[2 * y:2 * y + 2, 2 * x:2 * x + 2].any()
    return out


def dense_network_logits(spec, params, x):
    """Logits of a whole network evaluated densely in float64 (test mode)."""
    h = np.asarray(x, dtype=np.float64)
    ws = [np.asarray(w, dtype=np.float64) for w in params.weights]
    bs = [np.asarray(b, dtype=np.float64) for b in params.biases]
    i = 0
    for l in spec.layers:
        if l.kind == "conv":
            h = dense_conv(h, ws[i], bs[i], l.filter_size, l.activation)
            i += 1
        elif l.kind == "pool":
            h = dense_pool(h)
        else:
            return h.reshape(-1) @ ws[i] + bs[i]
    raise AssertionError("no output layer")


def dense_loss(spec, params, x, label):
    z = dense_network_logits(spec, params, x)
    z = z - z.max()
    return float(np.log(np.exp(z).sum()) - z[label])


def finite_difference(spec, params, x, label, which, step=1e-3):
    """Central differences of the dense float64 loss for every entry of ``params.arrays()[which]``."""
    p64 = params.astype(np.float64)
    arr = p64.arrays()[which]
    grad = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        old = arr[idx]
        arr[idx] = old + step
        up = dense_loss(spec, p64, x, label)
        arr[idx] = old - step
        down = dense_loss(spec, p64, x, label)
        arr[idx] = old
        grad[idx] = (up - down) / (2 * step)
    return grad


def enumerate_paths(spec):
    """Brute-force path counts: walk every route from each output-side site down to the input.

    Only practical for tiny networks.
    """
    steps = []
    for l in spec.layers:
        if l.kind == "conv" and l.filter_size > 1:
            steps.append(("conv", l.filter_size))
        elif l.kind == "pool":
            steps.append(("pool", 2))
    s = spec.input_size
    counts = np.zeros((s, s), dtype=np.int64)

    def descend(level, y, x):
        if level < 0:
            counts[y, x] += 1
            return
        kind, f = steps[level]
        scale = 1 if kind == "conv" else 2
        for dy, dx in itertools.product(range(f), repeat=2):
            descend(level - 1, scale * y + dy, scale * x + dx)

    descend(len(steps) - 1, 0, 0)
    return counts


def random_mask(rng, size, density):
    return rng.random((size, size)) < density


def random_grid(rng, size, m, density=0.3, ground=None, dtype=np.float32):
    """A ``SparseGrid`` with a random active set and random active rows."""
    from sparsecnn.grid import SparseGrid

    mask = random_mask(rng, size, density)
    ys, xs = np.nonzero(mask)
    perm = rng.permutation(len(xs))
    rows = rng.normal(size=(len(xs), m)).astype(dtype)
    return SparseGrid.from_sites(size, xs[perm], ys[perm], rows, ground)
