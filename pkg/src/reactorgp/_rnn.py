"""Two-layer tanh RNN kernels: forward, loss and BPTT gradient.

Inputs are (B, L, n_in) sequences where the last F steps carry only the
action part (state inputs zeroed). Outputs are read at those last F steps.
Two interchangeable implementations: batched numpy (``*_np``) and a
time-major variant compiled by numba (``*_nb``); :func:`forward` and :func:`loss_and_grad`
pick one according to :data:`reactorgp._accel.USE_NUMBA`.
"""
import numpy as np

from . import _accel
from ._accel import maybe_njit


def param_shapes(n_in, n1, n2, n_out):
    return [(n1, n_in), (n1, n1), (n1,), (n2, n1), (n2, n2), (n2,), (n_out, n2), (n_out,)]


def param_count(n_in, n1, n2, n_out):
    return sum(int(np.prod(s)) for s in param_shapes(n_in, n1, n2, n_out))


def unpack(theta, n_in, n1, n2, n_out):
    out, pos = [], 0
    for shape in param_shapes(n_in, n1, n2, n_out):
        size = int(np.prod(shape))
        out.append(theta[pos:pos + size].reshape(shape))
        pos += size
    return out


# ---------------------------------------------------------------------------
# numpy path

def _forward_np(theta, X, F, dims, keep=False):
    W1, U1, b1, W2, U2, b2, Wo, bo = unpack(theta, *dims)
    B, L, _ = X.shape
    n1, n2 = dims[1], dims[2]
    h1 = np.zeros((B, L, n1))
    h2 = np.zeros((B, L, n2))
    p1 = np.zeros((B, n1))
    p2 = np.zeros((B, n2))
    for t in range(L):
        p1 = np.tanh(X[:, t] @ W1.T + p1 @ U1.T + b1)
        p2 = np.tanh(p1 @ W2.T + p2 @ U2.T + b2)
        h1[:, t] = p1
        h2[:, t] = p2
    y = h2[:, L - F:] @ Wo.T + bo
    if keep:
        return y, (h1, h2)
    return y


def _loss_grad_np(theta, X, Y, dims):
    B, F, n_out = Y.shape
    L = X.shape[1]
    W1, U1, b1, W2, U2, b2, Wo, bo = unpack(theta, *dims)
    y, (h1, h2) = _forward_np(theta, X, F, dims, keep=True)
    diff = y - Y
    scale = 1.0 / (B * F * n_out)
    loss = float(np.sum(diff * diff) * scale)
    dy = 2.0 * scale * diff

    grad = np.zeros_like(theta)
    gW1, gU1, gb1, gW2, gU2, gb2, gWo, gbo = unpack(grad, *dims)
    gWo += np.einsum("bfo,bfh->oh", dy, h2[:, L - F:])
    gbo += dy.sum(axis=(0, 1))
    dh2_out = np.zeros_like(h2)
    dh2_out[:, L - F:] = dy @ Wo

    c1 = np.zeros((B, dims[1]))
    c2 = np.zeros((B, dims[2]))
    zero1 = np.zeros((B, dims[1]))
    zero2 = np.zeros((B, dims[2]))
    for t in range(L - 1, -1, -1):
        prev1 = h1[:, t - 1] if t > 0 else zero1
        prev2 = h2[:, t - 1] if t > 0 else zero2
        dz2 = (dh2_out[:, t] + c2) * (1.0 - h2[:, t] ** 2)
        gW2 += dz2.T @ h1[:, t]
        gU2 += dz2.T @ prev2
        gb2 += dz2.sum(axis=0)
        c2 = dz2 @ U2
        dz1 = (dz2 @ W2 + c1) * (1.0 - h1[:, t] ** 2)
        gW1 += dz1.T @ X[:, t]
        gU1 += dz1.T @ prev1
        gb1 += dz1.sum(axis=0)
        c1 = dz1 @ U1
    return loss, grad


# ---------------------------------------------------------------------------
# numba path

@maybe_njit
def _offsets(n_in, n1, n2, n_out):
    o = np.zeros(9, dtype=np.int64)
    sizes = (n1 * n_in, n1 * n1, n1, n2 * n1, n2 * n2, n2, n_out * n2, n_out)
    for i in range(8):
        o[i + 1] = o[i] + sizes[i]
    return o


@maybe_njit
def _unpack_t(theta, n_in, n1, n2, n_out):
    """Transposed contiguous weight copies plus biases."""
    o = _offsets(n_in, n1, n2, n_out)
    W1T = theta[o[0]:o[1]].reshape((n1, n_in)).T.copy()
    U1T = theta[o[1]:o[2]].reshape((n1, n1)).T.copy()
    W2T = theta[o[3]:o[4]].reshape((n2, n1)).T.copy()
    U2T = theta[o[4]:o[5]].reshape((n2, n2)).T.copy()
    WoT = theta[o[6]:o[7]].reshape((n_out, n2)).T.copy()
    return (W1T, U1T, theta[o[2]:o[3]].copy(), W2T, U2T, theta[o[5]:o[6]].copy(),
            WoT, theta[o[7]:o[8]].copy())


@maybe_njit
def _unroll_nb(theta, X, n_in, n1, n2, n_out):
    B, L = X.shape[0], X.shape[1]
    W1T, U1T, b1, W2T, U2T, b2, WoT, bo = _unpack_t(theta, n_in, n1, n2, n_out)
    # time-major, with a zero row for the initial hidden state
    Xt = np.empty((L, B, n_in))
    for t in range(L):
        Xt[t] = X[:, t, :]
    h1 = np.zeros((L + 1, B, n1))
    h2 = np.zeros((L + 1, B, n2))
    for t in range(L):
        h1[t + 1] = np.tanh(Xt[t] @ W1T + h1[t] @ U1T + b1)
        h2[t + 1] = np.tanh(h1[t + 1] @ W2T + h2[t] @ U2T + b2)
    return Xt, h1, h2


@maybe_njit
def _forward_nb(theta, X, F, n_in, n1, n2, n_out):
    B, L = X.shape[0], X.shape[1]
    Xt, h1, h2 = _unroll_nb(theta, X, n_in, n1, n2, n_out)
    o = _offsets(n_in, n1, n2, n_out)
    WoT = theta[o[6]:o[7]].reshape((n_out, n2)).T.copy()
    bo = theta[o[7]:o[8]]
    y = np.empty((B, F, n_out))
    for f in range(F):
        y[:, f, :] = h2[L - F + f + 1] @ WoT + bo
    return y


@maybe_njit
def _loss_grad_nb(theta, X, Y, n_in, n1, n2, n_out):
    B, L = X.shape[0], X.shape[1]
    F = Y.shape[1]
    o = _offsets(n_in, n1, n2, n_out)
    W1T, U1T, b1, W2T, U2T, b2, WoT, bo = _unpack_t(theta, n_in, n1, n2, n_out)
    Xt, h1, h2 = _unroll_nb(theta, X, n_in, n1, n2, n_out)
    W2 = W2T.T.copy()
    U2 = U2T.T.copy()
    U1 = U1T.T.copy()
    Wo = WoT.T.copy()
    gW1 = np.zeros((n_in, n1))
    gU1 = np.zeros((n1, n1))
    gb1 = np.zeros(n1)
    gW2 = np.zeros((n1, n2))
    gU2 = np.zeros((n2, n2))
    gb2 = np.zeros(n2)
    gWo = np.zeros((n2, n_out))
    gbo = np.zeros(n_out)
    scale = 1.0 / (B * F * n_out)
    loss = 0.0
    c1 = np.zeros((B, n1))
    c2 = np.zeros((B, n2))
    for t in range(L - 1, -1, -1):
        g2 = c2.copy()
        f = t - (L - F)
        if f >= 0:
            d = h2[t + 1] @ WoT + bo - Y[:, f, :]
            loss += np.sum(d * d)
            dy = 2.0 * scale * d
            gWo += h2[t + 1].T @ dy
            gbo += dy.sum(axis=0)
            g2 += dy @ Wo
        dz2 = g2 * (1.0 - h2[t + 1] ** 2)
        gW2 += h1[t + 1].T @ dz2
        gU2 += h2[t].T @ dz2
        gb2 += dz2.sum(axis=0)
        c2 = dz2 @ U2
        dz1 = (dz2 @ W2 + c1) * (1.0 - h1[t + 1] ** 2)
        gW1 += Xt[t].T @ dz1
        gU1 += h1[t].T @ dz1
        gb1 += dz1.sum(axis=0)
        c1 = dz1 @ U1
    grad = np.empty(theta.shape[0])
    grad[o[0]:o[1]] = gW1.T.copy().ravel()
    grad[o[1]:o[2]] = gU1.T.copy().ravel()
    grad[o[2]:o[3]] = gb1
    grad[o[3]:o[4]] = gW2.T.copy().ravel()
    grad[o[4]:o[5]] = gU2.T.copy().ravel()
    grad[o[5]:o[6]] = gb2
    grad[o[6]:o[7]] = gWo.T.copy().ravel()
    grad[o[7]:o[8]] = gbo
    return loss * scale, grad


def cell_step(theta, x, h1, h2, dims):
    """One recurrent step on a (B, n_in) input; returns (h1, h2, y).

    Lets closed-loop rollouts carry the hidden state instead of re-running
    the whole unroll for every new action.
    """
    W1, U1, b1, W2, U2, b2, Wo, bo = unpack(theta, *dims)
    h1 = np.tanh(x @ W1.T + h1 @ U1.T + b1)
    h2 = np.tanh(h1 @ W2.T + h2 @ U2.T + b2)
    return h1, h2, h2 @ Wo.T + bo


# ---------------------------------------------------------------------------
# dispatch

def forward(theta, X, F, dims, use_numba=None):
    use = _accel.USE_NUMBA if use_numba is None else use_numba
    X = np.ascontiguousarray(X, dtype=np.float64)
    if use:
        return _forward_nb(theta, X, F, *dims)
    return _forward_np(theta, X, F, dims)


def loss_and_grad(theta, X, Y, dims, use_numba=None):
    use = _accel.USE_NUMBA if use_numba is None else use_numba
    X = np.ascontiguousarray(X, dtype=np.float64)
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    if use:
        loss, grad = _loss_grad_nb(theta, X, Y, *dims)
        return float(loss), grad
    return _loss_grad_np(theta, X, Y, dims)
