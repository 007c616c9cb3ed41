import numpy as np

from plsfilm.geometry import DataBlock, InteractionBlock, standardize


def random_weights(rng, n):
    w = rng.uniform(0.5, 2.0, n)
    return w / w.sum()


def random_instance(rng, n=None, p=None, J=None, K=None, weighted=True,
                    center=True):
    """Random (zb, xblock, yblock) with optional non-uniform weights."""
    n = n or int(rng.integers(4, 9))
    p = p or int(rng.integers(4, 9))
    J = J or int(rng.integers(1, 5))
    K = K or int(rng.integers(1, 5))
    pw = random_weights(rng, n) if weighted else np.full(n, 1 / n)
    qw = random_weights(rng, p) if weighted else np.full(p, 1 / p)
    X = DataBlock(rng.standard_normal((n, J)), pw)
    Y = DataBlock(rng.standard_normal((p, K)), qw)
    if center:
        X, Y = standardize(X), standardize(Y)
    zb = InteractionBlock(rng.standard_normal((n, p)), pw, qw)
    return zb, X, Y


def centred_orthonormal(rng, w, k):
    """k columns, P-centred and P-orthonormal."""
    n = w.size
    A = np.column_stack([np.ones(n), rng.standard_normal((n, k))])
    sw = np.sqrt(w)[:, None]
    Qm = np.linalg.qr(sw * A)[0]
    return Qm[:, 1:] / sw


def planted_b1(rng):
    """Z = 1.3 + 0.5 f e' + 0.7 e g' + 0.9 f g' with f, g inside X, Y."""
    n, m = 10, 8
    p, q = np.full(n, 1 / n), np.full(m, 1 / m)
    F = centred_orthonormal(rng, p, 2)
    G = centred_orthonormal(rng, q, 2)
    f, g = F[:, 0], G[:, 0]
    Z = (0.5 * np.outer(f, np.ones(m)) + 0.7 * np.outer(np.ones(n), g)
         + 0.9 * np.outer(f, g) + 1.3)
    return InteractionBlock(Z, p, q), DataBlock(F, p), DataBlock(G, q)


def planted_b2(rng):
    """Two factors per side with own effects and a full 2x2 interaction."""
    n, m = 12, 9
    p, q = random_weights(rng, n), random_weights(rng, m)
    F = centred_orthonormal(rng, p, 2)
    G = centred_orthonormal(rng, q, 2)
    b = np.array([0.6, 0.3])
    c = np.array([0.7, 0.2])
    gam = np.array([[1.0, -0.14], [-0.18, 0.4]])
    Z = (3.0 + np.outer(F @ b, np.ones(m)) + np.outer(np.ones(n), G @ c)
         + F @ gam @ G.T)
    zb = InteractionBlock(Z, p, q)
    return zb, DataBlock(F, p), DataBlock(G, q), (F, G, b, c, gam)


def planted_b2_rank1(rng):
    """Z = 0.8 f e' - 0.3 e g' + 1.1 f g' with f, g inside X, Y."""
    n, m = 10, 7
    p, q = np.full(n, 1 / n), np.full(m, 1 / m)
    F = centred_orthonormal(rng, p, 2)
    G = centred_orthonormal(rng, q, 2)
    Z = (0.8 * np.outer(F[:, 0], np.ones(m)) - 0.3 * np.outer(np.ones(n), G[:, 0])
         + 1.1 * np.outer(F[:, 0], G[:, 0]))
    return InteractionBlock(Z, p, q), DataBlock(F, p), DataBlock(G, q), (F, G)


def unsign(model, F, G, p, q):
    """B2 coefficients expressed on the planted factors' orientation."""
    s = np.sign(np.diag(model.subject_basis.scores.T @ (p[:, None] * F)))
    r = np.sign(np.diag(model.object_basis.scores.T @ (q[:, None] * G)))
    return (s * model.subject_effects, r * model.object_effects,
            np.outer(s, r) * model.interaction)


def centred_normed(v, w):
    v = v - w @ v
    return v / np.sqrt(np.sum(w * v * v))


def planted_frequencies(rng, omega=0.05, structural=False):
    """f_im = r_i c_m (1 + omega f_i g_m) with f, g inside the descriptors.

    Returns the frequency table, raw descriptors and the planted (f, g).
    """
    n, m = 9, 7
    r = rng.uniform(1, 3, n)
    r /= r.sum()
    c = rng.uniform(1, 3, m)
    c /= c.sum()
    xraw = rng.standard_normal((n, 3))
    yraw = rng.standard_normal((m, 2))
    if structural:
        xraw, yraw = xraw[:, :1], yraw[:, :1]
    f = centred_normed(xraw @ rng.standard_normal(xraw.shape[1]), r)
    g = centred_normed(yraw @ rng.standard_normal(yraw.shape[1]), c)
    freq = np.outer(r, c) * (1 + omega * np.outer(f, g))
    return freq, xraw, yraw, f, g
